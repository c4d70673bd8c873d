try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .commons import *
from embeddingCorpus.pemb_io import read_corpus, write_corpus
from harness.experiment import ExperimentConfig
from harness.report import ExperimentReport, emit_report, read_report
from privacyTransformer import checkpoint


logger = logging.getLogger(__name__)


def load_config_file(path) -> ExperimentConfig:
    """TOML or JSON experiment config, chosen by extension; relative paths resolve against its folder."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                payload = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unreadable config ({exc})", offset=getattr(exc, "pos", None)) from exc
    return ExperimentConfig.from_json(payload, base_dir=path.parent)


class ArtifactManager:
    """
    Loads and saves the on-disk artifacts of an experiment workspace.
    Each artifact type lives in its own folder under `root`.
    """

    def __init__(self, root=EXPERIMENTS_PATH):
        self.root = Path(root)

        self.corpora = {}
        self.checkpoints = {}
        self.configs = {}
        self.reports = {}

        self._type_map = {
            'corpus':     {'folder': 'corpora',     'ext': ('.pemb',),         'store': self.corpora,
                           'loader': read_corpus,  'saver': write_corpus},
            'checkpoint': {'folder': 'checkpoints', 'ext': ('.ptck',),         'store': self.checkpoints,
                           'loader': checkpoint.load, 'saver': lambda obj, p: checkpoint.save(obj, p)},
            'config':     {'folder': 'config',      'ext': ('.toml', '.json'), 'store': self.configs,
                           'loader': load_config_file, 'saver': None},
            'report':     {'folder': 'reports',     'ext': ('.json',),         'store': self.reports,
                           'loader': read_report,  'saver': lambda obj, p: emit_report(obj, "json", p)},
        }

    def _entry(self, artifact_type) -> dict:
        if artifact_type not in self._type_map:
            raise ConfigError(f"Unknown artifact type: {artifact_type}")
        return self._type_map[artifact_type]

    def artifact_dir(self, artifact_type) -> Path:
        return self.root / self._entry(artifact_type)['folder']

    def artifact_path(self, key, artifact_type) -> Path:
        """First existing file for key; the primary extension when none exists yet."""
        entry = self._entry(artifact_type)
        for ext in entry['ext']:
            candidate = self.artifact_dir(artifact_type) / f"{key}{ext}"
            if candidate.is_file():
                return candidate
        return self.artifact_dir(artifact_type) / f"{key}{entry['ext'][0]}"

    def list_artifacts(self, artifact_type) -> list:
        folder = self.artifact_dir(artifact_type)
        if not folder.is_dir():
            return []
        extensions = self._entry(artifact_type)['ext']
        return sorted(p.stem for p in folder.iterdir() if p.suffix in extensions and not p.name.endswith('.manifest.json'))

    def load_all(self, artifact_type) -> dict:
        folder = self.artifact_dir(artifact_type)
        if not folder.is_dir():
            raise FileNotFoundError(f"Artifact directory not found: {folder}")
        for key in self.list_artifacts(artifact_type):
            self.load(key, artifact_type)
        return self._entry(artifact_type)['store']

    def get(self, key, artifact_type):
        return self._entry(artifact_type)['store'].get(key)

    def load(self, key, artifact_type):
        path = self.artifact_path(key, artifact_type)
        if not path.is_file():
            raise FileNotFoundError(f"Artifact not found: {path}")
        return self.load_path(path, artifact_type, key)

    def load_path(self, path, artifact_type, key=None):
        """Loads any file of the given type, cached under key (its stem by default)."""
        entry = self._entry(artifact_type)
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"{artifact_type} not found: {path}")
        artifact = entry['loader'](path)
        entry['store'][key or path.stem] = artifact
        logger.debug("loaded %s %s", artifact_type, path)
        return artifact

    def save(self, artifact, key, artifact_type) -> Path:
        entry = self._entry(artifact_type)
        if entry['saver'] is None:
            raise ConfigError(f"{artifact_type} artifacts are read-only")
        path = self.artifact_dir(artifact_type) / f"{key}{entry['ext'][0]}"
        path.parent.mkdir(parents=True, exist_ok=True)
        entry['saver'](artifact, path)
        entry['store'][key] = artifact
        return path

    def unload(self):
        for entry in self._type_map.values():
            entry['store'].clear()
