from engine.core.commons import *


@dataclass(frozen=True, eq=False)
class UtteranceEmbedding:
    """One utterance: its ids and the L x d matrix of time-pooled per-layer features"""
    utterance_id: int
    speaker_id: int
    content_id: int
    matrix: np.ndarray


@dataclass
class CorpusManifest:
    """Sidecar metadata. label_maps: task -> {utterance_id -> class label}"""
    name: str = ""
    source: str = ""
    label_maps: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "source": self.source,
            "label_maps": {
                task: {str(uid): int(label) for uid, label in labels.items()}
                for task, labels in self.label_maps.items()
            },
        }

    @classmethod
    def from_json(cls, payload: dict) -> "CorpusManifest":
        try:
            label_maps = {
                task: {int(uid): int(label) for uid, label in labels.items()}
                for task, labels in payload.get("label_maps", {}).items()
            }
        except (AttributeError, TypeError, ValueError) as exc:
            raise DataError(f"manifest label maps are malformed: {exc}") from exc
        return cls(name=payload.get("name", ""), source=payload.get("source", ""), label_maps=label_maps)


class Corpus:
    """
    Immutable set of utterance embeddings sharing one (L, d) layout.
    `speakers` is the ordered speaker pool; every record's speaker must be in it.
    """

    def __init__(self, L: int, d: int, speakers: Sequence[int], records: Sequence[UtteranceEmbedding],
                 manifest: Optional[CorpusManifest] = None):
        self.L = int(L)
        self.d = int(d)
        self.speakers = tuple(int(s) for s in speakers)
        self.records = tuple(records)
        self.manifest = manifest if manifest is not None else CorpusManifest()
        self._matrices = None
        self._validate()

    def _validate(self):
        if self.L < 1 or self.d < 1:
            raise DimensionError(f"corpus layout must be positive, got L={self.L}, d={self.d}")
        if len(set(self.speakers)) != len(self.speakers):
            raise DataError("speaker pool contains duplicates")
        pool = set(self.speakers)
        seen = set()
        for rec in self.records:
            if rec.matrix.shape != (self.L, self.d):
                raise DimensionError(
                    f"utterance {rec.utterance_id}: matrix {rec.matrix.shape} does not match corpus ({self.L}, {self.d})"
                )
            if rec.speaker_id not in pool:
                raise DataError(f"utterance {rec.utterance_id}: speaker {rec.speaker_id} is not in the speaker pool")
            if rec.utterance_id in seen:
                raise DataError(f"duplicate utterance id {rec.utterance_id}")
            seen.add(rec.utterance_id)
        if self.records:
            require_finite(self.matrices(), "corpus")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __repr__(self):
        return f"Corpus(L={self.L}, d={self.d}, speakers={len(self.speakers)}, records={len(self.records)})"

    # Column views

    def matrices(self) -> np.ndarray:
        """All matrices stacked as (n_records, L, d) float64, read-only."""
        if self._matrices is None:
            if self.records:
                stacked = np.stack([np.asarray(r.matrix, dtype=np.float64) for r in self.records])
            else:
                stacked = np.zeros((0, self.L, self.d))
            stacked.setflags(write=False)
            self._matrices = stacked
        return self._matrices

    def utterance_ids(self) -> np.ndarray:
        return np.array([r.utterance_id for r in self.records], dtype=np.int64)

    def speaker_ids(self) -> np.ndarray:
        return np.array([r.speaker_id for r in self.records], dtype=np.int64)

    def content_ids(self) -> np.ndarray:
        return np.array([r.content_id for r in self.records], dtype=np.int64)

    # Derivations

    def with_matrices(self, matrices: np.ndarray, name: Optional[str] = None) -> "Corpus":
        """Same ids, pool and labels; new embeddings (the shape of an anonymized copy)."""
        matrices = np.asarray(matrices)
        if matrices.shape != (len(self.records), self.L, self.d):
            raise DimensionError(
                f"replacement matrices {matrices.shape} do not match corpus ({len(self.records)}, {self.L}, {self.d})"
            )
        records = [
            UtteranceEmbedding(r.utterance_id, r.speaker_id, r.content_id, np.array(m, dtype=np.float64))
            for r, m in zip(self.records, matrices)
        ]
        manifest = CorpusManifest(
            name=self.manifest.name if name is None else name,
            source=self.manifest.source,
            label_maps=self.manifest.label_maps,
        )
        return Corpus(self.L, self.d, self.speakers, records, manifest)

    def subset(self, indices) -> "Corpus":
        return Corpus(self.L, self.d, self.speakers, [self.records[int(i)] for i in indices], self.manifest)

    def canonical(self) -> "Corpus":
        """Copy rounded to float32, the precision the .pemb format stores."""
        return self.with_matrices(self.matrices().astype(np.float32).astype(np.float64))

    def labels(self, task: str) -> dict:
        """utterance_id -> label for a task; the speaker task comes from the records themselves."""
        if task in (SID_TASK, "speaker"):
            return {r.utterance_id: r.speaker_id for r in self.records}
        if task not in self.manifest.label_maps:
            known = sorted(self.manifest.label_maps) + [SID_TASK]
            raise ContractError(f"no label map for task {task!r}; known tasks: {known}")
        return self.manifest.label_maps[task]


def pool_time_series(frames) -> np.ndarray:
    """Arithmetic mean of a (T, d) frame sequence over time."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise DimensionError(f"expected (T, d) frames, got shape {frames.shape}")
    if frames.shape[0] == 0:
        raise ContractError("cannot pool an empty frame sequence (T = 0)")
    return frames.mean(axis=0)


def pool_layer_frames(layer_frames: Sequence) -> np.ndarray:
    """Per-layer (T, d) frame sequences -> the (L, d) utterance matrix."""
    if len(layer_frames) == 0:
        raise ContractError("no layers to pool")
    return np.stack([pool_time_series(frames) for frames in layer_frames])
