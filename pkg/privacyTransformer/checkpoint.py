"""
PTCK checkpoints (little-endian):

    magic "PTCK" | u16 version=1 | u16 reserved=0 | u32 config_len | config JSON (utf-8)
    u32 n_params, then per parameter:
    u16 name_len | name (utf-8) | u8 ndim | ndim x u32 extents | float32 values (row-major)
"""
import struct

from engine.core.commons import *
from privacyTransformer.model import PrivacyTransformer, PrivacyTransformerConfig


logger = logging.getLogger(__name__)

MAGIC = b"PTCK"
VERSION = 1
HEADER = struct.Struct("<4sHHI")


def save(model: PrivacyTransformer, path) -> None:
    config_blob = json.dumps(model.config.to_json(), sort_keys=True).encode("utf-8")
    params = model.named_parameters()
    chunks = [HEADER.pack(MAGIC, VERSION, 0, len(config_blob)), config_blob, struct.pack("<I", len(params))]
    for name, p in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
        chunks.append(p.data.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))
    logger.info("saved checkpoint (%d parameters) to %s", model.num_parameters(), path)


class _Reader:
    """Bounds-checked cursor over a checkpoint blob"""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.blob):
            raise FormatError(f"{self.path}: truncated while reading {what}", offset=self.offset)
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load(path) -> PrivacyTransformer:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)

    magic, version, reserved, config_len = reader.unpack(HEADER.format, "header")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)

    config_at = reader.offset
    try:
        config = PrivacyTransformerConfig(**json.loads(reader.take(config_len, "config").decode("utf-8")))
        model = PrivacyTransformer(config)
    except (json.JSONDecodeError, UnicodeDecodeError, TypeError, ConfigError) as exc:
        raise FormatError(f"{path}: unreadable model config ({exc})", offset=config_at) from exc

    expected = model.named_parameters()
    (n_params,) = reader.unpack("<I", "parameter count")
    if n_params != len(expected):
        raise FormatError(f"{path}: {n_params} parameters stored, config needs {len(expected)}", offset=reader.offset - 4)

    state = {}
    for _ in range(n_params):
        entry_at = reader.offset
        (name_len,) = reader.unpack("<H", "parameter name length")
        name = reader.take(name_len, "parameter name").decode("utf-8", errors="replace")
        (ndim,) = reader.unpack("<B", f"rank of {name!r}")
        shape = reader.unpack(f"<{ndim}I", f"extents of {name!r}")
        if name not in expected or tuple(shape) != expected[name].shape:
            want = expected[name].shape if name in expected else "absent"
            raise FormatError(f"{path}: parameter {name!r} has shape {tuple(shape)}, model expects {want}",
                              offset=entry_at)
        count = int(np.prod(shape))
        values = np.frombuffer(reader.take(4 * count, f"values of {name!r}"), dtype="<f4")
        state[name] = values.astype(np.float64).reshape(shape)

    if reader.offset != len(reader.blob):
        raise FormatError(f"{path}: trailing bytes after parameters", offset=reader.offset)
    model.load_state_dict(state)
    logger.info("loaded checkpoint %s (%d parameters)", path, model.num_parameters())
    return model
