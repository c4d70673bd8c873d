"""
Reader/writer for the .pemb embedding corpus format (little-endian):

    magic "PEMB" | u16 version=1 | u16 reserved=0 | u32 L | u32 d | u32 n_speakers | u32 n_records
    n_speakers x u32 speaker_id
    per record: u64 utterance_id | u32 speaker_id | u32 content_id | L*d float32 (layer-major)

An optional sidecar `<stem>.manifest.json` carries name, source and label maps.
"""
import struct

from engine.core.commons import *
from embeddingCorpus.corpus import Corpus, CorpusManifest, UtteranceEmbedding


logger = logging.getLogger(__name__)

MAGIC = b"PEMB"
VERSION = 1
HEADER = struct.Struct("<4sHHIIII")
RECORD_IDS = struct.Struct("<QII")


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.manifest.json")


def write_corpus(corpus: Corpus, path, write_manifest: bool = True) -> None:
    values = corpus.matrices().astype("<f4")
    if not np.all(np.isfinite(values)):
        raise DataError("corpus values overflow or are non-finite at float32 precision")

    chunks = [
        HEADER.pack(MAGIC, VERSION, 0, corpus.L, corpus.d, len(corpus.speakers), len(corpus)),
        np.asarray(corpus.speakers, dtype="<u4").tobytes(),
    ]
    for rec, matrix in zip(corpus.records, values):
        chunks.append(RECORD_IDS.pack(rec.utterance_id, rec.speaker_id, rec.content_id))
        chunks.append(matrix.tobytes(order="C"))

    path = Path(path)
    path.write_bytes(b"".join(chunks))
    if write_manifest:
        manifest_path(path).write_text(json.dumps(corpus.manifest.to_json(), indent=2))
    logger.debug("wrote %d records (L=%d, d=%d) to %s", len(corpus), corpus.L, corpus.d, path)


def read_corpus(path, read_manifest: bool = True) -> Corpus:
    path = Path(path)
    blob = path.read_bytes()

    if len(blob) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} of {HEADER.size} bytes)", offset=len(blob))
    magic, version, reserved, L, d, n_speakers, n_records = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if reserved != 0:
        raise FormatError(f"{path}: reserved field is {reserved}, expected 0", offset=6)
    if L == 0 or d == 0:
        raise FormatError(f"{path}: empty layout L={L}, d={d}", offset=8)

    offset = HEADER.size
    pool_bytes = 4 * n_speakers
    if offset + pool_bytes > len(blob):
        raise FormatError(f"{path}: truncated speaker table ({n_speakers} declared)", offset=offset)
    speakers = np.frombuffer(blob, dtype="<u4", count=n_speakers, offset=offset).tolist()
    offset += pool_bytes

    payload = L * d * 4
    record_size = RECORD_IDS.size + payload
    records = []
    for i in range(n_records):
        if offset + record_size > len(blob):
            raise FormatError(f"{path}: truncated at record {i} of {n_records} declared", offset=offset)
        utterance_id, speaker_id, content_id = RECORD_IDS.unpack_from(blob, offset)
        matrix = np.frombuffer(blob, dtype="<f4", count=L * d, offset=offset + RECORD_IDS.size)
        if not np.all(np.isfinite(matrix)):
            raise DataError(f"{path}: record {i} (utterance {utterance_id}) holds non-finite values at offset {offset}")
        records.append(
            UtteranceEmbedding(utterance_id, speaker_id, content_id, matrix.astype(np.float64).reshape(L, d))
        )
        offset += record_size

    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after {n_records} records", offset=offset)

    manifest = None
    sidecar = manifest_path(path)
    if read_manifest and sidecar.is_file():
        try:
            manifest = CorpusManifest.from_json(json.loads(sidecar.read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{sidecar}: invalid JSON ({exc.msg})", offset=exc.pos) from exc

    logger.debug("read %d records (L=%d, d=%d) from %s", n_records, L, d, path)
    return Corpus(L, d, speakers, records, manifest)
