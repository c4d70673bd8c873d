from engine.core.commons import *
from embeddingCorpus.corpus import Corpus, UtteranceEmbedding


SPLIT_UNITS = ("speaker", "utterance", "stratified")


@dataclass(frozen=True, eq=False)
class ParallelPair:
    """Same content, different speakers: src is converted towards tgt's speaker"""
    src: UtteranceEmbedding
    tgt: UtteranceEmbedding


class PairSampler:
    """
    Draws parallel pairs from a fixed corpus.
    Contents are drawn uniformly among those spoken by at least two speakers,
    then an ordered pair of distinct speakers uniformly among that content's
    speakers, then one record uniformly from each (content, speaker) cell.
    """

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        cells = {}
        for index, rec in enumerate(corpus.records):
            cells.setdefault(rec.content_id, {}).setdefault(rec.speaker_id, []).append(index)

        self.contents = [c for c in sorted(cells) if len(cells[c]) >= 2]
        if not self.contents:
            raise UnsatisfiableError("no content is spoken by two or more speakers; parallel pairs are impossible")
        # Per eligible content: one list of record indices per speaker, speakers sorted
        self._cells = [[cells[c][s] for s in sorted(cells[c])] for c in self.contents]
        self._n_speakers = np.array([len(group) for group in self._cells])

    @property
    def n_eligible(self) -> int:
        return len(self.contents)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """(n, 2) record indices, columns (src, tgt)."""
        content_pos = rng.integers(len(self.contents), size=n)
        k = self._n_speakers[content_pos]
        first = np.floor(rng.random(n) * k).astype(np.int64)
        second = np.floor(rng.random(n) * (k - 1)).astype(np.int64)
        second += second >= first
        pick_src, pick_tgt = rng.random(n), rng.random(n)

        out = np.empty((n, 2), dtype=np.int64)
        for i in range(n):
            group = self._cells[content_pos[i]]
            src_cell, tgt_cell = group[first[i]], group[second[i]]
            out[i, 0] = src_cell[int(pick_src[i] * len(src_cell))]
            out[i, 1] = tgt_cell[int(pick_tgt[i] * len(tgt_cell))]
        return out

    def sample(self, n: int, rng: np.random.Generator) -> list:
        records = self.corpus.records
        return [ParallelPair(records[s], records[t]) for s, t in self.sample_indices(n, rng)]


def sample_parallel_pairs(corpus: Corpus, n: int, rng) -> list:
    return PairSampler(corpus).sample(n, make_rng(rng))


def _allocate(n: int, ratios: np.ndarray) -> np.ndarray:
    """Cut points splitting n items by ratios, exhaustive."""
    bounds = np.floor(np.cumsum(ratios) * n + 0.5).astype(np.int64)
    bounds[-1] = n
    return np.concatenate([[0], bounds])


def split_indices(corpus: Corpus, ratios=(0.8, 0.1, 0.1), unit: str = "utterance", seed=0) -> tuple:
    """
    Record indices of a disjoint, exhaustive (train, val, test) partition.

    unit="speaker" keeps every speaker in exactly one part, "utterance" shuffles
    records freely, and "stratified" splits each speaker's utterances by the
    ratios so every part sees every speaker where counts allow.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios.tolist()}")
    if unit not in SPLIT_UNITS:
        raise ConfigError(f"unknown split unit {unit!r}; expected one of {SPLIT_UNITS}")

    rng = make_rng(seed)
    parts = [[], [], []]
    speakers = corpus.speaker_ids()

    if unit == "speaker":
        groups = rng.permutation(np.unique(speakers))
        cuts = _allocate(len(groups), ratios)
        for part in range(3):
            chosen = np.isin(speakers, groups[cuts[part]:cuts[part + 1]])
            parts[part] = np.flatnonzero(chosen)
    elif unit == "utterance":
        order = rng.permutation(len(corpus))
        cuts = _allocate(len(order), ratios)
        parts = [order[cuts[p]:cuts[p + 1]] for p in range(3)]
    else:
        for speaker in np.unique(speakers):
            order = rng.permutation(np.flatnonzero(speakers == speaker))
            cuts = _allocate(len(order), ratios)
            for part in range(3):
                parts[part].extend(order[cuts[part]:cuts[part + 1]])

    parts = [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
    for name, ratio, part in zip(("train", "val", "test"), ratios, parts):
        if ratio > 0 and part.size == 0:
            raise SplitError(f"{name} part (ratio {ratio}) would be empty with unit={unit!r} on {len(corpus)} records")
    return tuple(parts)


def split(corpus: Corpus, ratios=(0.8, 0.1, 0.1), unit: str = "utterance", seed=0) -> tuple:
    return tuple(corpus.subset(p) for p in split_indices(corpus, ratios, unit, seed))
