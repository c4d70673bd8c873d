from embeddingCorpus.corpus import Corpus, CorpusManifest, UtteranceEmbedding, pool_layer_frames, pool_time_series
from embeddingCorpus.pemb_io import read_corpus, write_corpus
from embeddingCorpus.sampling import PairSampler, ParallelPair, sample_parallel_pairs, split, split_indices
from embeddingCorpus.synthetic import SyntheticConfig, generate_synthetic
