"""Lyric document embeddings and multi-task music tagging.

Turns song lyrics into fixed-dimensional document embeddings (sparse
baselines, word2vec variants, doc2vec, averaging, attention-probe
aggregation) and evaluates them on multi-label tagging tasks with a
masked multi-task loss, album-grouped stratified splits, and a mean
average precision protocol.
"""

__version__ = "0.1.0"
