"""Generation, reranking, and competitive evaluation of dictionary example sentences."""

__version__ = "0.1.0"
