"""Group-scoped hybrid search: keyword + embedding retrieval, multi-task re-ranking, replay-and-judge evaluation."""

__version__ = "0.1.0"
