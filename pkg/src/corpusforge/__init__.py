"""corpusforge: harvest a bounded web domain into a Markdown corpus, index it
into a tier-aware vector store, and answer questions through a staged,
budget-controlled orchestration over pluggable generation backends."""

__version__ = "0.1.0"
