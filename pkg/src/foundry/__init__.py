"""SOTIF dataset foundry: collaborative-agent VQA/caption generation, dataset
packaging, review tooling, evaluation metrics, and gateway benchmarking."""

__version__ = "0.1.0"
