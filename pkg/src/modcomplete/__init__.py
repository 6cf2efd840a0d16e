"""Graph-retrieval modality completion for multimodal item catalogues."""

__version__ = "0.1.0"
