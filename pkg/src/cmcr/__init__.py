"""Complex-spectrogram speech enhancement with contrastive attention and contrastive regularization."""

__version__ = "0.1.0"
