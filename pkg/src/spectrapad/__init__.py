"""Multispectral iris presentation-attack detection pipeline.

Per-band vision-transformer feature extraction with spectral conditioning,
class-balanced + contrastive training, mask-aware probability-level band
fusion, ISO 30107-3 style evaluation under a cross-artefact protocol, and
feature-space separability analysis. Ships with a deterministic synthetic
multispectral dataset generator so the whole pipeline is testable end to end.
"""

__version__ = "0.1.0"

from .errors import ConfigError, NumericError, ProtocolError

__all__ = ["ConfigError", "NumericError", "ProtocolError", "__version__"]
