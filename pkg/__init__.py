"""CPRN referring-segmentation workbench."""

__version__ = "0.1.0"
__description__ = "Referring image segmentation with row/column and guided holistic cross-modal interaction"

__all__ = ["__version__", "__description__"]
