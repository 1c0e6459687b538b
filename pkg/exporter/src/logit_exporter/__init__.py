"""Bridge from pretrained image classifiers to the logit interchange format."""

from .export import ExportError, ExportJob, export

__version__ = "0.1.0"
