"""Image-to-activation-tensor extraction for the co-occurrence pipeline."""

__version__ = "0.1.0"

from .extract import ExtractJob, extract
from .tensor_io import write_cooct
