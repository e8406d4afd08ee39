"""Dynamic radial MRI reconstruction with a time-dependent deep image prior."""

__version__ = "0.1.0"
