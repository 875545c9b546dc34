"""Two-phase superpixel change detection for bi-temporal SAR amplitude images."""

__version__ = "0.1.0"

from .pipeline import PipelineConfig, run_full  # noqa: E402,F401
