"""Human-in-the-loop QA workbench for tooth segmentation on panoramic radiographs."""

__version__ = "0.1.0"
