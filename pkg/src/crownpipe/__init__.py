"""crownpipe: object-based tree crown segmentation, labeling and classification."""

__version__ = "0.1.0"
