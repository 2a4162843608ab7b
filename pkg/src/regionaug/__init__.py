"""Region-navigating image classifier with crop/drop region augmentation."""

__version__ = "0.1.0"
