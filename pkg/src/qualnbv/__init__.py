"""Quality-guided next-best-view exploration on a TSDF map."""

__version__ = "0.1.0"
