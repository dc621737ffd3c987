"""Multi-view feature compression for feed-forward Gaussian splatting, at desk scale."""

__version__ = "0.1.0"
