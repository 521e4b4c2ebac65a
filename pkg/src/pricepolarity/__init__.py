"""Price-polarity prediction for real estate listings.

Listings are labeled by comparing their price per m2 with similar recent
listings, descriptions are embedded with paragraph vectors, and a
sparsity-aware gradient boosted tree ensemble predicts the label.
"""
from ._accel import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
