"""Weakly-supervised point cloud segmentation with region masking and
masked consistency training, runnable end to end on procedurally
generated indoor scenes."""

__version__ = "0.1.0"

from cpcm.cloud import Aabb, PointCloud, WeakLabels, UNLABELED

__all__ = ["Aabb", "PointCloud", "WeakLabels", "UNLABELED", "__version__"]
