"""Multi-object tracking on equirectangular panoramas."""
from .geometry import PanoBox, cyclic_iou
from .tracker import Tracker, TrackerConfig

__version__ = "0.1.0"
__all__ = ["PanoBox", "cyclic_iou", "Tracker", "TrackerConfig", "__version__"]
