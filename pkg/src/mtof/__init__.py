"""Display-spoof detection from paired RGB images and time-of-flight depth maps."""

__version__ = "0.1.0"
