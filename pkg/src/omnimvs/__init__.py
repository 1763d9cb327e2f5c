"""Omnidirectional multi-view stereo from a four-fisheye rig."""

__version__ = "0.1.0"
