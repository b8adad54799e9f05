"""Echo reconstruction: simulate room echoes, classify them, repair meshes."""

from .main import main

__all__ = ["main"]
