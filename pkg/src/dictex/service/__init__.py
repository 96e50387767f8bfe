"""HTTP service: pipeline stage execution plus the annotation API."""

from .app import create_app

__all__ = ["create_app"]
