"""HTTP labeling service."""

from .app import create_app, serve, DEFAULT_PORT

__all__ = ["create_app", "serve", "DEFAULT_PORT"]
