"""Reference model server for the black-box attack wire protocol."""

from .app import ServerConfig, build_app, load_served_model, serve
from .bbox_models import ServedModel, load_bbox_file

__all__ = [
    "ServedModel",
    "ServerConfig",
    "build_app",
    "load_bbox_file",
    "load_served_model",
    "serve",
]
