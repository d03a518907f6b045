"""HTTP scoring service: ImageNet classifier loss and CLIP caption similarity."""

from .app import create_app
from .config import ServiceConfig
from .models import ModelBundle, load_bundle

__version__ = "0.1.0"
