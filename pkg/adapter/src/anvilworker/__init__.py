"""Subject-side worker speaking wire protocol v1 over stdio."""

from .classify import classify_exception
from .codec import decode, encode
from .serve import Worker, serve

__version__ = "0.1.0"

__all__ = ["Worker", "classify_exception", "decode", "encode", "serve"]
