"""Roadside vehicle detection, tracking and speed estimation from frame sequences."""

from .errors import ConfigError, ContractError, PNMDecodeError, RoadspeedError, SpecError
from .imgcore import Image, Model, decode_pnm, encode_pnm, to_grayscale, widen_binary

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "PNMDecodeError", "RoadspeedError", "SpecError",
    "Image", "Model", "decode_pnm", "encode_pnm", "to_grayscale", "widen_binary",
]
