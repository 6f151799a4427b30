"""Stochastic simulation of the spatial peer-to-peer dynamics."""
from ._backend import BACKEND, compiled_available, get_core

__all__ = ["BACKEND", "compiled_available", "get_core"]
