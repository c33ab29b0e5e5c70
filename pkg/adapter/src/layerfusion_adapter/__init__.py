"""Attention-dump adapter: capture probability maps from real diffusion
backends as ATND tensors plus a run manifest the layerfusion analyzer
consumes unchanged."""

from .capture import CaptureBackend, CaptureSpec, capture_run, steps_for_fractions
from .mock import MockBackend

__version__ = "0.1.0"
