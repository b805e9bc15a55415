"""Quickest detection of a rate change in a Poisson stream with an uncertain post-change rate."""

import os

# The TBB layer is version-sensitive; the portable workqueue layer is enough
# for the flat parallel loops used here.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .errors import DisorderError  # noqa: E402
from .model import ModelParams, Regime, TildePoint, ref_l, ref_s, validate  # noqa: E402

__all__ = ["DisorderError", "ModelParams", "Regime", "TildePoint", "ref_l", "ref_s", "validate"]
__version__ = "0.1.0"
