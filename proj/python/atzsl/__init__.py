"""Adversarially trained zero-shot learning (C++ core)."""

from ._atzsl import *  # noqa: F401,F403
from ._atzsl import __doc__  # noqa: F401

__version__ = "0.1.0"
