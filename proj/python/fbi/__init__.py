# Copyright 2026 The fbitrain Authors
# SPDX-License-Identifier: Apache-2.0
"""Fully binarized transformer training and 1-bit inference.

Thin re-export of the compiled extension. Arrays are float32 numpy arrays;
token ids are int32 arrays of shape [batch, seq].
"""

from ._fbi import *  # noqa: F401,F403
from ._fbi import __doc__  # noqa: F401

__version__ = "0.1.0"
