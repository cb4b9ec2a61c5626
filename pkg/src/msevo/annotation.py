from typing import Callable

import numpy as np
from numpy.typing import NDArray

"""
Meant to hint a one-dimensional array of floats (state, adjoint, decision vector...)
"""
Vector = NDArray[np.float64]

"""
Meant to hint a two-dimensional array of floats (Jacobians, sample tables...)
"""
Matrix = NDArray[np.float64]

"""
Meant to hint a callable receiving one-line progress messages
"""
LogLike = Callable[[str], None]
