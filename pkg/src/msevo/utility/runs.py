from typing import List, Tuple

import numpy as np


def runs(mask) -> List[Tuple[int, int]]:
    """
    First and last indices of the runs of ``True`` in ``mask``
    """
    padded = np.concatenate(([False], np.asarray(mask, dtype=bool), [False])).astype(int)
    changes = np.flatnonzero(np.diff(padded))
    return [(int(first), int(last) - 1) for first, last in zip(changes[::2], changes[1::2])]
