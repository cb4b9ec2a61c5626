from typing import Tuple

import numpy as np

from msevo.annotation import Matrix
from msevo.error import DegenerateIntervalError

MESH_TOLERANCE = 1e-12


def hermite_basis(t, a: float, b: float) -> np.ndarray:
    """
    Cubic Hermite shape functions ``(w1, w2, w3, w4)`` on ``[a, b]``

    ``w1``, ``w3`` interpolate the values and ``w2``, ``w4`` the slopes at ``a`` and ``b``. ``t`` may be an array, in which case the result has shape ``(4,) + t.shape``.
    """
    s, h = _normalized(t, a, b)
    return np.array(
        [
            2 * s**3 - 3 * s**2 + 1,
            h * (s**3 - 2 * s**2 + s),
            -2 * s**3 + 3 * s**2,
            h * (s**3 - s**2),
        ]
    )


def hermite_basis_dt(t, a: float, b: float) -> np.ndarray:
    s, h = _normalized(t, a, b)
    return np.array(
        [
            (6 * s**2 - 6 * s) / h,
            3 * s**2 - 4 * s + 1,
            (-6 * s**2 + 6 * s) / h,
            3 * s**2 - 2 * s,
        ]
    )


def hermite_basis_dtt(t, a: float, b: float) -> np.ndarray:
    s, h = _normalized(t, a, b)
    return np.array(
        [
            (12 * s - 6) / h**2,
            (6 * s - 4) / h,
            (-12 * s + 6) / h**2,
            (6 * s - 2) / h,
        ]
    )


def hermite_basis_dnode(t, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Partial derivatives of the shape functions with respect to ``a`` and ``b`` at fixed ``t``
    """
    s, h = _normalized(t, a, b)
    h10 = s**3 - 2 * s**2 + s
    h11 = s**3 - s**2
    dh00 = 6 * s**2 - 6 * s
    dh10 = 3 * s**2 - 4 * s + 1
    dh01 = -6 * s**2 + 6 * s
    dh11 = 3 * s**2 - 2 * s

    da = np.array(
        [
            dh00 * (s - 1) / h,
            -h10 + dh10 * (s - 1),
            dh01 * (s - 1) / h,
            -h11 + dh11 * (s - 1),
        ]
    )
    db = np.array(
        [
            -dh00 * s / h,
            h10 - s * dh10,
            -dh01 * s / h,
            h11 - s * dh11,
        ]
    )
    return da, db


def canonical_modes(t, a: float, alpha: float, beta: float) -> np.ndarray:
    """
    Oscillating modes ``(v1, v2, v3, v4)`` of the canonical system at ``s = t - a``
    """
    s = np.asarray(t, dtype=float) - a
    grow, decay = np.exp(alpha * s), np.exp(-alpha * s)
    sin, cos = np.sin(beta * s), np.cos(beta * s)
    return np.array([grow * sin, grow * cos, decay * sin, decay * cos])


def canonical_modes_ds(t, a: float, alpha: float, beta: float) -> np.ndarray:
    v = canonical_modes(t, a, alpha, beta)
    return np.array(
        [
            alpha * v[0] + beta * v[1],
            alpha * v[1] - beta * v[0],
            -alpha * v[2] + beta * v[3],
            -alpha * v[3] - beta * v[2],
        ]
    )


def canonical_modes_dss(t, a: float, alpha: float, beta: float) -> np.ndarray:
    dv = canonical_modes_ds(t, a, alpha, beta)
    return np.array(
        [
            alpha * dv[0] + beta * dv[1],
            alpha * dv[1] - beta * dv[0],
            -alpha * dv[2] + beta * dv[3],
            -alpha * dv[3] - beta * dv[2],
        ]
    )


def mode_shift(alpha: float, beta: float, d: float) -> Matrix:
    """
    Matrix ``M`` such that ``v(s + d) = M v(s)``
    """
    cos, sin = np.cos(beta * d), np.sin(beta * d)
    grow, decay = np.exp(alpha * d), np.exp(-alpha * d)
    return np.array(
        [
            [grow * cos, grow * sin, 0.0, 0.0],
            [-grow * sin, grow * cos, 0.0, 0.0],
            [0.0, 0.0, decay * cos, decay * sin],
            [0.0, 0.0, -decay * sin, decay * cos],
        ]
    )


def extended_basis(t, a: float, b: float, alpha: float, beta: float) -> np.ndarray:
    """
    Hermite shape functions followed by the four modes corrected to vanish at both ends
    """
    w = hermite_basis(t, a, b)
    v = canonical_modes(t, a, alpha, beta)
    v0, vh = _mode_ends(a, b, alpha, beta)
    corrected = v - np.multiply.outer(v0, w[0]) - np.multiply.outer(vh, w[2])
    return np.concatenate((w, corrected))


def extended_basis_dt(t, a: float, b: float, alpha: float, beta: float) -> np.ndarray:
    dw = hermite_basis_dt(t, a, b)
    dv = canonical_modes_ds(t, a, alpha, beta)
    v0, vh = _mode_ends(a, b, alpha, beta)
    corrected = dv - np.multiply.outer(v0, dw[0]) - np.multiply.outer(vh, dw[2])
    return np.concatenate((dw, corrected))


def extended_basis_dtt(t, a: float, b: float, alpha: float, beta: float) -> np.ndarray:
    dw = hermite_basis_dtt(t, a, b)
    dv = canonical_modes_dss(t, a, alpha, beta)
    v0, vh = _mode_ends(a, b, alpha, beta)
    corrected = dv - np.multiply.outer(v0, dw[0]) - np.multiply.outer(vh, dw[2])
    return np.concatenate((dw, corrected))


def extended_basis_dnode(
    t, a: float, b: float, alpha: float, beta: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Partial derivatives of the extended basis with respect to ``a`` and ``b`` at fixed ``t``

    The modes are measured from ``a``, so they also move with the left node.
    """
    w = hermite_basis(t, a, b)
    dwa, dwb = hermite_basis_dnode(t, a, b)
    dv = canonical_modes_ds(t, a, alpha, beta)
    v0, vh = _mode_ends(a, b, alpha, beta)
    dvh = canonical_modes_ds(b, a, alpha, beta)

    da = (
        -dv
        - np.multiply.outer(v0, dwa[0])
        + np.multiply.outer(dvh, w[2])
        - np.multiply.outer(vh, dwa[2])
    )
    db = (
        -np.multiply.outer(v0, dwb[0])
        - np.multiply.outer(dvh, w[2])
        - np.multiply.outer(vh, dwb[2])
    )
    return np.concatenate((dwa, da)), np.concatenate((dwb, db))


def _mode_ends(a: float, b: float, alpha: float, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    return canonical_modes(a, a, alpha, beta), canonical_modes(b, a, alpha, beta)


def _normalized(t, a: float, b: float) -> Tuple[np.ndarray, float]:
    h = b - a
    if h < MESH_TOLERANCE:
        raise DegenerateIntervalError(f"Interval [{a}, {b}] is too short for a basis")
    return (np.asarray(t, dtype=float) - a) / h, h
