"""Minkowski-space geometry on (e, px, py, pz) four-vectors.

Metric signature is (+, -, -, -). All functions accept arrays whose last axis
has length 4 and broadcast over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

METRIC = np.diag([1.0, -1.0, -1.0, -1.0])
_SIGNS = np.array([1.0, -1.0, -1.0, -1.0])

# numerical slack for "physical" four-vectors
MASS_TOL = 1e-6


def as_fourvectors(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape[-1:] != (4,):
        raise ValueError(f"expected trailing dimension 4, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("four-vector components must be finite")
    return arr


def is_physical(v, tol: float = MASS_TOL) -> np.ndarray:
    """True where e >= 0 and the invariant mass squared is not below -tol."""
    arr = as_fourvectors(v)
    return (arr[..., 0] >= 0) & (invariant_mass2(arr) >= -tol)


def mink_inner(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1] - a[..., 2] * b[..., 2] - a[..., 3] * b[..., 3]


def mink_norm2_diff(a, b) -> np.ndarray:
    """Squared Minkowski norm of a - b."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return mink_inner(d, d)


def invariant_mass2(v) -> np.ndarray:
    return mink_inner(v, v)


def psi_n(z):
    """sgn(z) * log(|z| + 1): odd, monotone, compresses large magnitudes."""
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.log1p(np.abs(z))


@dataclass(frozen=True)
class LorentzTransform:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"Lorentz transform must be 4x4, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __matmul__(self, other: LorentzTransform) -> LorentzTransform:
        return LorentzTransform(self.m @ other.m)

    def metric_residual(self) -> float:
        """max |M^T g M - g|; zero for an exact Lorentz transform."""
        return float(np.max(np.abs(self.m.T @ METRIC @ self.m - METRIC)))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.m))

    @classmethod
    def identity(cls) -> LorentzTransform:
        return cls(np.eye(4))


def boost_z(rapidity: float) -> LorentzTransform:
    ch, sh = np.cosh(rapidity), np.sinh(rapidity)
    m = np.eye(4)
    m[0, 0] = m[3, 3] = ch
    m[0, 3] = m[3, 0] = sh
    return LorentzTransform(m)


def rotation(r3: np.ndarray) -> LorentzTransform:
    m = np.eye(4)
    m[1:, 1:] = r3
    return LorentzTransform(m)


def random_lorentz(
    seed: int,
    max_rapidity: float = 2.0,
    *,
    rotate: bool = True,
    improper: bool = False,
) -> LorentzTransform:
    """Draw R2 @ B_z(phi) @ R1 with uniform rotations and phi ~ U(-max, max).

    ``improper=True`` additionally composes a random choice of parity and time
    reversal, leaving the proper orthochronous subgroup.
    """
    if max_rapidity < 0:
        raise ValueError(f"max_rapidity must be non-negative, got {max_rapidity}")
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-max_rapidity, max_rapidity) if max_rapidity > 0 else 0.0
    if rotate:
        r1 = rotation(Rotation.random(random_state=rng).as_matrix())
        r2 = rotation(Rotation.random(random_state=rng).as_matrix())
        t = r2 @ boost_z(phi) @ r1
    else:
        t = boost_z(phi)
    if improper:
        flips = rng.integers(0, 2, size=2)
        d = np.ones(4)
        if flips[0]:
            d[1:] = -1.0
        if flips[1]:
            d[0] = -1.0
        t = LorentzTransform(np.diag(d)) @ t
    return t


def apply_lorentz(t: LorentzTransform, v) -> np.ndarray:
    """Apply ``t`` to one four-vector or a stack of them (rows)."""
    return np.asarray(v, dtype=np.float64) @ t.m.T
