"""Shared test helpers: simplex lattice enumeration for brute-force oracles."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _compositions(m: int, units: int) -> np.ndarray:
    if m == 1:
        return np.array([[units]], dtype=np.int64)
    blocks = []
    for first in range(units + 1):
        rest = _compositions(m - 1, units - first)
        col = np.full((rest.shape[0], 1), first, dtype=np.int64)
        blocks.append(np.hstack([col, rest]))
    return np.vstack(blocks)


def simplex_lattice(m: int, units: int) -> np.ndarray:
    """All points of the m-simplex with coordinates in multiples of 1/units."""
    return _compositions(m, units) / units


def lattice_units_for(m: int) -> int:
    """Densest affordable lattice per dimension (point counts < ~0.5M)."""
    return {1: 100, 2: 100, 3: 100, 4: 100, 5: 50, 6: 20}[m]


def quadratic_values(points: np.ndarray, Q: np.ndarray, c: np.ndarray) -> np.ndarray:
    """0.5 x'Qx + c'x evaluated for every lattice row."""
    return 0.5 * np.einsum("ij,jk,ik->i", points, Q, points) + points @ c


def round_to_lattice(x: np.ndarray, units: int) -> np.ndarray:
    """Nearest simplex-lattice point by largest-remainder rounding."""
    scaled = x * units
    base = np.floor(scaled).astype(np.int64)
    short = units - base.sum()
    order = np.argsort(-(scaled - base), kind="stable")
    base[order[:short]] += 1
    return base / units


def random_psd_problem(rng: np.random.Generator, m: int, rank: int | None = None,
                       scale: float = 1.0):
    """A random PSD quadratic and linear term."""
    r = rank or int(rng.integers(1, m + 1))
    A = rng.normal(size=(r, m))
    Q = scale * 2.0 * (A.T @ A)
    c = scale * rng.normal(size=m)
    return 0.5 * (Q + Q.T), c
