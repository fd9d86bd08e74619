"""Small-t effective Heisenberg model for the meson pseudo-spins."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
import scipy.linalg as sla

from .model import ModelParams

MAX_HEISENBERG_SITES = 16


@dataclass(frozen=True)
class EffectiveHeisenberg:
    """``J * sum_j (s.s - 1)`` in Pauli normalization on an open chain."""

    J: float
    L: int
    M: int

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if not 0 <= self.M <= self.L:
            raise ValueError("need 0 <= M <= L")

    def ground_energy(self):
        return self.J * heisenberg_ground_energy(self.L, self.M)


def effective_coupling(t, g1=1.0, eps=5.0):
    """Second-order exchange ``t^2 / (2 g1^2 + eps)``."""
    denom = 2.0 * g1 * g1 + eps
    if denom == 0:
        raise ZeroDivisionError("2*g1**2 + eps vanishes")
    return t * t / denom


def heisenberg_matrix(L, M):
    """Dense ``sum_j (sx sx + sy sy + sz sz - 1)`` on ``L`` spins with ``M`` up spins.

    Basis states are the sets of up-spin positions in lexicographic order.
    """
    states = list(combinations(range(L), M))
    index = {s: i for i, s in enumerate(states)}
    H = np.zeros((len(states), len(states)))
    for i, ups in enumerate(states):
        up = set(ups)
        for j in range(L - 1):
            a, b = j in up, (j + 1) in up
            if a == b:
                continue
            # sz sz - 1 = -2 on antiparallel pairs; sx sx + sy sy swaps them with weight 2
            H[i, i] -= 2.0
            flipped = tuple(sorted(up ^ {j, j + 1}))
            H[index[flipped], i] += 2.0
    return H


@lru_cache(maxsize=None)
def heisenberg_ground_energy(L, M):
    """Lowest eigenvalue in units of J of the fixed-magnetization sector."""
    if L > MAX_HEISENBERG_SITES:
        raise ValueError(f"L={L} exceeds the cap {MAX_HEISENBERG_SITES}")
    if L < 1 or not 0 <= M <= L:
        raise ValueError("need L >= 1 and 0 <= M <= L")
    H = heisenberg_matrix(L, M)
    return float(sla.eigvalsh(H, subset_by_index=[0, 0])[0])


def pt_prediction(params: ModelParams):
    """Ground energy through second order in ``t``."""
    if params.N_M % 2:
        raise ValueError("the meson picture needs an even matter number")
    J = effective_coupling(params.t, params.g1, params.eps)
    return -(params.L - 1) * params.eps + J * heisenberg_ground_energy(params.L, params.N_M // 2)
