"""Sparse fermionic operators on small Fock spaces.

Basis convention: mode ``i`` of an ``n``-mode space is bit ``n - 1 - i`` of the
state index, so integer order equals lexicographic order of occupation tuples.
A configuration ``(n_0, ..., n_{n-1})`` stands for
``(c_0^dag)^{n_0} ... (c_{n-1}^dag)^{n_{n-1}} |0>`` and Jordan-Wigner strings run
over lower-numbered modes.
"""

from functools import lru_cache

import numpy as np
import scipy.sparse as sp


def config_index(occupations):
    """Integer index of an occupation tuple."""
    idx = 0
    for n in occupations:
        idx = (idx << 1) | int(n)
    return idx


@lru_cache(maxsize=None)
def annihilators(n_modes):
    """Return the tuple of CSR annihilation operators ``c_0 .. c_{n-1}``."""
    dim = 1 << n_modes
    idx = np.arange(dim, dtype=np.int64)
    ops = []
    for i in range(n_modes):
        bit = 1 << (n_modes - 1 - i)
        occupied = (idx & bit) != 0
        # parity of the modes that precede i
        before = np.bitwise_count(idx >> (n_modes - i)) if i else np.zeros(dim, dtype=np.uint8)
        sign = np.where(before % 2 == 0, 1.0, -1.0)
        src = idx[occupied]
        op = sp.csr_matrix((sign[occupied], (src ^ bit, src)), shape=(dim, dim))
        op.sum_duplicates()
        ops.append(op)
    return tuple(ops)


def number(c):
    return (c.T @ c).tocsr()


def product(*ops):
    """Left-to-right operator product."""
    out = ops[0]
    for op in ops[1:]:
        out = out @ op
    return out.tocsr()
