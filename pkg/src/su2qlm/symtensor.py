"""Charge-labelled block-sparse tensors for the symmetric MPS.

Bond labels are ``(q, ell)``: ``q`` counts matter fermions to the left of the
bond and ``ell`` is the occupation of the left rishon of the link the bond
crosses.  A site tensor block ``(left, p, right)`` may exist only if

* ``right.q == left.q + n_M(p)``
* ``n_R(p) == 2 - left.ell``
* ``right.ell == n_L(p)``

so the right label is a function of the left label and the physical state.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .model import GaugeSiteBasis

Label = tuple  # (q, ell)


class NullStateError(ArithmeticError):
    """Raised when a factorization meets an identically zero tensor."""


def right_label(basis: GaugeSiteBasis, left: Label, p: int):
    """Label on the right of physical state ``p`` given the left label, or ``None``."""
    if basis.n_R[p] != 2 - left[1]:
        return None
    return (left[0] + int(basis.n_M[p]), int(basis.n_L[p]))


def _space_from(shapes):
    space = {}
    for label, dim in shapes:
        if space.setdefault(label, dim) != dim:
            raise ValueError(f"inconsistent degeneracy for label {label}")
    return dict(sorted(space.items()))


@dataclass
class BlockTensor:
    """Rank-3 site tensor ``(left bond, physical, right bond)``.

    ``blocks`` maps ``(left_label, p, right_label)`` to a real matrix of shape
    ``(deg(left_label), deg(right_label))``.
    """

    basis: GaugeSiteBasis
    blocks: dict = field(default_factory=dict)

    @property
    def left_space(self):
        return _space_from((l, b.shape[0]) for (l, _, _), b in self.blocks.items())

    @property
    def right_space(self):
        return _space_from((r, b.shape[1]) for (_, _, r), b in self.blocks.items())

    def copy(self):
        return BlockTensor(self.basis, {k: v.copy() for k, v in self.blocks.items()})

    def norm(self):
        return float(np.sqrt(sum(np.sum(b * b) for _, b in sorted(self.blocks.items()))))

    def check_selection_rules(self):
        for (l, p, r), block in self.blocks.items():
            if right_label(self.basis, l, p) != r:
                raise AssertionError(f"block {(l, p, r)} violates the selection rules")
        self.left_space, self.right_space  # noqa: B018 - degeneracy consistency

    def by_left(self):
        out = defaultdict(list)
        for (l, p, r), b in sorted(self.blocks.items()):
            out[l].append((p, r, b))
        return out

    def to_dense(self, left_space=None, right_space=None):
        """Dense ``(D_left, d, D_right)`` array; labels laid out in sorted order."""
        left_space = left_space or self.left_space
        right_space = right_space or self.right_space
        lo, Dl = _offsets(left_space)
        ro, Dr = _offsets(right_space)
        out = np.zeros((Dl, self.basis.dim, Dr))
        for (l, p, r), b in self.blocks.items():
            out[lo[l] : lo[l] + b.shape[0], p, ro[r] : ro[r] + b.shape[1]] = b
        return out


def _offsets(space):
    offsets, total = {}, 0
    for label, dim in sorted(space.items()):
        offsets[label] = total
        total += dim
    return offsets, total


@dataclass
class TwoSiteBlock:
    """Rank-4 object ``(left bond, p1, p2, right bond)`` over two neighbouring sites."""

    left_basis: GaugeSiteBasis
    right_basis: GaugeSiteBasis
    blocks: dict = field(default_factory=dict)

    def middle_label(self, l, p1):
        return right_label(self.left_basis, l, p1)

    def norm(self):
        return float(np.sqrt(sum(np.sum(b * b) for _, b in sorted(self.blocks.items()))))

    def to_dense(self, left_space, right_space):
        lo, Dl = _offsets(left_space)
        ro, Dr = _offsets(right_space)
        out = np.zeros((Dl, self.left_basis.dim, self.right_basis.dim, Dr))
        for (l, p1, p2, r), b in self.blocks.items():
            out[lo[l] : lo[l] + b.shape[0], p1, p2, ro[r] : ro[r] + b.shape[1]] = b
        return out


def contract_bond(a: BlockTensor, b: BlockTensor) -> TwoSiteBlock:
    """Blockwise product over the bond shared by ``a`` (left) and ``b`` (right)."""
    if a.right_space != b.left_space:
        raise ValueError("bond spaces of the two tensors do not match")
    b_left = b.by_left()
    out = {}
    for (l, p1, m), x in sorted(a.blocks.items()):
        for p2, r, y in b_left.get(m, ()):
            key = (l, p1, p2, r)
            prod = x @ y
            if key in out:
                out[key] += prod
            else:
                out[key] = prod
    return TwoSiteBlock(a.basis, b.basis, out)


def _svd(M):
    try:
        return sla.svd(M, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        return sla.svd(M, full_matrices=False, lapack_driver="gesvd", check_finite=False)


def _sector_matrices(theta: TwoSiteBlock):
    """Group theta into one matrix per middle label.

    Returns ``{m: (rows, cols, M)}`` with ``rows`` a list of ``(l, p1, dim)`` and
    ``cols`` a list of ``(p2, r, dim)``.
    """
    rows = defaultdict(dict)
    cols = defaultdict(dict)
    for (l, p1, p2, r), blk in theta.blocks.items():
        m = theta.middle_label(l, p1)
        rows[m][(l, p1)] = blk.shape[0]
        cols[m][(p2, r)] = blk.shape[1]
    out = {}
    for m in sorted(rows):
        row_keys = sorted(rows[m].items())
        col_keys = sorted(cols[m].items())
        ro, co = {}, {}
        nr = nc = 0
        for key, d in row_keys:
            ro[key] = nr
            nr += d
        for key, d in col_keys:
            co[key] = nc
            nc += d
        out[m] = (row_keys, col_keys, ro, co, np.zeros((nr, nc)))
    for (l, p1, p2, r), blk in theta.blocks.items():
        m = theta.middle_label(l, p1)
        _, _, ro, co, M = out[m]
        i, j = ro[(l, p1)], co[(p2, r)]
        M[i : i + blk.shape[0], j : j + blk.shape[1]] = blk
    return out


def split_truncate(theta: TwoSiteBlock, chi_max: int, tol: float = 1e-10):
    """Per-sector SVD with a global cut on the Schmidt spectrum.

    Keeps the ``chi_max`` largest singular values over all middle labels and
    drops any value with ``s**2 / sum(s**2) < tol``.  Ties at the cut go to the
    smaller label.  The kept values are renormalized to unit norm.

    Returns
    -------
    left : BlockTensor
        Left-isometric factor.
    schmidt : dict
        ``{middle_label: singular values (descending)}``.
    right : BlockTensor
        Right-isometric factor.
    weight : float
        Discarded weight ``sum(dropped s**2) / sum(s**2)``.
    """
    if chi_max < 1:
        raise ValueError("chi_max must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    sectors = _sector_matrices(theta)
    svds = {}
    candidates = []
    for m, (_, _, _, _, M) in sectors.items():
        U, s, Vh = _svd(M)
        svds[m] = (U, s, Vh)
        candidates.extend((-s[i], m, i) for i in range(len(s)))
    total = sum(float(np.sum(svds[m][1] ** 2)) for m in sorted(svds))
    if total == 0.0:
        raise NullStateError("all singular values vanish")
    candidates.sort()
    keep = defaultdict(int)
    kept_weight = 0.0
    n_kept = 0
    for neg, m, i in candidates[:chi_max]:
        w = neg * neg
        if w == 0.0 or w / total < tol:
            break
        keep[m] += 1
        kept_weight += w
        n_kept += 1
    # summing the dropped values avoids cancellation in total - kept
    weight = sum(neg * neg for neg, _, _ in candidates[n_kept:]) / total
    norm = np.sqrt(kept_weight)

    left, right = {}, {}
    schmidt = {}
    for m in sorted(keep):
        k = keep[m]
        row_keys, col_keys, ro, co, _ = sectors[m]
        U, s, Vh = svds[m]
        schmidt[m] = s[:k] / norm
        for (l, p1), d in row_keys:
            i = ro[(l, p1)]
            left[(l, p1, m)] = U[i : i + d, :k].copy()
        for (p2, r), d in col_keys:
            j = co[(p2, r)]
            right[(m, p2, r)] = Vh[:k, j : j + d].copy()
    return (
        BlockTensor(theta.left_basis, left),
        schmidt,
        BlockTensor(theta.right_basis, right),
        weight,
    )


def _positive_qr(M):
    Q, R = sla.qr(M, mode="economic", check_finite=False)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs, R * signs[:, None]


def isometrize(tensor: BlockTensor, direction: str):
    """Blockwise QR making ``tensor`` a left or right isometry.

    ``direction="left"`` returns ``(A, R)`` with ``sum_{l,p} A^T A = 1`` per right
    label and ``tensor = A @ R`` (``R`` keyed by right label).
    ``direction="right"`` returns ``(B, R)`` with ``sum_{p,r} B B^T = 1`` per left
    label and ``tensor = R @ B`` (``R`` keyed by left label).
    """
    if direction not in ("left", "right"):
        raise ValueError("direction must be 'left' or 'right'")
    if tensor.norm() == 0.0:
        raise NullStateError("cannot isometrize a zero tensor")
    groups = defaultdict(list)
    for (l, p, r), b in sorted(tensor.blocks.items()):
        groups[r if direction == "left" else l].append(((l, p, r), b))
    blocks, residual = {}, {}
    for label in sorted(groups):
        members = groups[label]
        if direction == "left":
            M = np.vstack([b for _, b in members])
            Q, R = _positive_qr(M)
            offset = 0
            for key, b in members:
                blocks[key] = Q[offset : offset + b.shape[0]].copy()
                offset += b.shape[0]
        else:
            M = np.hstack([b for _, b in members])
            Q, R = _positive_qr(M.T)
            R = R.T
            Q = Q.T
            offset = 0
            for key, b in members:
                blocks[key] = Q[:, offset : offset + b.shape[1]].copy()
                offset += b.shape[1]
        residual[label] = R
    return BlockTensor(tensor.basis, blocks), residual


def absorb_right(tensor: BlockTensor, residual: dict) -> BlockTensor:
    """``tensor @ residual`` over the right bond."""
    return BlockTensor(
        tensor.basis,
        {(l, p, r): b @ residual[r] for (l, p, r), b in tensor.blocks.items() if r in residual},
    )


def absorb_left(residual: dict, tensor: BlockTensor) -> BlockTensor:
    """``residual @ tensor`` over the left bond."""
    return BlockTensor(
        tensor.basis,
        {(l, p, r): residual[l] @ b for (l, p, r), b in tensor.blocks.items() if l in residual},
    )


def scale_left(schmidt: dict, tensor: BlockTensor) -> BlockTensor:
    return BlockTensor(
        tensor.basis,
        {(l, p, r): schmidt[l][:, None] * b for (l, p, r), b in tensor.blocks.items()},
    )


def scale_right(tensor: BlockTensor, schmidt: dict) -> BlockTensor:
    return BlockTensor(
        tensor.basis,
        {(l, p, r): b * schmidt[r][None, :] for (l, p, r), b in tensor.blocks.items()},
    )
