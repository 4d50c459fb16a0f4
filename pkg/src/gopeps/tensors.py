"""Dense real tensor kernels.

Tensors are plain ``numpy.ndarray`` objects in float64, C (row-major) order.
The helpers here add validation and the truncated factorizations used by the
simple update and the boundary-MPS contraction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SvdResult",
    "contract",
    "svd_truncate",
    "qr_split",
    "permute",
    "batched_tensordot",
]


@dataclass
class SvdResult:
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray
    truncation_error: float

    def reconstruct(self) -> np.ndarray:
        """Multiply the factors back; the result has the original shape."""
        return np.tensordot(
            self.u * self.singular_values, self.vt, axes=([self.u.ndim - 1], [0])
        )


def _axes(axes: Sequence[int], rank: int, name: str) -> list[int]:
    out = []
    for ax in axes:
        if not -rank <= ax < rank:
            raise ValueError(f"axis {ax} out of range for {name} of rank {rank}")
        out.append(ax % rank)
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {name}: {list(axes)}")
    return out


def contract(a: np.ndarray, axes_a: Sequence[int], b: np.ndarray, axes_b: Sequence[int]) -> np.ndarray:
    """Sum over paired axes; free axes of ``a`` come first, then those of ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(axes_a) != len(axes_b):
        raise ValueError("axes_a and axes_b must have the same length")
    ia = _axes(axes_a, a.ndim, "a")
    ib = _axes(axes_b, b.ndim, "b")
    for x, y in zip(ia, ib):
        if a.shape[x] != b.shape[y]:
            raise ValueError(
                f"dimension mismatch: a axis {x} has {a.shape[x]}, b axis {y} has {b.shape[y]}"
            )
    return np.tensordot(a, b, axes=(ia, ib))


def _matricize(t: np.ndarray, split: int) -> tuple[np.ndarray, tuple, tuple]:
    t = np.asarray(t, dtype=float)
    if not 1 <= split < t.ndim:
        raise ValueError(f"split must lie in [1, {t.ndim - 1}], got {split}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite entries")
    left, right = t.shape[:split], t.shape[split:]
    return t.reshape(int(np.prod(left)), int(np.prod(right))), left, right


def svd_truncate(t: np.ndarray, split: int, chi: int) -> SvdResult:
    """Truncated SVD with the first ``split`` axes as rows.

    ``u`` carries the row axes plus the new bond, ``vt`` the new bond plus the
    column axes. Ties at the cut keep LAPACK's output order.
    """
    if chi < 1:
        raise ValueError("chi must be >= 1")
    mat, left, right = _matricize(t, split)
    try:
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        u, s, vt = _svd_fallback(mat)
    keep = min(chi, s.size)
    total = float(np.sum(s * s))
    dropped = float(np.sum(s[keep:] ** 2))
    err = float(np.sqrt(dropped / total)) if total > 0 else 0.0
    return SvdResult(
        u=u[:, :keep].reshape(*left, keep),
        singular_values=s[:keep].copy(),
        vt=vt[:keep].reshape(keep, *right),
        truncation_error=min(err, 1.0),
    )


def _svd_fallback(mat: np.ndarray):
    # gesdd occasionally fails to converge on nearly degenerate input
    import scipy.linalg

    return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def qr_split(t: np.ndarray, split: int) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with the first ``split`` axes as rows."""
    mat, left, right = _matricize(t, split)
    q, r = np.linalg.qr(mat)
    k = q.shape[1]
    return q.reshape(*left, k), r.reshape(k, *right)


def permute(t: np.ndarray, order: Sequence[int]) -> np.ndarray:
    t = np.asarray(t)
    order = list(order)
    if sorted(order) != list(range(t.ndim)):
        raise ValueError(f"{order} is not a permutation of 0..{t.ndim - 1}")
    return np.ascontiguousarray(np.transpose(t, order))


def batched_tensordot(x: np.ndarray, y: np.ndarray, axes: tuple[Sequence[int], Sequence[int]]) -> np.ndarray:
    """``tensordot`` over a shared leading batch axis.

    ``axes`` index the non-batch axes (0 is the first axis after the batch).
    The result is ``(batch, *free_x, *free_y)``. No validation: this is the
    inner loop of the sampler.
    """
    ax, ay = axes
    nx, ny = x.ndim - 1, y.ndim - 1
    fx = [i for i in range(nx) if i not in ax]
    fy = [i for i in range(ny) if i not in ay]
    xs, ys = x.shape[1:], y.shape[1:]
    k = 1
    for i in ax:
        k *= xs[i]
    mx = 1
    for i in fx:
        mx *= xs[i]
    my = 1
    for i in fy:
        my *= ys[i]
    xp = x.transpose([0] + [i + 1 for i in fx] + [i + 1 for i in ax]).reshape(x.shape[0], mx, k)
    yp = y.transpose([0] + [i + 1 for i in ay] + [i + 1 for i in fy]).reshape(y.shape[0], k, my)
    out = np.matmul(xp, yp)
    return out.reshape((x.shape[0],) + tuple(xs[i] for i in fx) + tuple(ys[i] for i in fy))
