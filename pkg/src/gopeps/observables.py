"""Spin correlations, staggered magnetization and finite-size extrapolation."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeSpec
from .monte_carlo import Estimator, McParams, run_sampler
from .peps import PepsState

__all__ = [
    "CorrelationResult",
    "spin_correlation",
    "window_sites",
    "staggered_from_correlations",
    "staggered_magnetization",
    "quadratic_extrapolation",
    "write_correlations",
]

SELF_CORRELATION = 0.75


@dataclass
class CorrelationResult:
    """``<S_i . S_j>`` per pair; ``bins`` holds the per-bin means used for errors."""

    pairs: list[tuple[tuple[int, int], tuple[int, int]]]
    values: np.ndarray
    std_errors: np.ndarray
    bins: np.ndarray  # (n_bins, n_pairs)

    def lookup(self, i, j) -> float:
        key = _canonical(i, j)
        for k, p in enumerate(self.pairs):
            if _canonical(*p) == key:
                return float(self.values[k])
        raise KeyError((i, j))


def _canonical(i, j):
    i, j = tuple(i), tuple(j)
    return (i, j) if i <= j else (j, i)


def spin_correlation(state: PepsState, spec: LatticeSpec, pairs, mc: McParams) -> CorrelationResult:
    """Sampled ``<S_i . S_j>`` with the exchange-ratio estimator; ``i == j`` gives 3/4 exactly."""
    pairs = [(tuple(i), tuple(j)) for i, j in pairs]
    for i, j in pairs:
        for site in (i, j):
            if not (0 <= site[0] < spec.rows and 0 <= site[1] < spec.cols):
                raise ValueError(f"site {site} outside the {spec.rows}x{spec.cols} lattice")
    canon = sorted({_canonical(i, j) for i, j in pairs})
    run = run_sampler(state, spec, mc, pairs=canon)
    w, n, _ = run.pair_values.shape
    bins = run.pair_values.reshape(w, n // run.bin_size, run.bin_size, -1).mean(axis=2).reshape(-1, len(canon))
    pos = {p: k for k, p in enumerate(canon)}
    cols = np.array([pos[_canonical(i, j)] for i, j in pairs], dtype=int)
    bins = bins[:, cols]
    values = bins.mean(axis=0)
    errors = np.array([Estimator.from_bins(bins[:, k]).std_error for k in range(len(pairs))])
    diag = np.array([i == j for i, j in pairs])
    values[diag], errors[diag], bins[:, diag] = SELF_CORRELATION, 0.0, SELF_CORRELATION
    return CorrelationResult(pairs, values, errors, bins)


def window_sites(spec: LatticeSpec, margin: int) -> list[tuple[int, int]]:
    rows, cols = spec.rows - 2 * margin, spec.cols - 2 * margin
    if margin < 0 or rows < 1 or cols < 1:
        raise ValueError(f"margin {margin} leaves an empty window on {spec.rows}x{spec.cols}")
    return [(r, c) for r in range(margin, margin + rows) for c in range(margin, margin + cols)]


def staggered_from_correlations(corr: CorrelationResult, sites) -> tuple[float, float]:
    """``(1/N^2) sum_ij (-1)^(p_i + p_j) <S_i . S_j>`` over ``sites``, with its binned error."""
    sites = [tuple(s) for s in sites]
    n = len(sites)
    index = {_canonical(*p): k for k, p in enumerate(corr.pairs)}
    weights = np.zeros(len(corr.pairs))
    for a in sites:
        for b in sites:
            k = index[_canonical(a, b)]
            weights[k] += (-1) ** ((a[0] + a[1] + b[0] + b[1]) % 2)
    per_bin = corr.bins @ weights / n ** 2
    est = Estimator.from_bins(per_bin)
    return float(corr.values @ weights / n ** 2), est.std_error


def staggered_magnetization(state: PepsState, spec: LatticeSpec, window_margin: int, mc: McParams,
                            return_correlations: bool = False):
    """``m_s^2(pi, pi)`` over the central window left after removing ``window_margin`` rows/cols per side."""
    sites = window_sites(spec, window_margin)
    pairs = [(a, b) for k, a in enumerate(sites) for b in sites[k:]]
    corr = spin_correlation(state, spec, pairs, mc)
    value, err = staggered_from_correlations(corr, sites)
    return (value, err, corr) if return_correlations else (value, err)


def quadratic_extrapolation(points, weighted: bool = False) -> tuple[float, float]:
    """Fit ``a + b/L + c/L^2`` and return ``(a, std_error(a))``.

    ``points`` holds ``(L, value, error)`` triples. By default the fit is
    ordinary least squares with the covariance scaled by the residual
    variance; ``weighted=True`` weights by ``1/error^2`` and uses the
    absolute covariance instead.
    """
    pts = [tuple(p) for p in points]
    if len(pts) < 3:
        raise ValueError("quadratic extrapolation needs at least 3 points")
    L = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    err = np.array([p[2] if len(p) > 2 else 0.0 for p in pts], dtype=float)
    if np.unique(L).size < 3:
        raise ValueError("need at least 3 distinct L values")
    x = 1.0 / L
    design = np.column_stack([np.ones_like(x), x, x * x])
    if weighted:
        if np.any(err <= 0):
            raise ValueError("weighted fit needs positive errors")
        w = 1.0 / err
        design, y = design * w[:, None], y * w
    normal = design.T @ design
    if np.linalg.cond(normal) > 1e14:
        raise ValueError("singular design matrix")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    cov = np.linalg.inv(normal)
    dof = len(y) - 3
    if not weighted:
        resid = y - design @ coef
        cov = cov * (float(resid @ resid) / dof if dof > 0 else 0.0)
    return float(coef[0]), float(np.sqrt(max(cov[0, 0], 0.0)))


def write_correlations(path, corr: CorrelationResult) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i_row", "i_col", "j_row", "j_col", "value", "stderr"])
        for (i, j), v, e in zip(corr.pairs, corr.values, corr.std_errors):
            out.writerow([i[0], i[1], j[0], j[1], repr(float(v)), repr(float(e))])
