"""Open-boundary square lattice geometry and the J1-J2 Heisenberg couplings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LatticeSpec",
    "Bond",
    "build_bonds",
    "neel_config",
    "classical_energy",
    "spins_to_index",
    "index_to_spins",
]

Site = tuple[int, int]


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice shape and couplings of the J1-J2 model.

    ``rows`` and ``cols`` may be 1 as long as the lattice holds at least two
    sites, so that a single bond (2x1) can be described.
    """

    rows: int
    cols: int
    j1: float = 1.0
    j2: float = 0.0

    def __post_init__(self):
        if int(self.rows) != self.rows or int(self.cols) != self.cols:
            raise TypeError("rows and cols must be integers")
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise ValueError(
                f"lattice {self.rows}x{self.cols} needs at least two sites"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    def sites(self) -> list[Site]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]


@dataclass(frozen=True)
class Bond:
    site_a: Site
    site_b: Site
    coupling: float

    def __post_init__(self):
        if self.site_a == self.site_b:
            raise ValueError("a bond needs two distinct sites")


def build_bonds(spec: LatticeSpec) -> tuple[list[Bond], list[Bond]]:
    """Return ``(nn, nnn)`` bond lists in canonical row-major order.

    Each unordered pair appears once with ``site_a`` preceding ``site_b`` in
    row-major order. NNN bonds are the two diagonals of every plaquette.
    """
    rows, cols = spec.rows, spec.cols
    nn: list[Bond] = []
    nnn: list[Bond] = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                nn.append(Bond((r, c), (r, c + 1), spec.j1))
            if r + 1 < rows:
                nn.append(Bond((r, c), (r + 1, c), spec.j1))
            if r + 1 < rows and c + 1 < cols:
                nnn.append(Bond((r, c), (r + 1, c + 1), spec.j2))
            if r + 1 < rows and c - 1 >= 0:
                nnn.append(Bond((r, c), (r + 1, c - 1), spec.j2))
    return nn, nnn


def _check_config(spec: LatticeSpec, config) -> np.ndarray:
    spins = np.asarray(config)
    if spins.shape != spec.shape:
        raise ValueError(f"config shape {spins.shape} does not match {spec.shape}")
    if not np.all(np.abs(spins) == 1):
        raise ValueError("spins must be +1 or -1")
    return spins


def neel_config(spec: LatticeSpec) -> np.ndarray:
    """Checkerboard configuration with ``+1`` on the (0, 0) sublattice."""
    if spec.n_sites % 2:
        raise ValueError(
            f"{spec.rows}x{spec.cols} has an odd number of sites; no Sz=0 configuration"
        )
    r, c = np.indices(spec.shape)
    return np.where((r + c) % 2 == 0, 1, -1).astype(np.int8)


def classical_energy(spec: LatticeSpec, config) -> float:
    """Diagonal energy ``sum_b J_b s_i s_j / 4`` over NN and NNN bonds."""
    s = _check_config(spec, config).astype(np.int64)
    energy = spec.j1 * (np.sum(s[:, :-1] * s[:, 1:]) + np.sum(s[:-1, :] * s[1:, :]))
    if spec.j2 != 0.0:
        energy += spec.j2 * (
            np.sum(s[:-1, :-1] * s[1:, 1:]) + np.sum(s[:-1, 1:] * s[1:, :-1])
        )
    return float(energy) / 4.0


def spins_to_index(spins) -> np.ndarray:
    """Map ``+1 -> 0`` (up) and ``-1 -> 1`` (down)."""
    return ((1 - np.asarray(spins)) // 2).astype(np.intp)


def index_to_spins(index) -> np.ndarray:
    return (1 - 2 * np.asarray(index)).astype(np.int8)
