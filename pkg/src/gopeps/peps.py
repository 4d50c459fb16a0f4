"""Finite PEPS wave function: construction, bond growth, rescaling, checkpoints."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import LatticeSpec

__all__ = [
    "PHYS_DIM",
    "PepsState",
    "CheckpointError",
    "random_init",
    "grow_bond_dimension",
    "rescale",
    "save_checkpoint",
    "load_checkpoint",
    "site_shape",
]

PHYS_DIM = 2
MAGIC = b"PEPS"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable or corrupt checkpoint files."""


def site_shape(spec: LatticeSpec, r: int, c: int, D: int) -> tuple[int, int, int, int, int]:
    """Shape ``(l, r, u, d, s)`` of the tensor at ``(r, c)``; open edges get 1."""
    return (
        1 if c == 0 else D,
        1 if c == spec.cols - 1 else D,
        1 if r == 0 else D,
        1 if r == spec.rows - 1 else D,
        PHYS_DIM,
    )


@dataclass
class PepsState:
    """Grid of five-index site tensors ``A[r][c]`` with index order (l, r, u, d, s)."""

    spec: LatticeSpec
    bond_dim: int
    tensors: list[list[np.ndarray]] = field(repr=False)

    def __post_init__(self):
        self.validate()

    @property
    def shape(self) -> tuple[int, int]:
        return self.spec.shape

    def validate(self):
        spec = self.spec
        if len(self.tensors) != spec.rows or any(len(row) != spec.cols for row in self.tensors):
            raise ValueError("tensor grid does not match the lattice shape")
        for r in range(spec.rows):
            for c in range(spec.cols):
                t = self.tensors[r][c]
                if t.ndim != 5 or t.shape[4] != PHYS_DIM:
                    raise ValueError(f"site {(r, c)}: expected (l, r, u, d, {PHYS_DIM}), got {t.shape}")
                if c == 0 and t.shape[0] != 1 or c == spec.cols - 1 and t.shape[1] != 1:
                    raise ValueError(f"site {(r, c)}: open horizontal edge must have dimension 1")
                if r == 0 and t.shape[2] != 1 or r == spec.rows - 1 and t.shape[3] != 1:
                    raise ValueError(f"site {(r, c)}: open vertical edge must have dimension 1")
                if not np.any(t):
                    raise ValueError(f"site {(r, c)}: tensor is identically zero")
                if max(t.shape[:4]) > self.bond_dim:
                    raise ValueError(f"site {(r, c)}: bond exceeds D={self.bond_dim}")
                if c + 1 < spec.cols and t.shape[1] != self.tensors[r][c + 1].shape[0]:
                    raise ValueError(f"horizontal bond mismatch at {(r, c)}")
                if r + 1 < spec.rows and t.shape[3] != self.tensors[r + 1][c].shape[2]:
                    raise ValueError(f"vertical bond mismatch at {(r, c)}")

    def copy(self) -> PepsState:
        return PepsState(self.spec, self.bond_dim, [[t.copy() for t in row] for row in self.tensors])

    def with_tensors(self, tensors: list[list[np.ndarray]]) -> PepsState:
        return PepsState(self.spec, self.bond_dim, tensors)

    def spin_major(self) -> list[list[np.ndarray]]:
        """Site tensors with the physical index moved to the front, ``(s, l, r, u, d)``."""
        return [[np.ascontiguousarray(np.moveaxis(t, 4, 0)) for t in row] for row in self.tensors]

    def n_params(self) -> int:
        return sum(t.size for row in self.tensors for t in row)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for row in self.tensors for t in row])

    def from_flat(self, vec: np.ndarray) -> PepsState:
        out, pos = [], 0
        for row in self.tensors:
            new_row = []
            for t in row:
                new_row.append(np.asarray(vec[pos:pos + t.size], dtype=float).reshape(t.shape).copy())
                pos += t.size
            out.append(new_row)
        return self.with_tensors(out)


def random_init(spec: LatticeSpec, D: int, seed: int = 0) -> PepsState:
    """Entries i.i.d. uniform on (-1, 1), drawn site by site in row-major order."""
    if D < 1:
        raise ValueError("bond dimension must be >= 1")
    rng = np.random.default_rng(seed)
    tensors = [
        [rng.uniform(-1.0, 1.0, size=site_shape(spec, r, c, D)) for c in range(spec.cols)]
        for r in range(spec.rows)
    ]
    return PepsState(spec, D, tensors)


def grow_bond_dimension(state: PepsState, new_D: int, noise: float = 1e-3, seed: int = 0) -> PepsState:
    """Zero-pad every virtual bond to ``new_D`` and add uniform noise.

    The noise amplitude is ``noise * max|entry|`` per tensor, so ``noise=0``
    leaves every configuration amplitude unchanged.
    """
    if new_D <= state.bond_dim:
        raise ValueError(f"new bond dimension {new_D} must exceed {state.bond_dim}")
    rng = np.random.default_rng(seed)
    spec = state.spec
    tensors = []
    for r in range(spec.rows):
        row = []
        for c in range(spec.cols):
            old = state.tensors[r][c]
            t = np.zeros(site_shape(spec, r, c, new_D))
            t[tuple(slice(0, n) for n in old.shape)] = old
            if noise:
                t += noise * np.max(np.abs(old)) * rng.uniform(-1.0, 1.0, size=t.shape)
            row.append(t)
        tensors.append(row)
    return PepsState(spec, new_D, tensors)


def rescale(state: PepsState) -> tuple[PepsState, np.ndarray]:
    """Divide each tensor by its max-abs entry; return the factors removed."""
    factors = np.empty(state.shape)
    tensors = []
    for r, row in enumerate(state.tensors):
        new_row = []
        for c, t in enumerate(row):
            m = float(np.max(np.abs(t)))
            if m == 0.0 or not np.isfinite(m):
                raise ValueError(f"cannot rescale site {(r, c)}: max-abs entry is {m}")
            factors[r, c] = m
            new_row.append(t / m)
        tensors.append(new_row)
    return state.with_tensors(tensors), factors


def save_checkpoint(state: PepsState, path) -> None:
    spec = state.spec
    chunks = [MAGIC, struct.pack("<4I", FORMAT_VERSION, spec.rows, spec.cols, PHYS_DIM)]
    for row in state.tensors:
        for t in row:
            chunks.append(struct.pack("<5I", *t.shape))
            chunks.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, j1: float = 1.0, j2: float = 0.0) -> PepsState:
    """Read a checkpoint; couplings are not stored and must be supplied."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, rows, cols, d = struct.unpack_from("<4I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if d != PHYS_DIM:
        raise CheckpointError(f"{path}: physical dimension {d} not supported")
    pos = 20
    tensors = []
    D = 1
    try:
        for _ in range(rows):
            row = []
            for _ in range(cols):
                shape = struct.unpack_from("<5I", data, pos)
                pos += 20
                n = int(np.prod(shape))
                if pos + 8 * n > len(data):
                    raise CheckpointError(f"{path}: truncated tensor data")
                t = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(float).reshape(shape)
                pos += 8 * n
                D = max(D, *shape[:4])
                row.append(t)
            tensors.append(row)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    try:
        return PepsState(LatticeSpec(rows, cols, j1, j2), D, tensors)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
