"""Dense matrix helpers, seeded random streams and orthogonalization.

Matrices are plain 2-D ``float64`` numpy arrays. Every random draw goes
through an :class:`RngStream`, a ``(master_seed, stream_id)`` pair that maps
to a Philox counter-based generator, so the same pair always produces the
same numbers no matter which thread asks or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GS_PIVOT_TOL = 1e-12


class ShapeError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    def __init__(self, row: int):
        super().__init__(f"row {row} is linearly dependent on the rows before it")
        self.row = row


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains NaN or Inf")
    return out


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix product overflowed")
    return out


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def substream(self, key: int) -> "RngStream":
        """Deterministic child stream; distinct keys give independent streams."""
        mixed = np.random.SeedSequence([self.stream_id, key]).generate_state(2, np.uint32)
        return RngStream(self.master_seed, int(mixed[0]) << 32 | int(mixed[1]))


def _check_dims(*dims: int) -> None:
    for n in dims:
        if n < 1:
            raise ShapeError(f"dimensions must be >= 1, got {dims}")


def sample_gaussian(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    _check_dims(rows, cols)
    return rng.generator().standard_normal((rows, cols))


def chi_norms(rng: RngStream, m: int, d: int) -> np.ndarray:
    """``m`` draws from the chi distribution with ``d`` degrees of freedom."""
    _check_dims(m, d)
    return np.sqrt(rng.generator().chisquare(d, size=m))


def gram_schmidt_directions(g) -> np.ndarray:
    """Orthonormalize the rows of ``g`` in order.

    Accepts a single ``(k, d)`` matrix or a stack ``(..., k, d)``; the stacked
    form orthogonalizes every matrix independently. Uses modified
    Gram-Schmidt with one re-orthogonalization pass.
    """
    g = np.array(g, dtype=np.float64)
    if g.ndim < 2:
        raise ShapeError(f"expected at least 2-D input, got shape {g.shape}")
    k, d = g.shape[-2:]
    if k > d:
        raise ShapeError(f"cannot orthogonalize {k} rows in dimension {d}")
    q = np.empty_like(g)
    for i in range(k):
        v = g[..., i, :].copy()
        scale = np.linalg.norm(v, axis=-1)
        for _ in range(2):
            for j in range(i):
                qj = q[..., j, :]
                v -= np.sum(v * qj, axis=-1, keepdims=True) * qj
        nrm = np.linalg.norm(v, axis=-1)
        if np.any(nrm <= GS_PIVOT_TOL * np.maximum(scale, 1.0)):
            raise RankDeficiencyError(i)
        q[..., i, :] = v / nrm[..., None]
    return q
