"""Exact softmax attention and FAVOR+ linear attention.

FAVOR computes ``Q'((K')^T [V | 1])`` right-to-left, so the ``L x L``
attention matrix never exists; the last column of the product is the row
renormalizer. The causal variant replaces the inner product with a prefix
sum over positions.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from favorlab.features import (
    LOG_FLOAT_MAX,
    FeatureMapSpec,
    ProjectionEnsemble,
    Variant,
    apply_feature_map,
    build_ensemble,
)
from favorlab.numerics import RngStream, ShapeError, as_matrix

BYTES_PER_FLOAT = 8
MAX_MATERIALIZED_L = 2 ** 14
# features are mapped in row blocks of about this many floats (1 MiB), keeping
# the exp temporaries inside L2
FEATURE_BLOCK_FLOATS = 2 ** 17


class Mechanism(str, enum.Enum):
    EXACT = "exact"
    FAVOR = "favor"


class Direction(str, enum.Enum):
    BIDIRECTIONAL = "bi"
    UNIDIRECTIONAL = "uni"


class NonPositiveRenormalizerError(ArithmeticError):
    """A row sum of the estimated attention matrix was <= 0."""

    def __init__(self, variant: Variant, value: float, row: int):
        super().__init__(f"NONPOSITIVE_RENORMALIZER: {variant.value} features gave "
                         f"renormalizer {value:.6g} at row {row}")
        self.variant = variant
        self.value = value
        self.row = row


class ResourceGuardError(MemoryError):
    pass


@dataclass(frozen=True)
class AttentionConfig:
    mechanism: Mechanism = Mechanism.FAVOR
    direction: Direction = Direction.BIDIRECTIONAL
    feature_spec: FeatureMapSpec = field(
        default_factory=lambda: FeatureMapSpec(scale_by_d_quarter=True))
    stabilizer: float | None = None
    redraw_every: int = 0
    streaming_prefix: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.stabilizer is None:
            default = 1e-6 if self.feature_spec.variant.is_softmax else 0.0
            object.__setattr__(self, "stabilizer", default)
        if self.stabilizer < 0:
            raise ValueError("stabilizer must be nonnegative")
        if self.redraw_every < 0:
            raise ValueError("redraw_every must be >= 0")


@dataclass(frozen=True)
class AttentionResult:
    output: np.ndarray
    renormalizer_min: float
    wall_time_ns: int
    peak_bytes_estimate: int


def _check_qkv(q, k, v):
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise ShapeError(f"q, k, v must have the same number of rows, got "
                         f"{q.shape[0]}, {k.shape[0]}, {v.shape[0]}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q and k widths differ: {q.shape[1]} vs {k.shape[1]}")
    return q, k, v


def exact_attention(q, k, v, direction: Direction = Direction.BIDIRECTIONAL) -> AttentionResult:
    """``D^-1 A V`` with ``A = exp(QK^T / sqrt(d))``, lower-triangular if causal."""
    t0 = time.perf_counter_ns()
    q, k, v = _check_qkv(q, k, v)
    L, d = q.shape
    a = q @ k.T
    a *= 1.0 / np.sqrt(d)
    if a.max() > LOG_FLOAT_MAX:
        raise OverflowError("exp(QK^T/sqrt(d)) overflows float64")
    np.exp(a, out=a)
    if Direction(direction) is Direction.UNIDIRECTIONAL:
        a = np.tril(a)
    row_sums = a.sum(axis=1)
    out = (a @ v) / row_sums[:, None]
    elapsed = time.perf_counter_ns() - t0
    floats = 2 * L * L + L * (2 * d + 2 * v.shape[1]) + L
    return AttentionResult(out, float(row_sums.min()), elapsed, floats * BYTES_PER_FLOAT)


def _ensemble(d: int, cfg: AttentionConfig, rng: RngStream | None,
              ensemble: ProjectionEnsemble | None) -> ProjectionEnsemble:
    if ensemble is not None:
        return ensemble
    if rng is None:
        raise ValueError("need either an rng stream or a fixed ensemble")
    return build_ensemble(cfg.feature_spec, d, rng)


def _map_rows(spec: FeatureMapSpec, ens: ProjectionEnsemble, x: np.ndarray) -> np.ndarray:
    """Full ``L x r`` feature matrix, filled one cache-sized row block at a time."""
    out = np.empty((x.shape[0], spec.r))
    block = max(1, FEATURE_BLOCK_FLOATS // spec.r)
    for i in range(0, x.shape[0], block):
        out[i:i + block] = apply_feature_map(spec, ens, x[i:i + block])
    return out


def _features(q, k, cfg: AttentionConfig, rng: RngStream | None,
              ensemble: ProjectionEnsemble | None):
    spec = cfg.feature_spec
    ens = _ensemble(q.shape[1], cfg, rng, ensemble)
    return _map_rows(spec, ens, q), _map_rows(spec, ens, k), ens


def _renormalize(buf2: np.ndarray, cfg: AttentionConfig):
    buf3, buf4 = buf2[:, :-1], buf2[:, -1]
    denom = buf4 + cfg.stabilizer
    bad = np.flatnonzero(denom <= 0)
    if bad.size:
        row = int(bad[0])
        raise NonPositiveRenormalizerError(cfg.feature_spec.variant, float(buf4[row]), row)
    return buf3 / denom[:, None], float(buf4.min())


def favor_bidirectional(q, k, v, cfg: AttentionConfig, rng: RngStream | None = None, *,
                        ensemble: ProjectionEnsemble | None = None) -> AttentionResult:
    t0 = time.perf_counter_ns()
    q, k, v = _check_qkv(q, k, v)
    qp, kp, ens = _features(q, k, cfg, rng, ensemble)
    c = np.hstack([v, np.ones((v.shape[0], 1))])
    buf1 = kp.T @ c
    buf2 = qp @ buf1
    out, rmin = _renormalize(buf2, cfg)
    elapsed = time.perf_counter_ns() - t0
    return AttentionResult(out, rmin, elapsed, favor_peak_bytes(q.shape[0], q.shape[1], v.shape[1],
                                                                ens.m, kp.shape[1], cfg))


def favor_unidirectional(q, k, v, cfg: AttentionConfig, rng: RngStream | None = None, *,
                         ensemble: ProjectionEnsemble | None = None) -> AttentionResult:
    t0 = time.perf_counter_ns()
    q, k, v = _check_qkv(q, k, v)
    qp, kp, ens = _features(q, k, cfg, rng, ensemble)
    c = np.hstack([v, np.ones((v.shape[0], 1))])
    if cfg.streaming_prefix:
        running = np.zeros((kp.shape[1], c.shape[1]))
        buf2 = np.empty((q.shape[0], c.shape[1]))
        for i in range(q.shape[0]):
            running += np.outer(kp[i], c[i])
            buf2[i] = qp[i] @ running
    else:
        g_ps = np.cumsum(kp[:, :, None] * c[:, None, :], axis=0)
        # contraction runs over the feature axis of the prefix-sum tensor
        buf2 = np.einsum("lr,lrc->lc", qp, g_ps)
    out, rmin = _renormalize(buf2, cfg)
    elapsed = time.perf_counter_ns() - t0
    return AttentionResult(out, rmin, elapsed, favor_peak_bytes(q.shape[0], q.shape[1], v.shape[1],
                                                                ens.m, kp.shape[1], cfg))


def favor_peak_bytes(L: int, d: int, dv: int, m: int, r: int, cfg: AttentionConfig) -> int:
    """Analytic footprint of the buffers FAVOR allocates, in bytes."""
    floats = m * d                    # projections
    floats += 2 * L * r               # Q', K'
    floats += L * (dv + 1)            # C = [V | 1]
    floats += 2 * L * (dv + 1)        # Buf2 and output
    if cfg.direction is Direction.BIDIRECTIONAL or cfg.streaming_prefix:
        floats += r * (dv + 1)        # Buf1 or the running prefix sum
    else:
        floats += 2 * L * r * (dv + 1)  # G and its prefix sums
    return floats * BYTES_PER_FLOAT


def favor_attention(q, k, v, cfg: AttentionConfig, rng: RngStream | None = None, *,
                    ensemble: ProjectionEnsemble | None = None) -> AttentionResult:
    if cfg.direction is Direction.BIDIRECTIONAL:
        return favor_bidirectional(q, k, v, cfg, rng, ensemble=ensemble)
    return favor_unidirectional(q, k, v, cfg, rng, ensemble=ensemble)


def attention(q, k, v, cfg: AttentionConfig, rng: RngStream | None = None) -> AttentionResult:
    if cfg.mechanism is Mechanism.EXACT:
        return exact_attention(q, k, v, cfg.direction)
    return favor_attention(q, k, v, cfg, rng)


def approx_attention_matrix(q, k, cfg: AttentionConfig, rng: RngStream | None = None, *,
                            ensemble: ProjectionEnsemble | None = None) -> np.ndarray:
    """Materialize ``Q'K'^T``, the unnormalized kernel estimates. Diagnostic only."""
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    if max(q.shape[0], k.shape[0]) > MAX_MATERIALIZED_L:
        raise ResourceGuardError(f"refusing to materialize an L x L matrix with "
                                 f"L > {MAX_MATERIALIZED_L}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q and k widths differ: {q.shape[1]} vs {k.shape[1]}")
    qp, kp, _ = _features(q, k, cfg, rng, ensemble)
    return qp @ kp.T


def exact_kernel_matrix(q, k) -> np.ndarray:
    """``exp(QK^T / sqrt(d))``, the target of :func:`approx_attention_matrix`."""
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    return np.exp((q @ k.T) / np.sqrt(q.shape[1]))


class FavorAttention:
    """FAVOR attention that owns its projections and redraws them on schedule.

    With ``redraw_every = t`` calls ``1..t`` share one ensemble, calls
    ``t+1..2t`` the next, and so on; ``t = 0`` never redraws. Ensemble ``n``
    is drawn from stream ``(master_seed, n)``.
    """

    def __init__(self, cfg: AttentionConfig, master_seed: int = 42):
        self.cfg = cfg
        self.master_seed = master_seed
        self.calls = 0
        self.redraw_counter = 0
        self.ensemble: ProjectionEnsemble | None = None

    def _current(self, d: int) -> ProjectionEnsemble:
        every = self.cfg.redraw_every
        wanted = self.calls // every if every else 0
        if self.ensemble is None or wanted != self.redraw_counter or self.ensemble.d != d:
            self.redraw_counter = wanted
            self.ensemble = build_ensemble(self.cfg.feature_spec, d,
                                           RngStream(self.master_seed, wanted))
        return self.ensemble

    def matrix(self, q, k) -> np.ndarray:
        ens = self._current(np.shape(q)[1])
        self.calls += 1
        return approx_attention_matrix(q, k, self.cfg, ensemble=ens)

    def __call__(self, q, k, v) -> AttentionResult:
        ens = self._current(np.shape(q)[1])
        self.calls += 1
        return favor_attention(q, k, v, self.cfg, ensemble=ens)
