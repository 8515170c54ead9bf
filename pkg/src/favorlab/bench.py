"""Wall-clock and memory scaling of exact vs FAVOR attention."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from favorlab.attention import (
    AttentionConfig,
    Direction,
    ResourceGuardError,
    exact_attention,
    favor_attention,
)
from favorlab.features import FeatureMapSpec, build_ensemble
from favorlab.numerics import RngStream

EXACT_L_CAP = 2 ** 14


@dataclass(frozen=True)
class BenchRecord:
    L: int
    d: int
    m: int
    mechanism: str
    direction: str
    wall_time_ns_median: int
    peak_bytes_estimate: int
    max_abs_err: float | None
    mse: float | None
    seed: int


def median_time_ns(fn, repeats: int = 5) -> int:
    """Median monotonic-clock duration of ``fn()`` after one warmup call."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times))


def loglog_slope(sizes, times) -> float:
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def bench_inputs(L: int, d: int, seed: int):
    gen = RngStream(seed, L).generator()
    scale = d ** -0.25
    return tuple(gen.standard_normal((L, d)) * scale for _ in range(3))


def bench_one(mechanism: str, L: int, d: int, m: int, seed: int = 42, repeats: int = 5,
              direction: Direction = Direction.BIDIRECTIONAL, with_error: bool = False,
              exact_cap: int = EXACT_L_CAP, spec: FeatureMapSpec | None = None) -> BenchRecord:
    """Time one attention mechanism at one sequence length.

    ``mechanism`` is ``"exact"``, ``"favor"`` or ``"opt"``; the last returns V
    untouched and marks the fastest any attention layer could possibly be.
    """
    direction = Direction(direction)
    q, k, v = bench_inputs(L, d, seed)
    if mechanism == "exact" and L > exact_cap:
        raise ResourceGuardError(f"exact attention refused for L={L} > cap {exact_cap}")
    max_err = mse = None
    if mechanism == "exact":
        fn = lambda: exact_attention(q, k, v, direction)
        peak = exact_attention(q, k, v, direction).peak_bytes_estimate
    elif mechanism == "favor":
        spec = spec or FeatureMapSpec(m=m, scale_by_d_quarter=True)
        cfg = AttentionConfig(direction=direction, feature_spec=spec)
        ens = build_ensemble(spec, d, RngStream(seed))
        fn = lambda: favor_attention(q, k, v, cfg, ensemble=ens)
        res = fn()
        peak = res.peak_bytes_estimate
        if with_error and L <= exact_cap:
            err = res.output - exact_attention(q, k, v, direction).output
            max_err = float(np.max(np.abs(err)))
            mse = float(np.mean(err * err))
    elif mechanism == "opt":
        fn = lambda: v.copy()
        peak = v.nbytes * 4
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    wall = median_time_ns(fn, repeats)
    return BenchRecord(L, d, m if mechanism == "favor" else 0, mechanism, direction.value,
                       wall, peak, max_err, mse, seed)
