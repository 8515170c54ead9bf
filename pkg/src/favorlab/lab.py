"""Monte Carlo experiments on the softmax-kernel estimators.

Trials are drawn in fixed chunks of :data:`CHUNK` ensembles. Chunk ``c`` of a
plan always uses the same random stream, and per-trial values are reassembled
in trial order before any reduction, so results do not depend on how many
worker threads evaluated the chunks.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from favorlab.attention import AttentionConfig, approx_attention_matrix, exact_kernel_matrix
from favorlab.features import (
    FeatureMapSpec,
    OrthoMode,
    Variant,
    feature_values,
    sample_omegas,
)
from favorlab.kernels import (
    KernelPoint,
    mse_hyp_closed,
    mse_pos_closed,
    mse_trig_closed,
    ortho_gap_bound,
    sm_exact,
    smreg_series,
)
from favorlab.numerics import RngStream

CHUNK = 4096
MIN_TRIALS = 100
MAX_SWEEP_L = 4096
ROUNDING_FLOOR = 64 * np.finfo(np.float64).eps


class ReferenceKind(str, enum.Enum):
    SM_EXACT = "sm_exact"
    SMREG_SERIES = "smreg_series"
    MSE_CLOSED = "mse_closed"
    NONE = "none"


@dataclass(frozen=True)
class TrialPlan:
    point: KernelPoint
    spec: FeatureMapSpec
    trials: int
    master_seed: int = 42
    stream_base: int = 0

    def __post_init__(self):
        if self.trials < MIN_TRIALS:
            raise ValueError(f"need at least {MIN_TRIALS} trials, got {self.trials}")


@dataclass(frozen=True)
class StatsReport:
    mean: float
    empirical_mse: float
    std_error_of_mean: float
    std_error_of_mse: float
    reference_value: float
    reference_kind: ReferenceKind
    z_score: float
    kernel_value: float
    trials: int


def true_kernel(point: KernelPoint, variant: Variant) -> float:
    if variant is Variant.SMREG_POS:
        return smreg_series(point)
    return sm_exact(point)


def closed_form_mse(point: KernelPoint, spec: FeatureMapSpec) -> float | None:
    """Closed-form MSE for iid trig/pos/hyp estimators, else ``None``."""
    if spec.ortho is not OrthoMode.IID:
        return None
    fn = {Variant.TRIG_SOFTMAX: mse_trig_closed,
          Variant.POS_SOFTMAX: mse_pos_closed,
          Variant.HYP_SOFTMAX: mse_hyp_closed}.get(spec.variant)
    return None if fn is None else fn(point, spec.m)


def _chunk_estimates(plan: TrialPlan, chunk: int) -> np.ndarray:
    spec = plan.spec
    start = chunk * CHUNK
    size = min(CHUNK, plan.trials - start)
    gen = RngStream(plan.master_seed, plan.stream_base).substream(chunk).generator()
    omegas = sample_omegas(spec, plan.point.d, gen, batch=size)
    xy = np.stack([plan.point.x, plan.point.y])
    if spec.scale_by_d_quarter:
        xy = xy * plan.point.d ** -0.25
    proj = np.swapaxes(omegas @ xy.T, -1, -2)           # (size, 2, m)
    # unscaled features, divided by m once, so phi(0).phi(0) is exactly 1
    feats = feature_values(spec.variant, proj, np.sum(xy * xy, axis=1), 1,
                           spec.kernel_epsilon)
    return np.sum(feats[:, 0] * feats[:, 1], axis=-1) / spec.m


def trial_estimates(plan: TrialPlan, threads: int = 1) -> np.ndarray:
    """One kernel estimate per independent ensemble, in trial order."""
    n_chunks = math.ceil(plan.trials / CHUNK)
    if threads <= 1:
        parts = [_chunk_estimates(plan, c) for c in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _chunk_estimates(plan, c), range(n_chunks)))
    return np.concatenate(parts)


def _z(estimate: float, reference: float, se: float) -> float:
    diff = estimate - reference
    if se > 0:
        return diff / se
    if abs(diff) <= ROUNDING_FLOOR * abs(reference):
        return 0.0
    return math.copysign(math.inf, diff)


def summarize(est: np.ndarray, kernel_value: float, reference_kind: ReferenceKind,
              reference_value: float = math.nan) -> StatsReport:
    n = est.size
    err = est - kernel_value
    # differences at rounding level are not estimator error
    err[np.abs(err) <= ROUNDING_FLOOR * abs(kernel_value)] = 0.0
    sq = err * err
    mse = float(np.mean(sq))
    se_mean = float(np.std(est, ddof=1) / math.sqrt(n))
    se_mse = float(np.std(sq, ddof=1) / math.sqrt(n))
    mean = float(np.mean(est))
    if reference_kind is ReferenceKind.MSE_CLOSED:
        z = _z(mse, reference_value, se_mse)
    elif reference_kind is ReferenceKind.NONE:
        z = math.nan
    else:
        reference_value = kernel_value
        z = _z(mean, kernel_value, se_mean)
    return StatsReport(mean, mse, se_mean, se_mse, reference_value, reference_kind, z,
                       kernel_value, n)


def run_kernel_trials(plan: TrialPlan, threads: int = 1,
                      reference: ReferenceKind | None = None) -> StatsReport:
    """Estimate ``phi(x).phi(y)`` over independent ensembles and score it.

    By default the trial mean is compared to the exact kernel (``SMREG`` for
    the regularized variant). With ``reference=MSE_CLOSED`` the empirical MSE
    is compared to the closed form instead. The MSE is always taken about the
    true kernel value, not the sample mean.
    """
    kernel = true_kernel(plan.point, plan.spec.variant)
    if reference is None:
        reference = (ReferenceKind.SMREG_SERIES if plan.spec.variant is Variant.SMREG_POS
                     else ReferenceKind.SM_EXACT)
    ref_value = math.nan
    if reference is ReferenceKind.MSE_CLOSED:
        ref_value = closed_form_mse(plan.point, plan.spec)
        if ref_value is None:
            raise ValueError(f"no closed-form MSE for {plan.spec.variant.name}/{plan.spec.ortho.name}")
    est = trial_estimates(plan, threads)
    return summarize(est, kernel, ReferenceKind(reference), ref_value)


@dataclass(frozen=True)
class GapResult:
    m: int
    d: int
    mse_iid: float
    mse_ort: float
    gap_bound: float
    se_iid: float
    se_ort: float
    passed: bool

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se_iid, self.se_ort)


def ortho_gap_experiment(point: KernelPoint, m: int, trials: int, seed: int = 42,
                         threads: int = 1, variant: Variant = Variant.POS_SOFTMAX,
                         slack_sigmas: float = 3.0) -> GapResult:
    """Compare iid and orthogonal positive features against the guaranteed MSE gap."""
    d = point.d
    gap = ortho_gap_bound(point, m, d)
    spec = FeatureMapSpec(variant=variant, m=m)
    iid = run_kernel_trials(TrialPlan(point, spec, trials, seed, stream_base=0), threads)
    ort = run_kernel_trials(TrialPlan(point, replace(spec, ortho=OrthoMode.GRAM_SCHMIDT),
                                      trials, seed, stream_base=1), threads)
    slack = slack_sigmas * math.hypot(iid.std_error_of_mse, ort.std_error_of_mse)
    passed = ort.empirical_mse <= iid.empirical_mse - gap + slack
    return GapResult(m, d, iid.empirical_mse, ort.empirical_mse, gap,
                     iid.std_error_of_mse, ort.std_error_of_mse, bool(passed))


@dataclass(frozen=True)
class TailResult:
    threshold: float
    freq_iid: float
    freq_ort: float
    trials: int

    def binomial_se(self) -> float:
        p = 0.5 * (self.freq_iid + self.freq_ort)
        return math.sqrt(2.0 * p * (1.0 - p) / self.trials)


def tail_frequency_experiment(point: KernelPoint, m: int, threshold_a: float, trials: int,
                              seed: int = 42, threads: int = 1) -> TailResult:
    """Exceedance frequencies ``P[SMREG estimate > a]`` for iid vs orthogonal rows."""
    if m > point.d:
        raise ValueError(f"orthogonal features need m <= d, got m={m}, d={point.d}")
    if not threshold_a > smreg_series(point):
        raise ValueError("threshold must exceed the true SMREG value")
    spec = FeatureMapSpec(variant=Variant.SMREG_POS, m=m)
    iid = trial_estimates(TrialPlan(point, spec, trials, seed, stream_base=0), threads)
    ort = trial_estimates(TrialPlan(point, replace(spec, ortho=OrthoMode.GRAM_SCHMIDT),
                                    trials, seed, stream_base=1), threads)
    return TailResult(threshold_a, float(np.mean(iid > threshold_a)),
                      float(np.mean(ort > threshold_a)), trials)


# -- attention-matrix error experiments -------------------------------------

def ball_inputs(L: int, d: int, radius: float, gen: np.random.Generator) -> np.ndarray:
    """``L`` points drawn uniformly from the radius-``radius`` ball."""
    g = gen.standard_normal((L, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * gen.random((L, 1)) ** (1.0 / d))


def low_kernel_inputs(L: int, d: int, gen: np.random.Generator, shift: float = 3.0):
    """Gaussian queries and keys pushed to opposite sides, so ``q.k`` is mostly negative."""
    u = gen.standard_normal(d)
    u /= np.linalg.norm(u)
    q = gen.standard_normal((L, d)) + shift * u
    k = gen.standard_normal((L, d)) - shift * u
    return q, k


def entry_errors(q, k, spec: FeatureMapSpec, rng: RngStream) -> tuple[float, float]:
    """(max-abs error, mean squared error) of ``Q'K'^T`` against the exact kernel matrix."""
    exact = exact_kernel_matrix(q, k) if spec.scale_by_d_quarter else np.exp(q @ k.T)
    approx = approx_attention_matrix(q, k, AttentionConfig(feature_spec=spec), rng)
    err = approx - exact
    return float(np.max(np.abs(err))), float(np.mean(err * err))


@dataclass(frozen=True)
class SweepRow:
    m: int
    median_max_abs_error: float
    median_entry_mse: float


def uniform_error_sweep(L: int, d: int, radius: float, m_list, seeds: int,
                        variant: Variant = Variant.POS_SOFTMAX,
                        ortho: OrthoMode = OrthoMode.IID, family: str = "ball",
                        master_seed: int = 42) -> list[SweepRow]:
    """Median (over seeds) uniform and mean-square error of the kernel matrix vs ``m``.

    Inputs have norm at most ``radius`` and are fed to the kernel unscaled.
    ``family="antipodal"`` puts every key near the negated common query
    direction, giving small kernel values.
    """
    if L > MAX_SWEEP_L:
        raise ValueError(f"L must be <= {MAX_SWEEP_L}")
    rows = []
    for m in m_list:
        spec = FeatureMapSpec(variant=variant, m=m, ortho=ortho)
        maxes, mses = [], []
        for s in range(seeds):
            gen = RngStream(master_seed, 2 * s).generator()
            if family == "ball":
                q = ball_inputs(L, d, radius, gen)
                k = ball_inputs(L, d, radius, gen)
            elif family == "antipodal":
                q, k = low_kernel_inputs(L, d, gen)
                q *= radius / np.linalg.norm(q, axis=1, keepdims=True)
                k *= radius / np.linalg.norm(k, axis=1, keepdims=True)
            else:
                raise ValueError(f"unknown input family {family!r}")
            mx, mse = entry_errors(q, k, spec, RngStream(master_seed, 2 * s + 1))
            maxes.append(mx)
            mses.append(mse)
        rows.append(SweepRow(m, float(np.median(maxes)), float(np.median(mses))))
    return rows


def attention_matrix_mse(L: int, d: int, spec: FeatureMapSpec, seeds: int,
                         family: str = "gaussian", master_seed: int = 42,
                         input_scale: float | None = None) -> np.ndarray:
    """Per-seed entry MSE of ``Q'K'^T`` vs ``exp(QK^T/sqrt(d))``.

    Input data are standard normal times ``input_scale`` (default
    ``d^-1/4``); the features additionally fold in the ``1/sqrt(d)``
    attention temperature. Seed ``s`` fixes both the
    input matrices and the projections, so two specs evaluated with the same
    seeds see identical inputs.
    """
    spec = replace(spec, scale_by_d_quarter=True)
    if input_scale is None:
        input_scale = d ** -0.25
    out = np.empty(seeds)
    for s in range(seeds):
        gen = RngStream(master_seed, 2 * s).generator()
        if family == "gaussian":
            q = gen.standard_normal((L, d))
            k = gen.standard_normal((L, d))
        elif family == "low":
            q, k = low_kernel_inputs(L, d, gen)
        else:
            raise ValueError(f"unknown input family {family!r}")
        q, k = q * input_scale, k * input_scale
        out[s] = entry_errors(q, k, spec, RngStream(master_seed, 2 * s + 1))[1]
    return out
