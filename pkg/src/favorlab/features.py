"""Random feature maps ``phi(x) = h(x)/sqrt(m) * (f_1(w_1.x), ..., f_l(w_m.x))``.

Softmax-kernel estimators (trigonometric, positive, hyperbolic, regularized)
plus the generalized ReLU and angular (sign) maps, all driven by a
:class:`ProjectionEnsemble` of ``m`` projection rows in ``R^d``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from favorlab.numerics import RngStream, ShapeError, as_matrix, gram_schmidt_directions

# exp(t) overflows float64 for t above this
LOG_FLOAT_MAX = math.log(np.finfo(np.float64).max)


class Variant(str, enum.Enum):
    TRIG_SOFTMAX = "trig"
    POS_SOFTMAX = "pos"
    HYP_SOFTMAX = "hyp"
    SMREG_POS = "smreg"
    RELU_GENERALIZED = "relu"
    SGN_ANGULAR = "sgn"

    @property
    def n_funcs(self) -> int:
        return 2 if self in (Variant.TRIG_SOFTMAX, Variant.HYP_SOFTMAX) else 1

    @property
    def is_softmax(self) -> bool:
        return self in SOFTMAX_VARIANTS

    @property
    def is_positive(self) -> bool:
        return self in (Variant.POS_SOFTMAX, Variant.HYP_SOFTMAX, Variant.SMREG_POS,
                        Variant.RELU_GENERALIZED)


SOFTMAX_VARIANTS = frozenset({Variant.TRIG_SOFTMAX, Variant.POS_SOFTMAX,
                              Variant.HYP_SOFTMAX, Variant.SMREG_POS})


class OrthoMode(str, enum.Enum):
    IID = "iid"
    GRAM_SCHMIDT = "gs"


class NormMode(str, enum.Enum):
    GAUSSIAN_MARGINAL = "gaussian"
    SPHERE_SQRT_D = "sphere"


@dataclass(frozen=True)
class FeatureMapSpec:
    variant: Variant = Variant.POS_SOFTMAX
    m: int = 256
    ortho: OrthoMode = OrthoMode.IID
    kernel_epsilon: float | None = None
    scale_by_d_quarter: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "ortho", OrthoMode(self.ortho))
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.kernel_epsilon is None:
            eps = 1e-3 if self.variant is Variant.RELU_GENERALIZED else 0.0
            object.__setattr__(self, "kernel_epsilon", eps)
        if self.kernel_epsilon < 0:
            raise ValueError("kernel_epsilon must be nonnegative")

    @property
    def r(self) -> int:
        """Output feature dimension."""
        return self.m * self.variant.n_funcs

    @property
    def norm_mode(self) -> NormMode:
        if self.variant is Variant.SMREG_POS:
            return NormMode.SPHERE_SQRT_D
        return NormMode.GAUSSIAN_MARGINAL


@dataclass(frozen=True)
class ProjectionEnsemble:
    omega: np.ndarray
    spec: FeatureMapSpec
    block_boundaries: tuple[int, ...]
    seed_record: tuple[int, int]

    @property
    def ortho_mode(self) -> OrthoMode:
        return self.spec.ortho

    @property
    def norm_mode(self) -> NormMode:
        return self.spec.norm_mode

    @property
    def m(self) -> int:
        return self.omega.shape[0]

    @property
    def d(self) -> int:
        return self.omega.shape[1]

    def blocks(self) -> list[np.ndarray]:
        edges = list(self.block_boundaries) + [self.m]
        return [self.omega[a:b] for a, b in zip(edges[:-1], edges[1:])]


def block_starts(m: int, d: int, ortho: OrthoMode) -> tuple[int, ...]:
    if ortho is OrthoMode.IID:
        return (0,)
    return tuple(range(0, m, d))


def sample_omegas(spec: FeatureMapSpec, d: int, gen: np.random.Generator,
                  batch: int = 1) -> np.ndarray:
    """Draw ``batch`` independent projection matrices, shape ``(batch, m, d)``."""
    if d < 1:
        raise ShapeError(f"d must be >= 1, got {d}")
    m = spec.m
    sphere = spec.norm_mode is NormMode.SPHERE_SQRT_D
    if spec.ortho is OrthoMode.IID:
        w = gen.standard_normal((batch, m, d))
        if sphere:
            w *= math.sqrt(d) / np.linalg.norm(w, axis=-1, keepdims=True)
        return w
    out = np.empty((batch, m, d))
    for start in block_starts(m, d, spec.ortho):
        rows = min(d, m - start)
        dirs = gram_schmidt_directions(gen.standard_normal((batch, rows, d)))
        if sphere:
            norms = np.full((batch, rows), math.sqrt(d))
        else:
            norms = np.sqrt(gen.chisquare(d, size=(batch, rows)))
        out[:, start:start + rows] = dirs * norms[..., None]
    return out


def build_ensemble(spec: FeatureMapSpec, d: int, rng: RngStream) -> ProjectionEnsemble:
    omega = sample_omegas(spec, d, rng.generator(), batch=1)[0]
    omega.setflags(write=False)
    return ProjectionEnsemble(
        omega=omega,
        spec=spec,
        block_boundaries=block_starts(spec.m, d, spec.ortho),
        seed_record=(rng.master_seed, rng.stream_id),
    )


def redraw(ensemble: ProjectionEnsemble, rng: RngStream) -> ProjectionEnsemble:
    return build_ensemble(ensemble.spec, ensemble.d, rng)


def feature_values(variant: Variant, proj: np.ndarray, sqnorm: np.ndarray, m: int,
                   kernel_epsilon: float = 0.0) -> np.ndarray:
    """Map projections ``proj`` (``(..., n, m)``) to features (``(..., n, r)``).

    ``sqnorm`` holds the squared input norms, shape ``(..., n)``. Shared by
    :func:`apply_feature_map` and the batched estimator trials.
    """
    variant = Variant(variant)
    half = 0.5 * np.asarray(sqnorm)[..., None]
    if variant.is_softmax and np.any(half > LOG_FLOAT_MAX):
        raise OverflowError("exp(|x|^2/2) is outside the float64 range")
    scale = 1.0 / math.sqrt(m)
    # one fresh output buffer per variant, then in-place updates
    with np.errstate(over="ignore"):
        if variant is Variant.TRIG_SOFTMAX:
            h = np.exp(half) * scale
            out = np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)
            out *= h
        elif variant in (Variant.POS_SOFTMAX, Variant.SMREG_POS):
            out = np.subtract(proj, half)
            np.exp(out, out=out)
            out *= scale
        elif variant is Variant.HYP_SOFTMAX:
            out = np.concatenate([proj, -proj], axis=-1)
            out -= half
            np.exp(out, out=out)
            out *= scale / math.sqrt(2.0)
        elif variant is Variant.RELU_GENERALIZED:
            out = np.maximum(proj, 0.0)
            out += kernel_epsilon
            out *= scale
        else:
            out = np.sign(proj) * scale
    # max and min propagate nan and expose +-inf without a temporary mask
    if out.size and not (np.isfinite(out.max()) and np.isfinite(out.min())):
        raise OverflowError(f"{variant.name} features overflowed")
    return out


def apply_feature_map(spec: FeatureMapSpec, ensemble: ProjectionEnsemble, x_rows) -> np.ndarray:
    x = as_matrix(x_rows, "x_rows")
    if x.shape[1] != ensemble.d:
        raise ShapeError(f"inputs have {x.shape[1]} columns, ensemble expects {ensemble.d}")
    if spec.scale_by_d_quarter:
        x = x * x.shape[1] ** -0.25
    proj = x @ ensemble.omega.T
    return feature_values(spec.variant, proj, np.sum(x * x, axis=1), ensemble.m,
                          spec.kernel_epsilon)
