import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from favorlab.features import (
    FeatureMapSpec,
    OrthoMode,
    Variant,
    apply_feature_map,
    build_ensemble,
    feature_values,
    redraw,
    sample_omegas,
)
from favorlab.numerics import RngStream, ShapeError


def ens(variant="pos", m=8, d=16, ortho="iid", seed=0, **kw):
    spec = FeatureMapSpec(variant=variant, m=m, ortho=ortho, **kw)
    return spec, build_ensemble(spec, d, RngStream(seed))


@pytest.mark.parametrize("variant,r", [("trig", 10), ("pos", 5), ("hyp", 10),
                                       ("smreg", 5), ("relu", 5), ("sgn", 5)])
def test_output_dimension(variant, r):
    spec, e = ens(variant, m=5, d=3)
    assert spec.r == r
    assert apply_feature_map(spec, e, np.ones((2, 3))).shape == (2, r)


def test_spec_defaults():
    assert FeatureMapSpec(variant="relu").kernel_epsilon == 1e-3
    assert FeatureMapSpec(variant="pos").kernel_epsilon == 0.0
    with pytest.raises(ValueError):
        FeatureMapSpec(m=0)


def test_pos_at_origin():
    spec, e = ens("pos", m=4, d=3)
    np.testing.assert_array_equal(apply_feature_map(spec, e, np.zeros((1, 3))), [[0.5] * 4])


def test_trig_at_origin():
    spec, e = ens("trig", m=3, d=3)
    out = apply_feature_map(spec, e, np.zeros((1, 3)))[0]
    np.testing.assert_array_equal(out[:3], 0.0)
    np.testing.assert_allclose(out[3:], 1 / math.sqrt(3), rtol=1e-15)


def test_pos_unbiased_at_large_m():
    gen = np.random.default_rng(5)
    x, y = gen.standard_normal((2, 8)) * 0.3
    spec, e = ens("pos", m=100_000, d=8, seed=9)
    fx, fy = apply_feature_map(spec, e, np.stack([x, y]))
    per_sample = fx * fy * spec.m  # single-feature estimates
    se = per_sample.std(ddof=1) / math.sqrt(spec.m)
    assert abs(per_sample.mean() - math.exp(x @ y)) <= 4 * se


@pytest.mark.parametrize("variant", ["trig", "pos", "hyp"])
def test_single_sample_unbiasedness(variant):
    gen = np.random.default_rng(11)
    x, y = gen.standard_normal((2, 6))
    x *= 1.2 / np.linalg.norm(x)
    y *= 0.8 / np.linalg.norm(y)
    spec = FeatureMapSpec(variant=variant, m=1)
    w = sample_omegas(spec, 6, RngStream(3).generator(), batch=100_000)
    proj = np.einsum("bmd,nd->bnm", w, np.stack([x, y]))
    f = feature_values(spec.variant, proj, np.array([x @ x, y @ y]), 1)
    est = np.sum(f[:, 0] * f[:, 1], axis=-1)
    se = est.std(ddof=1) / math.sqrt(est.size)
    assert abs(est.mean() - math.exp(x @ y)) <= 4 * se


def test_gs_rows_orthogonal():
    _, e = ens("pos", m=8, d=16, ortho="gs")
    gram = e.omega @ e.omega.T
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) <= 1e-10


def test_gs_block_pattern():
    _, e = ens("pos", m=20, d=8, ortho="gs", seed=3)
    assert e.block_boundaries == (0, 8, 16)
    assert [b.shape[0] for b in e.blocks()] == [8, 8, 4]
    for b in e.blocks():
        g = b @ b.T
        assert np.max(np.abs(g - np.diag(np.diag(g)))) <= 1e-10
    across = e.omega[:8] @ e.omega[8:16].T
    assert np.max(np.abs(across)) > 1e-3


def test_smreg_rows_on_sphere():
    _, e = ens("smreg", m=4, d=4)
    np.testing.assert_allclose(np.linalg.norm(e.omega, axis=1), 2.0, atol=1e-10)


def test_smreg_gs_rows_on_sphere_and_orthogonal():
    _, e = ens("smreg", m=6, d=6, ortho="gs")
    np.testing.assert_allclose(e.omega @ e.omega.T, 6 * np.eye(6), atol=1e-10)


def test_hyp_first_half_matches_pos():
    spec_h, e = ens("hyp", m=7, d=5, seed=4)
    spec_p = FeatureMapSpec(variant="pos", m=7)
    x = np.random.default_rng(0).standard_normal((3, 5))
    hyp = apply_feature_map(spec_h, e, x)
    pos = apply_feature_map(spec_p, e, x)
    np.testing.assert_allclose(hyp[:, :7] * math.sqrt(2), pos, rtol=1e-14)


def test_d_quarter_scaling():
    spec, e = ens("pos", m=4, d=16)
    scaled = FeatureMapSpec(variant="pos", m=4, scale_by_d_quarter=True)
    x = np.random.default_rng(1).standard_normal((2, 16))
    np.testing.assert_allclose(apply_feature_map(scaled, e, x), apply_feature_map(spec, e, x / 2))


row_inputs = arrays(np.float64, (3, 4), elements=st.floats(-5, 5, allow_nan=False))


@given(row_inputs, st.sampled_from(["pos", "hyp", "relu", "smreg"]), st.integers(0, 1000))
def test_positive_variants_are_positive(x, variant, seed):
    spec, e = ens(variant, m=6, d=4, seed=seed)
    assert np.all(apply_feature_map(spec, e, x) > 0)


def test_overflow_is_reported():
    spec, e = ens("trig", m=2, d=1)
    with pytest.raises(OverflowError):
        apply_feature_map(spec, e, [[40.0]])


def test_width_mismatch():
    spec, e = ens("pos", m=2, d=3)
    with pytest.raises(ShapeError):
        apply_feature_map(spec, e, np.ones((1, 4)))


def test_ensemble_is_read_only():
    _, e = ens()
    with pytest.raises(ValueError):
        e.omega[0, 0] = 1.0


def test_redraw_same_stream_identical():
    _, e = ens(ortho="gs")
    a = redraw(e, RngStream(5, 1))
    b = redraw(e, RngStream(5, 1))
    np.testing.assert_array_equal(a.omega, b.omega)


def test_redraw_new_stream_uncorrelated():
    _, e = ens(m=64, d=16)
    fresh = redraw(e, RngStream(77, 3))
    corr = np.corrcoef(e.omega.ravel(), fresh.omega.ravel())[0, 1]
    assert abs(corr) <= 4 / math.sqrt(64 * 16)


def test_redrawn_gs_still_orthogonal():
    _, e = ens(m=16, d=16, ortho="gs")
    fresh = redraw(e, RngStream(1, 1))
    np.testing.assert_allclose(fresh.omega @ fresh.omega.T,
                               np.diag(np.sum(fresh.omega ** 2, axis=1)), atol=1e-10)


def test_gs_preserves_row_marginal():
    x = np.random.default_rng(2).standard_normal(8)
    gen = RngStream(8).generator()
    iid = sample_omegas(FeatureMapSpec(m=8, ortho=OrthoMode.IID), 8, gen, batch=10_000)[:, 3] @ x
    gs = sample_omegas(FeatureMapSpec(m=8, ortho=OrthoMode.GRAM_SCHMIDT), 8, gen,
                       batch=10_000)[:, 3] @ x
    se = math.sqrt(iid.var(ddof=1) / iid.size + gs.var(ddof=1) / gs.size)
    assert abs(iid.mean() - gs.mean()) <= 4 * se
    # second moment too: both should be |x|^2
    sq_se = math.sqrt((iid ** 2).var() / iid.size + (gs ** 2).var() / gs.size)
    assert abs((iid ** 2).mean() - (gs ** 2).mean()) <= 4 * sq_se


def test_sgn_feature_values():
    out = feature_values(Variant.SGN_ANGULAR, np.array([[-2.0, 0.5, 3.0, -0.1]]), np.array([1.0]), 4)
    np.testing.assert_array_equal(out, [[-0.5, 0.5, 0.5, -0.5]])
