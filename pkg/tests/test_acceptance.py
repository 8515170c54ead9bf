"""Acceptance criteria, one test each, run at full size.

Every test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed in the terminal summary.
"""

import contextlib
import csv
import io
import time

import mpmath
import numpy as np

from favorlab import bench
from favorlab.attention import (
    AttentionConfig,
    NonPositiveRenormalizerError,
    favor_attention,
    favor_unidirectional,
)
from favorlab.cli import main
from favorlab.features import FeatureMapSpec, OrthoMode, Variant, apply_feature_map, build_ensemble
from favorlab.kernels import KernelPoint, sm_exact, smreg_series
from favorlab.lab import (
    TrialPlan,
    attention_matrix_mse,
    ball_inputs,
    low_kernel_inputs,
    run_kernel_trials,
)
from favorlab.numerics import RngStream


def cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(list(argv))
    return code, buf.getvalue()


def table(text):
    body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
    return list(csv.DictReader(io.StringIO(body)))


def test_criterion_1_closed_form_mse(criterion):
    t0 = time.perf_counter()
    code, out = cli("mse-validate", "--d", "16", "--m", "1", "--trials", "100000")
    elapsed = time.perf_counter() - t0
    rows = table(out)
    points = {(r["norm_x"], r["norm_y"], r["angle"]) for r in rows}
    worst = max(abs(float(r["z_score"])) for r in rows)
    ok = (code == 0 and len(points) == 20 and len(rows) == 60 and worst <= 4
          and max(float(r["norm_x"]) for r in rows) <= 1.5 and elapsed < 120)
    criterion(1, ok, f"60 cells, max |z| = {worst:.2f}, {elapsed:.0f}s")
    assert ok


def test_criterion_2_orthogonal_gap(criterion):
    code, out = cli("ortho-gap", "--d", "16", "--m", "2,4,8", "--points", "10",
                    "--radius", "1.0", "--trials", "200000")
    rows = table(out)
    failed = [(r["point"], r["m"]) for r in rows if r["pass"] != "true"]
    ok = code == 0 and len(rows) == 30 and not failed
    criterion(2, ok, f"{30 - len(failed)}/30 cells pass; failing (point, m): {failed}")
    assert ok


def smreg_oracle_d2_e1(terms=50):
    mpmath.mp.dps = 40
    # d = 2 gives f(k, 2) = 1/k!, w = 2
    total = mpmath.fsum(mpmath.mpf(2) ** k / mpmath.factorial(k) ** 2 for k in range(terms))
    return float(total * mpmath.exp(-1))


def test_criterion_3_smreg_upper_bound(criterion):
    code, out = cli("smreg-check", "--d", "2,4,16,64", "--points", "1000")
    rows = table(out)
    violations = sum(float(r["ratio"]) > 1 + 1e-12 for r in rows)
    e1 = np.array([1.0, 0.0])
    value = smreg_series(KernelPoint(e1, e1))
    oracle = smreg_oracle_d2_e1()
    ok = (code == 0 and len(rows) >= 4000 and violations == 0
          and abs(value - oracle) <= 1e-5 and abs(value - 1.56435) <= 1e-5)
    criterion(3, ok, f"{len(rows)} points, {violations} violations, series {value:.6f} "
                     f"vs oracle {oracle:.6f}")
    assert ok


def test_criterion_4_entry_mse_orderings(criterion):
    t0 = time.perf_counter()
    L, d, seeds = 1024, 16, 15
    parts = []
    ok = True
    for m in (16, 64, 256):
        iid = np.median(attention_matrix_mse(L, d, FeatureMapSpec(m=m), seeds))
        gs = np.median(attention_matrix_mse(
            L, d, FeatureMapSpec(m=m, ortho=OrthoMode.GRAM_SCHMIDT), seeds))
        ok &= bool(gs <= iid)
        parts.append(f"m={m} gs {gs:.4g} vs iid {iid:.4g}")
    q, k = low_kernel_inputs(L, d, RngStream(42, 0).generator())
    low_mean = float(np.mean(q @ k.T))
    pos = np.median(attention_matrix_mse(L, d, FeatureMapSpec(variant="pos", m=64), seeds, "low"))
    trig = np.median(attention_matrix_mse(L, d, FeatureMapSpec(variant="trig", m=64), seeds, "low"))
    elapsed = time.perf_counter() - t0
    ok &= bool(low_mean < 0 and pos <= trig and elapsed < 300)
    parts.append(f"low family (mean q.k {low_mean:.2f}) pos {pos:.4g} vs trig {trig:.4g}")
    criterion(4, ok, "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_5_causal_correctness(criterion):
    L, d, m = 256, 16, 64
    gen = np.random.default_rng(5)
    q = gen.standard_normal((L, d)) * d ** -0.25
    k = gen.standard_normal((L, d)) * d ** -0.25
    v = gen.standard_normal((L, d))
    worst = 0.0
    causal = True
    for variant in ("pos", "hyp", "smreg", "relu"):
        spec = FeatureMapSpec(variant=variant, m=m, scale_by_d_quarter=True)
        cfg = AttentionConfig(direction="uni", feature_spec=spec, stabilizer=0.0)
        ens = build_ensemble(spec, d, RngStream(11))
        qp, kp = apply_feature_map(spec, ens, q), apply_feature_map(spec, ens, k)
        a = np.tril(qp @ kp.T)
        oracle = (a @ v) / a.sum(axis=1, keepdims=True)
        out = favor_unidirectional(q, k, v, cfg, ensemble=ens).output
        worst = max(worst, float(np.max(np.abs(out - oracle) / np.abs(oracle))))
        j = 100
        q2, k2, v2 = q.copy(), k.copy(), v.copy()
        q2[j] += 0.3
        k2[j] -= 0.3
        v2[j] += 1.0
        moved = favor_unidirectional(q2, k2, v2, cfg, ensemble=ens).output
        causal &= bool(np.array_equal(out[:j], moved[:j]))
    ok = worst <= 1e-8 and causal
    criterion(5, ok, f"max relative deviation {worst:.2e}, prefix rows bit-identical: {causal}")
    assert ok


def test_criterion_6_relu_kernel_consistency(criterion):
    d, m = 16, 64
    spec = FeatureMapSpec(variant=Variant.RELU_GENERALIZED, m=m, scale_by_d_quarter=True)
    ens = build_ensemble(spec, d, RngStream(3))
    worst = 0.0
    for L in (1, 64, 512):
        gen = np.random.default_rng(L)
        q, k, v = (gen.standard_normal((L, d)) for _ in range(3))
        qp, kp = apply_feature_map(spec, ens, q), apply_feature_map(spec, ens, k)
        for direction in ("bi", "uni"):
            a = qp @ kp.T
            if direction == "uni":
                a = np.tril(a)
            oracle = (a @ v) / a.sum(axis=1, keepdims=True)
            cfg = AttentionConfig(direction=direction, feature_spec=spec)
            out = favor_attention(q, k, v, cfg, ensemble=ens).output
            worst = max(worst, float(np.max(np.abs(out - oracle)) / np.max(np.abs(oracle))))
    ok = worst <= 1e-10
    criterion(6, ok, f"max relative deviation {worst:.2e} over L in (1, 64, 512), both directions")
    assert ok


def test_criterion_7_complexity_slopes(criterion):
    t0 = time.perf_counter()
    favor_sizes = [1024, 2048, 4096, 8192]
    exact_sizes = [256, 512, 1024, 2048]
    favor = [bench.bench_one("favor", L, 64, 256) for L in favor_sizes]
    exact = [bench.bench_one("exact", L, 64, 0) for L in exact_sizes]
    s_favor = bench.loglog_slope(favor_sizes, [r.wall_time_ns_median for r in favor])
    s_exact = bench.loglog_slope(exact_sizes, [r.wall_time_ns_median for r in exact])
    ratios = [b.peak_bytes_estimate / a.peak_bytes_estimate for a, b in zip(favor, favor[1:])]
    elapsed = time.perf_counter() - t0
    ok = (0.8 <= s_favor <= 1.3 and 1.7 <= s_exact <= 2.3
          and all(1.8 <= r <= 2.2 for r in ratios) and elapsed < 180)
    criterion(7, ok, f"favor slope {s_favor:.2f}, exact slope {s_exact:.2f}, memory ratios "
                     f"{min(ratios):.2f}-{max(ratios):.2f}, {elapsed:.0f}s")
    assert ok


def test_criterion_8_trig_instability(criterion):
    L, d, m = 64, 16, 16
    trig_hits = 0
    pos_hits = 0
    for seed in range(20):
        gen = RngStream(1000, seed).generator()
        q = gen.standard_normal((L, d))
        v = gen.standard_normal((L, 4))
        inputs = [(q, -q), (q * d ** -0.25, gen.standard_normal((L, d)) * d ** -0.25)]
        inputs.append(low_kernel_inputs(L, d, gen))
        for variant in ("trig", "pos"):
            spec = FeatureMapSpec(variant=variant, m=m, scale_by_d_quarter=True)
            for direction in ("bi", "uni"):
                cfg = AttentionConfig(direction=direction, feature_spec=spec, stabilizer=0.0)
                for i, (qq, kk) in enumerate(inputs):
                    try:
                        favor_attention(qq, kk, v, cfg, RngStream(2000, seed))
                    except NonPositiveRenormalizerError:
                        if variant == "pos":
                            pos_hits += 1
                        elif i == 0 and direction == "bi":
                            trig_hits += 1
    ok = trig_hits >= 1 and pos_hits == 0
    criterion(8, ok, f"trig failed on {trig_hits}/20 antipodal seeds; pos failures {pos_hits}")
    assert ok


def test_criterion_9_unbiasedness(criterion):
    gen = RngStream(42, 0).generator()
    worst = 0.0
    for i in range(10):
        p = KernelPoint(ball_inputs(1, 16, 1.0, gen)[0], ball_inputs(1, 16, 1.0, gen)[0])
        for vi, variant in enumerate(("trig", "pos", "hyp", "smreg")):
            plan = TrialPlan(p, FeatureMapSpec(variant=variant, m=1), 100_000, 42,
                             stream_base=i * 8 + vi)
            report = run_kernel_trials(plan)
            target = smreg_series(p) if variant == "smreg" else sm_exact(p)
            assert report.reference_value == target
            worst = max(worst, abs(report.mean - target) / report.std_error_of_mean)
    ok = worst <= 4
    criterion(9, ok, f"40 (point, estimator) pairs, max |mean - kernel| / SE = {worst:.2f}")
    assert ok


DETERMINISM_RUNS = {
    "attention-compare": ["--L", "64", "--seeds", "4", "--variant", "pos,hyp", "--ortho", "gs"],
    "mse-validate": ["--trials", "9000", "--norms", "0.25:0.25,0.4:0.6"],
    "ortho-gap": ["--points", "2", "--trials", "10000"],
    "smreg-check": ["--points", "100"],
    "bench": ["--L", "64,128", "--m", "16", "--repeats", "5"],
    "features-dump": ["--m", "6", "--L", "3", "--ortho", "gs"],
}


def test_criterion_10_determinism(criterion):
    differing = []
    for command, flags in DETERMINISM_RUNS.items():
        a = cli(command, *flags, "--seed", "7", "--threads", "1")
        b = cli(command, *flags, "--seed", "7", "--threads", "4")
        if a != b:
            differing.append(command)
    ok = not differing
    criterion(10, ok, f"{len(DETERMINISM_RUNS) - len(differing)}/{len(DETERMINISM_RUNS)} "
                      f"subcommands byte-identical; differing: {differing}")
    assert ok


def test_bench_is_deterministic_apart_from_wall_time():
    flags = ["bench", *DETERMINISM_RUNS["bench"], "--with-error", "--seed", "7"]
    a = table(cli(*flags, "--threads", "1")[1])
    b = table(cli(*flags, "--threads", "4")[1])
    for ra, rb in zip(a, b):
        ra.pop("wall_time_ns_median")
        rb.pop("wall_time_ns_median")
    assert a == b and len(a) == 6
