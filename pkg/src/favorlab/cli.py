"""``favorlab`` command line: experiments and benchmarks that print CSV.

Exit codes: 0 success, 2 usage error, 3 nonpositive renormalizer,
4 resource guard.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from favorlab import bench, lab
from favorlab.attention import (
    AttentionConfig,
    Direction,
    NonPositiveRenormalizerError,
    ResourceGuardError,
    exact_attention,
    favor_attention,
)
from favorlab.features import FeatureMapSpec, OrthoMode, Variant, apply_feature_map, build_ensemble
from favorlab.kernels import (
    KernelPoint,
    mse_hyp_closed,
    mse_pos_closed,
    ortho_gap_exact,
    sm_exact,
    smreg_series,
)
from favorlab.numerics import RngStream

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_RESOURCE = 4

DEFAULT_GRID = ((0.25, 0.25), (0.5, 0.5), (0.25, 0.75), (0.4, 0.6))
DEFAULT_ANGLES = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi)


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _variant_list(text: str) -> list[Variant]:
    try:
        return [Variant(t) for t in text.split(",") if t]
    except ValueError:
        choices = "|".join(v.value for v in Variant)
        raise argparse.ArgumentTypeError(f"variants must be from {{{choices}}}, got {text!r}")


def _pairs(text: str) -> list[tuple[float, float]]:
    try:
        return [tuple(float(v) for v in item.split(":")) for item in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected nx:ny pairs, got {text!r}")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvOut:
    def __init__(self, header: bool):
        self.buf = io.StringIO()
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.header = header

    def columns(self, names):
        if self.header:
            self.writer.writerow(names)

    def row(self, values):
        self.writer.writerow([_fmt(v) for v in values])

    def comment(self, text: str):
        self.buf.write(f"# {text}\n")


# -- subcommands -------------------------------------------------------------

def _attention_inputs(L: int, d: int, seed: int, s: int, family: str):
    """Benchmark-style inputs; ``antipodal`` keys are the negated, unscaled queries."""
    gen = RngStream(seed, 2 * s).generator()
    if family == "antipodal":
        q = gen.standard_normal((L, d))
        return q, -q, gen.standard_normal((L, d))
    scale = d ** -0.25
    q = gen.standard_normal((L, d)) * scale
    v = gen.standard_normal((L, d))
    k = gen.standard_normal((L, d)) * scale
    return q, k, v


def cmd_attention_compare(args, out: CsvOut) -> None:
    direction = Direction(args.direction)
    out.columns(["variant", "ortho", "direction", "L", "d", "m", "seed", "max_abs_err", "mse",
                 "renormalizer_min"])

    def run(job):
        variant, m, s = job
        spec = FeatureMapSpec(variant=variant, m=m, ortho=OrthoMode(args.ortho),
                              scale_by_d_quarter=True)
        cfg = AttentionConfig(direction=direction, feature_spec=spec, stabilizer=args.stabilizer)
        q, k, v = _attention_inputs(args.L, args.d, args.seed, s, args.input)
        exact = exact_attention(q, k, v, direction).output
        try:
            res = favor_attention(q, k, v, cfg, RngStream(args.seed, 2 * s + 1))
        except NonPositiveRenormalizerError as exc:
            return exc
        err = res.output - exact
        return [variant.value, args.ortho, direction.value, args.L, args.d, m, s,
                float(np.max(np.abs(err))), float(np.mean(err * err)), res.renormalizer_min]

    jobs = [(v, m, s) for v in args.variant for m in args.m for s in range(args.seeds)]
    for result in _map(run, jobs, args.threads):
        if isinstance(result, NonPositiveRenormalizerError):
            raise result
        out.row(result)


def cmd_mse_validate(args, out: CsvOut) -> None:
    out.columns(["variant", "m", "norm_x", "norm_y", "angle", "closed_form", "empirical",
                 "std_error", "z_score", "hyp_pos_ratio", "expected_ratio"])
    for i, (nx, ny) in enumerate(args.norms):
        for j, angle in enumerate(DEFAULT_ANGLES):
            p = KernelPoint.from_polar(nx, ny, angle, args.d)
            zz = float(p.z @ p.z)
            for mi, m in enumerate(args.m):
                pos = mse_pos_closed(p, m)
                ratio = mse_hyp_closed(p, m) / pos if pos > 0 else math.nan
                expected = 0.5 * -math.expm1(-zz) if pos > 0 else math.nan
                for vi, variant in enumerate(args.variant):
                    spec = FeatureMapSpec(variant=variant, m=m)
                    cell = (i * len(DEFAULT_ANGLES) + j) * 64 + mi * 8 + vi
                    plan = lab.TrialPlan(p, spec, args.trials, args.seed, stream_base=cell)
                    rep = lab.run_kernel_trials(plan, args.threads, lab.ReferenceKind.MSE_CLOSED)
                    out.row([variant.value, m, nx, ny, angle, rep.reference_value,
                             rep.empirical_mse, rep.std_error_of_mse, rep.z_score, ratio,
                             expected])


def cmd_ortho_gap(args, out: CsvOut) -> None:
    for m in args.m:
        if not 1 <= m <= args.d:
            raise UsageError(f"orthogonal features need 1 <= m <= d, got m={m}, d={args.d}")
    out.columns(["point", "m", "d", "norm_x", "norm_y", "mse_iid", "mse_ort", "gap_bound",
                 "gap_exact", "combined_se", "pass"])
    gen = RngStream(args.seed, 0).generator()
    points = [KernelPoint(lab.ball_inputs(1, args.d, args.radius, gen)[0],
                          lab.ball_inputs(1, args.d, args.radius, gen)[0])
              for _ in range(args.points)]
    for i, p in enumerate(points):
        for m in args.m:
            r = lab.ortho_gap_experiment(p, m, args.trials, seed=args.seed + 1 + i * 64 + m,
                                         threads=args.threads)
            out.row([i, m, args.d, float(np.linalg.norm(p.x)), float(np.linalg.norm(p.y)),
                     r.mse_iid, r.mse_ort, r.gap_bound, ortho_gap_exact(p, m), r.combined_se,
                     r.passed])


def cmd_smreg_check(args, out: CsvOut) -> None:
    out.columns(["d", "norm_x", "norm_y", "angle", "sm", "smreg", "ratio", "ok"])
    violations = 0
    for d in args.d:
        gen = RngStream(args.seed, d).generator()
        e1 = np.zeros(d)
        e1[0] = 1.0
        points = [KernelPoint(np.zeros(d), np.zeros(d)), KernelPoint(e1, e1)]
        points += [KernelPoint(lab.ball_inputs(1, d, args.radius, gen)[0],
                               lab.ball_inputs(1, d, args.radius, gen)[0])
                   for _ in range(args.points)]
        for p in points:
            sm, reg = sm_exact(p), smreg_series(p)
            ratio = reg / sm
            ok = d < 2 or ratio <= 1.0 + 1e-12
            violations += not ok
            nx, ny = float(np.linalg.norm(p.x)), float(np.linalg.norm(p.y))
            cos = p.dot / (nx * ny) if nx > 0 and ny > 0 else 1.0
            out.row([d, nx, ny, math.acos(max(-1.0, min(1.0, cos))), sm, reg, ratio, ok])
    out.comment(f"violations={violations}")


def cmd_bench(args, out: CsvOut) -> None:
    out.columns(["L", "d", "m", "mechanism", "direction", "wall_time_ns_median",
                 "peak_bytes_estimate", "max_abs_err", "mse", "seed"])
    defaults = {"favor": [1024, 2048, 4096, 8192], "opt": [1024, 2048, 4096, 8192],
                "exact": [256, 512, 1024, 2048]}
    slopes = []
    for mech in args.mechanism:
        sizes = args.L or defaults[mech]
        if mech == "exact" and max(sizes) > args.l_cap:
            raise ResourceGuardError(f"exact attention refused for L={max(sizes)} > cap {args.l_cap}")
        recs = [bench.bench_one(mech, L, args.d, args.m[0], seed=args.seed, repeats=args.repeats,
                                direction=Direction(args.direction), with_error=args.with_error,
                                exact_cap=args.l_cap)
                for L in sizes]
        for r in recs:
            out.row([r.L, r.d, r.m, r.mechanism, r.direction, r.wall_time_ns_median,
                     r.peak_bytes_estimate, r.max_abs_err, r.mse, r.seed])
        if len(recs) >= 2:
            slopes.append((mech, bench.loglog_slope([r.L for r in recs],
                                                    [r.wall_time_ns_median for r in recs])))
    for mech, slope in slopes:
        out.comment(f"loglog_slope,{mech},{slope:.4f}")


def cmd_features_dump(args, out: CsvOut) -> None:
    spec = FeatureMapSpec(variant=args.variant[0], m=args.m[0], ortho=OrthoMode(args.ortho))
    if args.input:
        x = np.loadtxt(args.input, delimiter=",", ndmin=2, comments="#")
        d = x.shape[1]
    else:
        d = args.d
        x = RngStream(args.seed, 1).generator().standard_normal((args.L, d)) * d ** -0.25
    ens = build_ensemble(spec, d, RngStream(args.seed, 0))
    feats = apply_feature_map(spec, ens, x)
    width = max(d, feats.shape[1])
    out.comment(f"variant={spec.variant.value} ortho={spec.ortho.value} m={spec.m} d={d} "
                f"norm_mode={ens.norm_mode.value} seed={args.seed} "
                f"block_boundaries={' '.join(map(str, ens.block_boundaries))}")
    out.columns(["kind", "row"] + [f"c{i}" for i in range(width)])
    for i, row in enumerate(ens.omega):
        out.row(["omega", i] + list(row) + [None] * (width - d))
    for i, row in enumerate(x):
        out.row(["input", i] + list(row) + [None] * (width - d))
    for i, row in enumerate(feats):
        out.row(["feature", i] + list(row) + [None] * (width - feats.shape[1]))


def _map(fn, jobs, threads: int):
    if threads <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# -- argument parsing --------------------------------------------------------

def _common(p: argparse.ArgumentParser, *, d=16, m="256", L=256, variant="pos", trials=100_000,
            seeds=15):
    """Flags shared by every subcommand. String defaults for d/L mean a comma list."""
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--d", type=_int_list if isinstance(d, str) else int,
                   default=_int_list(d) if isinstance(d, str) else d)
    p.add_argument("--m", type=_int_list, default=_int_list(m))
    p.add_argument("--L", type=_int_list if isinstance(L, str) or L is None else int, default=L)
    p.add_argument("--variant", type=_variant_list, default=_variant_list(variant))
    p.add_argument("--ortho", choices=[o.value for o in OrthoMode], default="iid")
    p.add_argument("--stabilizer", type=float, default=None)
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--seeds", type=int, default=seeds)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="-")
    p.add_argument("--csv-header", choices=["on", "off"], default="on")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="favorlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attention-compare", help="FAVOR output error vs exact attention")
    _common(p)
    p.add_argument("--direction", choices=[d.value for d in Direction], default="bi")
    p.add_argument("--input", choices=["gaussian", "antipodal"], default="gaussian")
    p.set_defaults(func=cmd_attention_compare)

    p = sub.add_parser("mse-validate", help="empirical vs closed-form estimator MSE")
    _common(p, m="1", variant="trig,pos,hyp")
    p.add_argument("--norms", type=_pairs, default=list(DEFAULT_GRID),
                   help="comma-separated nx:ny pairs (default: %(default)s)")
    p.set_defaults(func=cmd_mse_validate)

    p = sub.add_parser("ortho-gap", help="orthogonal vs iid MSE against the gap bound")
    _common(p, m="2,4,8", trials=200_000)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--radius", type=float, default=1.0)
    p.set_defaults(func=cmd_ortho_gap)

    p = sub.add_parser("smreg-check", help="regularized kernel never exceeds softmax")
    _common(p, d="2,4,16,64")
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--radius", type=float, default=2.0)
    p.set_defaults(func=cmd_smreg_check)

    p = sub.add_parser("bench", help="time and memory scaling with sequence length")
    _common(p, d=64, L=None)
    p.add_argument("--mechanism", type=lambda t: t.split(","), default=["favor", "exact", "opt"])
    p.add_argument("--direction", choices=[d.value for d in Direction], default="bi")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--l-cap", type=int, default=bench.EXACT_L_CAP)
    p.add_argument("--with-error", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("features-dump", help="write projections and mapped features")
    _common(p, m="8", L=4)
    p.add_argument("--input", default=None, help="CSV file of input rows")
    p.set_defaults(func=cmd_features_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = CsvOut(args.csv_header == "on")
    try:
        args.func(args, out)
    except (UsageError, ValueError) as exc:
        print(f"favorlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonPositiveRenormalizerError as exc:
        print(f"favorlab: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ResourceGuardError, MemoryError) as exc:
        print(f"favorlab: resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    text = out.buf.getvalue()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
