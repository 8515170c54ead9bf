"""Log-log slope of forward time vs sequence length for exact and FAVOR attention."""

import argparse

from favorlab.bench import bench_one, loglog_slope


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--m", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    plans = {"favor": [1024, 2048, 4096, 8192], "opt": [1024, 2048, 4096, 8192],
             "exact": [256, 512, 1024, 2048]}
    for mech, sizes in plans.items():
        recs = [bench_one(mech, L, args.d, args.m, repeats=args.repeats) for L in sizes]
        for r in recs:
            print(f"{mech:>6} L={r.L:5d} median {r.wall_time_ns_median / 1e6:9.3f} ms  "
                  f"peak {r.peak_bytes_estimate / 2 ** 20:8.2f} MiB")
        slope = loglog_slope(sizes, [r.wall_time_ns_median for r in recs])
        print(f"{mech:>6} slope {slope:.2f}")


if __name__ == "__main__":
    main()
