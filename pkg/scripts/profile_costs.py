#!/usr/bin/env python3
"""Print the static MACs/parameter decomposition at the reference input
sizes, plus optional wall-clock latency."""

import argparse

from lwanet import NetworkConfig, benchmark_latency, build, count_model

SIZES = [(256, 320), (512, 640), (544, 960)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--num-classes", type=int, default=11)
    ap.add_argument("--latency", action="store_true", help="also time forwards")
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--full-table", action="store_true", help="per-layer rows")
    args = ap.parse_args()

    for h, w in SIZES:
        model = build(NetworkConfig(num_classes=args.num_classes, input_hw=(h, w)))
        report = count_model(model, (1, 3, h, w))
        print(f"\n=== {w}x{h} ===")
        if args.full_table:
            print(report.format_table())
        else:
            for stage, info in report.stage_summary().items():
                print(f"{stage:<8} {info['macs'] / 1e9:8.4f} G  {info['percent']:6.2f}%"
                      f"  {info['params']:,} params")
            print(f"{'total':<8} {report.total_macs / 1e9:8.4f} G"
                  f"            {report.total_params:,} params")
        if args.latency:
            stats = benchmark_latency(model, (h, w), warmup=1, iters=args.iters)
            print(f"latency  {stats['mean_ms']:.1f} ms mean, {stats['fps']:.2f} fps")


if __name__ == "__main__":
    main()
