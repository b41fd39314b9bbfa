"""Desk-scale pipeline: teachers, KD students, r=1 copies, then the KD vs frozen trend.

    python3 scripts/desk_pipeline.py --out results/desk [--steps 2000] [--trend-steps 500]
"""

import argparse
import logging
import time

from kdlic.experiments import DeskConfig, run_desk, run_trend


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/desk")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--trend-steps", type=int, default=500)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--no-trend", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    desk = run_desk(DeskConfig(steps=args.steps), args.out)
    print(f"desk pipeline: {desk.seconds:.0f} s")
    for p in desk.teacher_curve.points + desk.kd_curve.points:
        print(f"  {p.model_id:<16} lambda={p.lam:<6g} bpp={p.bpp:.4f} psnr={p.psnr_db:.2f}")
    if args.no_trend:
        return
    t0 = time.perf_counter()
    trend = run_trend(desk, tuple(args.seeds), steps=args.trend_steps, out_dir=args.out)
    print(trend.bd_csv)
    print(f"median BD-rate: KD {trend.median_kd:.2f}%  frozen {trend.median_frozen:.2f}%")
    print(f"median BD-PSNR: KD {trend.median_psnr_kd:.3f} dB  frozen {trend.median_psnr_frozen:.3f} dB  ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
