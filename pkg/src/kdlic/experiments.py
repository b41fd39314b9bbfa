"""Desk-scale experiment drivers shared by scripts/ and the acceptance suite."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import ModelState
from .data import ImageRecord, synth_dataset
from .evaluation import NoOverlapError, RDCurve, RDPoint, bd_csv, bd_metrics, eval_model, rd_csv
from .training import TrainConfig, distill, make_student, train_frozen_baseline, train_teacher, write_log

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1000


@dataclass(frozen=True)
class DeskConfig:
    N: int = 32
    M: int = 48
    n_train: int = 512
    n_eval: int = 16
    size: int = 64
    lambdas: tuple[float, ...] = (0.001, 0.01, 0.1)
    steps: int = 2000
    batch: int = 8
    patch: int = 64
    lr: float = 1e-3
    seed: int = 0
    kd_r: float = 2
    kd_rho: float = 10


@dataclass
class DeskResult:
    cfg: DeskConfig
    train: list[ImageRecord]
    eval: list[ImageRecord]
    teachers: dict[float, ModelState] = field(default_factory=dict)
    students: dict[float, ModelState] = field(default_factory=dict)
    teacher_curve: RDCurve | None = None
    kd_curve: RDCurve | None = None
    copy_points: dict[float, RDPoint] = field(default_factory=dict)
    seconds: float = 0.0


def desk_datasets(cfg: DeskConfig) -> tuple[list[ImageRecord], list[ImageRecord]]:
    return (
        synth_dataset(cfg.n_train, cfg.size, cfg.seed),
        synth_dataset(cfg.n_eval, cfg.size, cfg.seed + EVAL_SEED_OFFSET),
    )


def _tc(cfg: DeskConfig, lam: float, regime: str, r: float = 1, rho: float = 100, seed: int | None = None, steps: int | None = None):
    return TrainConfig(
        lam, rho, r, cfg.steps if steps is None else steps, cfg.batch, cfg.patch, cfg.lr, cfg.seed if seed is None else seed, regime
    )


def run_desk(cfg: DeskConfig = DeskConfig(), out_dir: str | Path | None = None) -> DeskResult:
    """Teachers per lambda, KD students at (kd_r, kd_rho), r=1 copies, and their RD curves."""
    t0 = time.perf_counter()
    train, evalset = desk_datasets(cfg)
    res = DeskResult(cfg, train, evalset)
    t_pts, kd_pts = [], []
    for lam in cfg.lambdas:
        teacher = train_teacher(_tc(cfg, lam, "teacher"), train, "factorized", cfg.N, cfg.M)
        res.teachers[lam] = teacher
        t_pts.append(eval_model(teacher, evalset, "teacher"))
        log.info("teacher lambda=%g loss %.1f -> %.1f, %s", lam, teacher.meta["initial_loss"], teacher.meta["final_loss"], t_pts[-1])

        student = make_student(teacher, cfg.kd_r, seed=cfg.seed, provenance=f"teacher_lam{lam:g}")
        distill(student, teacher, _tc(cfg, lam, "kd", cfg.kd_r, cfg.kd_rho), train)
        res.students[lam] = student
        kd_pts.append(eval_model(student, evalset, f"kd_r{cfg.kd_r:g}_rho{cfg.kd_rho:g}"))
        log.info("kd lambda=%g loss %.3f -> %.3f", lam, student.meta["initial_loss"], student.meta["final_loss"])

        copy = make_student(teacher, 1, copy_encoder=True)
        res.copy_points[lam] = eval_model(copy, evalset, "teacher")
    res.teacher_curve = RDCurve("teacher", t_pts)
    res.kd_curve = RDCurve(kd_pts[0].model_id, kd_pts)
    res.seconds = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rd.csv").write_text(rd_csv([res.teacher_curve, res.kd_curve]))
        for lam in cfg.lambdas:
            write_log(res.teachers[lam].log, out / f"teacher_lam{lam:g}.log.csv")
            write_log(res.students[lam].log, out / f"kd_lam{lam:g}.log.csv")
    return res


@dataclass
class TrendResult:
    rows: list[dict]
    median_kd: float
    median_frozen: float
    median_psnr_kd: float
    median_psnr_frozen: float
    rd_csv: str
    bd_csv: str

    @property
    def kd_not_worse(self) -> bool:
        return self.median_kd <= self.median_frozen

    @property
    def frozen_degrades(self) -> bool:
        return self.median_frozen > 0


def _bd_row(anchor: RDCurve, test: RDCurve, seed: int, regime: str) -> dict:
    row = {"anchor_id": anchor.model_id, "test_id": test.model_id, "seed": seed, "regime": regime}
    try:
        res = bd_metrics(anchor, test)
        row.update(bd_rate_percent=res.bd_rate_percent, bd_psnr_db=res.bd_psnr_db, overlap_lo=res.overlap[0], overlap_hi=res.overlap[1])
    except NoOverlapError as exc:
        log.warning("%s seed %d: %s", regime, seed, exc)
        row.update(bd_rate_percent=float("nan"), bd_psnr_db=float("nan"), overlap_lo=float("nan"), overlap_hi=float("nan"))
    return row


def _median(values: list[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    return statistics.median(finite) if finite else float("nan")


def run_trend(
    desk: DeskResult,
    seeds: tuple[int, ...] = (0, 1, 2),
    r: float = 4,
    rho: float = 1,
    steps: int = 500,
    out_dir: str | Path | None = None,
) -> TrendResult:
    """KD vs frozen baseline at one (r, rho) over several student seeds, both against the teacher anchor."""
    cfg = desk.cfg
    curves: list[RDCurve] = [desk.teacher_curve]
    rows = []
    for seed in seeds:
        per = {"kd": [], "frozen": []}
        for lam, teacher in desk.teachers.items():
            for regime in ("kd", "frozen"):
                mid = f"{regime}_r{r:g}_rho{rho:g}_seed{seed}"
                student = make_student(teacher, r, seed=seed, provenance=f"teacher_lam{lam:g}")
                tc = _tc(cfg, lam, regime, r, rho, seed=seed, steps=steps)
                if regime == "kd":
                    distill(student, teacher, tc, desk.train)
                else:
                    train_frozen_baseline(student, tc, desk.train)
                per[regime].append(eval_model(student, desk.eval, mid))
        for regime, pts in per.items():
            c = RDCurve(pts[0].model_id, pts)
            curves.append(c)
            rows.append(_bd_row(desk.teacher_curve, c, seed, regime))
        log.info("trend seed %d: %s", seed, rows[-2:])
    res = TrendResult(
        rows,
        _median([row["bd_rate_percent"] for row in rows if row["regime"] == "kd"]),
        _median([row["bd_rate_percent"] for row in rows if row["regime"] == "frozen"]),
        _median([row["bd_psnr_db"] for row in rows if row["regime"] == "kd"]),
        _median([row["bd_psnr_db"] for row in rows if row["regime"] == "frozen"]),
        rd_csv(curves),
        bd_csv(rows),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trend_rd.csv").write_text(res.rd_csv)
        (out / "trend_bd.csv").write_text(res.bd_csv)
        summary = {
            "median_bd_rate_kd": res.median_kd,
            "median_bd_rate_frozen": res.median_frozen,
            "median_bd_psnr_kd": res.median_psnr_kd,
            "median_bd_psnr_frozen": res.median_psnr_frozen,
            "r": r,
            "rho": rho,
            "steps": steps,
            "seeds": list(seeds),
        }
        (out / "trend_summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    return res
