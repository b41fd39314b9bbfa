"""RD points and curves, PSNR, and Bjontegaard deltas."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .codec import ModelState, forward
from .data import DataError, ImageRecord
from .entropy import NOISE, ROUND
from .rng import make_rng
from .tensor import DimensionError

RD_COLUMNS = ("model_id", "lambda", "bpp", "psnr_db")
BD_COLUMNS = ("anchor_id", "test_id", "bd_rate_percent", "bd_psnr_db", "overlap_lo", "overlap_hi")
BLOCK = 16


class NoOverlapError(ValueError):
    """The two RD curves share no rate (or quality) interval."""


def psnr(x, x_hat) -> float:
    """PSNR in dB on the [0, 1] scale; identical images give ``math.inf``."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"psnr: shapes differ {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - np.clip(x_hat, 0.0, 1.0)) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr_db: float
    model_id: str = ""
    lam: float | None = None


@dataclass
class RDCurve:
    model_id: str
    points: list[RDPoint] = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr_db for p in self.points])


# ---------------------------------------------------------------- model evaluation


def _pad_to(x: np.ndarray, multiple: int) -> np.ndarray:
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not (ph or pw):
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")


def eval_image(state: ModelState, record: ImageRecord) -> tuple[float, float]:
    """(bpp, PSNR) of one image with rounding quantization."""
    h, w = record.height, record.width
    if h < BLOCK or w < BLOCK:
        raise DataError(f"{record.id}: {h}x{w} is smaller than one {BLOCK}x{BLOCK} block")
    x = _pad_to(record.pixels[None], state.downsampling)
    with T.no_grad():
        out = forward(state, x, ROUND)
    bits = -np.log2(out["y_likelihoods"].data).sum()
    if out["z_likelihoods"] is not None:
        bits += -np.log2(out["z_likelihoods"].data).sum()
    x_hat = out["x_hat"].data[0, :, :h, :w]
    return float(bits / (h * w)), psnr(record.pixels, x_hat)


def eval_model(state: ModelState, images: Sequence[ImageRecord], model_id: str = "") -> RDPoint:
    """Dataset-mean bpp and arithmetic mean of per-image PSNR, in dataset order."""
    if not images:
        raise DataError("eval_model: no images")
    results = [eval_image(state, rec) for rec in images]
    bpp = float(np.mean([b for b, _ in results]))
    db = float(np.mean([p for _, p in results]))
    lam = state.meta.get("lambda")
    return RDPoint(bpp, db, model_id, None if lam is None else float(lam))


def noise_vs_round_bpp(state: ModelState, images: Sequence[ImageRecord], seed: int = 0) -> tuple[float, float]:
    """bpp under training-time noise and under rounding, for the proxy-gap log line."""
    rng = make_rng(seed, 7)
    noisy, rounded = [], []
    for rec in images:
        x = _pad_to(rec.pixels[None], state.downsampling)
        with T.no_grad():
            o_n = forward(state, x, NOISE, rng)
            o_r = forward(state, x, ROUND)
        for store, o in ((noisy, o_n), (rounded, o_r)):
            bits = -np.log2(o["y_likelihoods"].data).sum()
            if o["z_likelihoods"] is not None:
                bits += -np.log2(o["z_likelihoods"].data).sum()
            store.append(bits / (rec.height * rec.width))
    return float(np.mean(noisy)), float(np.mean(rounded))


# ---------------------------------------------------------------- Bjontegaard


@dataclass(frozen=True)
class BDResult:
    bd_rate_percent: float
    bd_psnr_db: float
    overlap: tuple[float, float]  # bpp interval shared by both curves
    psnr_overlap: tuple[float, float]


def _fit_order(n: int) -> int:
    return 3 if n >= 4 else 2


def _check_curve(c: RDCurve) -> None:
    if len(c.points) < 3:
        raise DataError(f"curve {c.model_id!r}: BD needs at least 3 points, got {len(c.points)}")
    if np.any(c.rates <= 0) or not np.isfinite(c.rates).all():
        raise DataError(f"curve {c.model_id!r}: rates must be positive and finite")
    if not np.isfinite(c.psnrs).all():
        raise DataError(f"curve {c.model_id!r}: PSNR must be finite")


def _mean_gap(x_a, y_a, x_t, y_t, what: str) -> tuple[float, tuple[float, float]]:
    """Mean of (fit_t - fit_a) over the shared x interval, by exact antiderivatives."""
    lo, hi = max(x_a.min(), x_t.min()), min(x_a.max(), x_t.max())
    if not hi > lo:
        raise NoOverlapError(f"no overlapping {what} interval: [{x_a.min():.4g}, {x_a.max():.4g}] vs [{x_t.min():.4g}, {x_t.max():.4g}]")
    p_a = np.polyint(np.polyfit(x_a, y_a, _fit_order(len(x_a))))
    p_t = np.polyint(np.polyfit(x_t, y_t, _fit_order(len(x_t))))
    area = (np.polyval(p_t, hi) - np.polyval(p_t, lo)) - (np.polyval(p_a, hi) - np.polyval(p_a, lo))
    return float(area / (hi - lo)), (float(lo), float(hi))


def bd_metrics(anchor: RDCurve, test: RDCurve) -> BDResult:
    """BD-rate (%) and BD-PSNR (dB) of ``test`` relative to ``anchor``.

    PSNR is fitted as a polynomial in log10(bpp) and vice versa (cubic with
    four or more points, quadratic with three).
    """
    _check_curve(anchor)
    _check_curve(test)
    lr_a, lr_t = np.log10(anchor.rates), np.log10(test.rates)
    d_psnr, (lo, hi) = _mean_gap(lr_a, anchor.psnrs, lr_t, test.psnrs, "log-rate")
    d_lograte, q_overlap = _mean_gap(anchor.psnrs, lr_a, test.psnrs, lr_t, "PSNR")
    return BDResult((10.0**d_lograte - 1.0) * 100.0, d_psnr, (10.0**lo, 10.0**hi), q_overlap)


# ---------------------------------------------------------------- CSV surfaces


def _fmt(v: float) -> str:
    return repr(float(v))


def rd_csv(curves: Iterable[RDCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RD_COLUMNS)
    for c in curves:
        for p in c.points:
            w.writerow([c.model_id, "" if p.lam is None else _fmt(p.lam), _fmt(p.bpp), _fmt(p.psnr_db)])
    return buf.getvalue()


def read_rd_csv(path: str | os.PathLike) -> dict[str, RDCurve]:
    """Curves keyed by model_id, in first-appearance order."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RD_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(RD_COLUMNS)}")
        grouped: dict[str, list[RDPoint]] = {}
        for line, row in enumerate(reader, start=2):
            try:
                pt = RDPoint(float(row["bpp"]), float(row["psnr_db"]), row["model_id"], float(row["lambda"]) if row["lambda"] else None)
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line}: malformed RD row") from None
            grouped.setdefault(row["model_id"], []).append(pt)
    if not grouped:
        raise DataError(f"{path}: no RD points")
    return {k: RDCurve(k, v) for k, v in grouped.items()}


def bd_rows(anchor: RDCurve, tests: Iterable[RDCurve]) -> list[dict]:
    rows = []
    for t in tests:
        res = bd_metrics(anchor, t)
        rows.append(
            {
                "anchor_id": anchor.model_id,
                "test_id": t.model_id,
                "bd_rate_percent": res.bd_rate_percent,
                "bd_psnr_db": res.bd_psnr_db,
                "overlap_lo": res.overlap[0],
                "overlap_hi": res.overlap[1],
            }
        )
    return rows


def bd_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BD_COLUMNS)
    for r in rows:
        w.writerow([r["anchor_id"], r["test_id"]] + [f"{r[k]:.6f}" for k in BD_COLUMNS[2:]])
    return buf.getvalue()


@dataclass
class ComparisonReport:
    rd_csv: str
    bd_csv: str
    rows: list[dict]


def fig1_style_comparison(
    teacher: RDCurve, reduced: Sequence[RDCurve], out_dir: str | os.PathLike | None = None
) -> ComparisonReport:
    """Combined RD table plus a BD table of every reduced curve against the teacher anchor."""
    rows = bd_rows(teacher, reduced)
    report = ComparisonReport(rd_csv([teacher, *reduced]), bd_csv(rows), rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rd.csv").write_text(report.rd_csv)
        (out / "bd.csv").write_text(report.bd_csv)
    return report
