"""Command-line entry point: ``kdlic <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as C
from .checkpoint import load_checkpoint, save_checkpoint
from .complexity import encoder_family, relative_report, report_csv, report_text
from .data import DataError, FormatError, load_dir, save_dir, synth_dataset
from .evaluation import NoOverlapError, RDCurve, bd_csv, bd_rows, eval_model, rd_csv, read_rd_csv
from .tensor import ContractError, NumericError
from .training import (
    DivergenceError,
    TrainConfig,
    check_step_parity,
    distill,
    make_student,
    train_frozen_baseline,
    train_teacher,
    write_log,
)

log = logging.getLogger("kdlic")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _fmt(v: float) -> str:
    return f"{v:g}"


def family_id(regime: str, r: float = 1, rho: float = 100) -> str:
    return "teacher" if regime == "teacher" else f"{regime}_r{_fmt(r)}_rho{_fmt(rho)}"


def _out_dir(cfg: C.RunConfig) -> Path:
    if cfg.output_dir is None:
        raise C.ConfigError("output_dir is required (config or --out)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_data(cfg: C.RunConfig):
    if cfg.data.train_dir is None:
        raise C.ConfigError("data.train_dir is required (config or --data)")
    return load_dir(cfg.data.train_dir)


def _train_cfg(cfg: C.RunConfig, lam: float, regime: str, r: float = 1, rho: float = 100) -> TrainConfig:
    t = cfg.train
    return TrainConfig(lam, rho, r, t.steps, t.batch, t.patch, t.lr, t.seed, regime)


def _finish(state, out: Path, stem: str) -> Path:
    ckpt = out / f"{stem}.licd"
    save_checkpoint(state, ckpt)
    write_log(state.log, out / f"{stem}.log.csv")
    log.info("wrote %s (loss %.6g -> %.6g)", ckpt, state.meta["initial_loss"], state.meta["final_loss"])
    return ckpt


# ---------------------------------------------------------------- commands


def cmd_train_teacher(cfg: C.RunConfig) -> list[Path]:
    out, data = _out_dir(cfg), _train_data(cfg)
    m = cfg.model
    written = []
    for lam in cfg.grid.lambdas:
        state = train_teacher(_train_cfg(cfg, lam, "teacher"), data, cfg.arch, m.N, m.M, m.Nh, m.Mh)
        state.meta["family"] = family_id("teacher")
        written.append(_finish(state, out, f"teacher_lam{_fmt(lam)}"))
    return written


def _students(cfg: C.RunConfig, teachers: list[str], regime: str) -> list[Path]:
    if not teachers:
        raise C.ConfigError("at least one teacher checkpoint is required")
    out, data = _out_dir(cfg), _train_data(cfg)
    written = []
    for tpath in teachers:
        teacher = load_checkpoint(tpath)
        if teacher.role != "teacher":
            raise C.ConfigError(f"{tpath} is not a teacher checkpoint")
        lam = float(teacher.meta.get("lambda", cfg.grid.lambdas[0]))
        for r in cfg.grid.r:
            for rho in cfg.grid.rho:
                tc = _train_cfg(cfg, lam, regime, r, rho)
                student = make_student(teacher, r, seed=cfg.train.seed, provenance=Path(tpath).name)
                log.info("%s r=%s rho=%s lambda=%s effective widths %s", regime, _fmt(r), _fmt(rho), _fmt(lam), student.meta["widths"])
                if regime == "kd":
                    distill(student, teacher, tc, data)
                else:
                    train_frozen_baseline(student, tc, data)
                student.meta["lambda"] = lam
                student.meta["family"] = family_id(regime, r, rho)
                twin = out / f"{family_id('frozen' if regime == 'kd' else 'kd', r, rho)}_lam{_fmt(lam)}.log.csv"
                if twin.exists():
                    twin_steps = sum(1 for _ in open(twin)) - 1
                    n = check_step_parity(student.log, [{}] * twin_steps)
                    log.info("step parity with %s: %d steps", twin.name, n)
                written.append(_finish(student, out, f"{student.meta['family']}_lam{_fmt(lam)}"))
    return written


def cmd_distill(cfg: C.RunConfig, teachers: list[str]) -> list[Path]:
    return _students(cfg, teachers, "kd")


def cmd_train_frozen(cfg: C.RunConfig, teachers: list[str]) -> list[Path]:
    return _students(cfg, teachers, "frozen")


def cmd_eval(ckpts: list[str], data_dir: str, out: str, model_id: str | None = None) -> str:
    images = load_dir(data_dir)
    curves: dict[str, list] = {}
    for p in ckpts:
        state = load_checkpoint(p)
        mid = model_id or state.meta.get("family") or Path(p).stem
        curves.setdefault(mid, []).append(eval_model(state, images, mid))
    text = rd_csv(RDCurve(k, v) for k, v in curves.items())
    Path(out).write_text(text)
    return text


def cmd_bd(anchor_csv: str, test_csv: str, out: str, anchor_id: str | None = None) -> str:
    anchors = read_rd_csv(anchor_csv)
    if anchor_id is None:
        anchor_id = "teacher" if "teacher" in anchors else next(iter(anchors))
    if anchor_id not in anchors:
        raise DataError(f"{anchor_csv}: no curve {anchor_id!r}")
    tests = read_rd_csv(test_csv)
    text = bd_csv(bd_rows(anchors[anchor_id], tests.values()))
    Path(out).write_text(text)
    return text


def cmd_analyze(arch: str, N: int, M: int, rs: list[float], out: str | None, Nh: int = 128, Mh: int = 128) -> str:
    if arch not in ("factorized", "hyper"):
        raise C.ConfigError(f"unknown arch {arch!r}")
    rows = relative_report(encoder_family(arch, N, M, Nh, Mh), rs, arch)
    text = report_csv(rows)
    if out:
        Path(out).write_text(text)
    print(report_text(rows))
    return text


def cmd_synth(n: int, size: int, seed: int, out: str) -> list[Path]:
    return save_dir(synth_dataset(n, size, seed), out)


# ---------------------------------------------------------------- argument parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--data", dest="train_dir", help="training image directory (.ppm)")
    p.add_argument("--arch", choices=("factorized", "hyper"))
    for k in ("N", "M", "Nh", "Mh", "steps", "batch", "patch", "seed"):
        p.add_argument(f"--{k}", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambdas", type=_floats)
    p.add_argument("--r", type=_floats)
    p.add_argument("--rho", type=_floats)


def _run_config(a: argparse.Namespace) -> C.RunConfig:
    cfg = C.load_config(a.config)
    keys = ("arch", "output_dir", "train_dir", "N", "M", "Nh", "Mh", "steps", "batch", "patch", "seed", "lr", "lambdas", "r", "rho")
    return C.override(cfg, **{k: getattr(a, k) for k in keys})


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kdlic", description="Knowledge distillation of learned image codec encoders.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("train-teacher", help="train one teacher per lambda"))
    for name, what in (("distill", "KD students"), ("train-frozen", "frozen baselines")):
        p = sub.add_parser(name, help=f"train {what} for every (teacher, r, rho)")
        _add_run_flags(p)
        p.add_argument("--teachers", nargs="+", required=True, help="teacher checkpoints")

    p = sub.add_parser("eval", help="RD points of checkpoints on an image directory")
    p.add_argument("--ckpts", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="rd.csv path")
    p.add_argument("--model-id")

    p = sub.add_parser("bd", help="BD-rate/BD-PSNR of test curves against an anchor curve")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--anchor-id")
    p.add_argument("--out", required=True, help="bd.csv path")

    p = sub.add_parser("analyze", help="encoder MACs/pixel and weight size per r")
    p.add_argument("--arch", default="factorized")
    p.add_argument("--N", type=int, default=128)
    p.add_argument("--M", type=int, default=192)
    p.add_argument("--Nh", type=int, default=128)
    p.add_argument("--Mh", type=int, default=128)
    p.add_argument("--r", type=_floats, default=[1, 2, 4, 8])
    p.add_argument("--out", help="complexity.csv path")

    p = sub.add_parser("synth-data", help="write a synthetic PPM dataset")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if a.command == "train-teacher":
            cmd_train_teacher(_run_config(a))
        elif a.command == "distill":
            cmd_distill(_run_config(a), a.teachers)
        elif a.command == "train-frozen":
            cmd_train_frozen(_run_config(a), a.teachers)
        elif a.command == "eval":
            cmd_eval(a.ckpts, a.data, a.out, a.model_id)
        elif a.command == "bd":
            cmd_bd(a.anchor, a.test, a.out, a.anchor_id)
        elif a.command == "analyze":
            cmd_analyze(a.arch, a.N, a.M, a.r, a.out, a.Nh, a.Mh)
        elif a.command == "synth-data":
            cmd_synth(a.n, a.size, a.seed, a.out)
    except (C.ConfigError, ContractError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, FormatError, NoOverlapError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (DivergenceError, NumericError) as exc:
        log.error("diverged: %s", exc)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
