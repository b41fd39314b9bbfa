"""Teacher training, student construction, distillation and frozen baselines."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .codec import ENCODERS, ModelState, encode, forward, init_codec, rd_objective
from .data import ImageRecord, random_crop
from .entropy import NOISE
from .layers import ReductionSpec, init_params, reduce_width, reproject
from .losses import kd_loss, kd_loss_hyper
from .optim import AdamState, adam_step
from .rng import DATA, INIT, NOISE as NOISE_STREAM, SUBSAMPLE, make_rng
from .tensor import ContractError, DimensionError, Tensor

log = logging.getLogger(__name__)

REGIMES = ("teacher", "kd", "frozen")
LOG_COLUMNS = ("step", "total", "rate_y_bits", "rate_z_bits", "mse", "kd_loss")
PIXEL_PEAK = 255.0


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    lam: float = 0.01
    rho_percent: float = 100.0
    r: float = 1
    steps: int = 2000
    batch_size: int = 8
    patch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    regime: str = "teacher"

    def __post_init__(self):
        if not 0 < self.rho_percent <= 100:
            raise ContractError(f"rho_percent must lie in (0, 100], got {self.rho_percent}")
        if self.steps < 0:
            raise ContractError("steps must be non-negative")
        if self.batch_size < 1 or self.patch_size < 16:
            raise ContractError("batch_size must be >= 1 and patch_size >= 16")
        if self.regime not in REGIMES:
            raise ContractError(f"unknown regime {self.regime!r}")
        if self.r < 1:
            raise ContractError(f"r must be >= 1, got {self.r}")

    def to_dict(self) -> dict:
        return asdict(self)


def rd_lambda(lam: float, patch_size: int) -> float:
    """Weight on [0,1]-scale MSE that makes bits/image + w*MSE match bpp + lam*255^2*MSE."""
    return lam * PIXEL_PEAK**2 * patch_size * patch_size


def subset_size(n: int, rho_percent: float) -> int:
    # exact decimal arithmetic so 10% of 1000 is 100, not 101
    return math.ceil(Fraction(str(rho_percent)) * n / 100)


def subsample_dataset(items: Sequence, rho_percent: float, seed: int) -> list:
    """Fisher-Yates shuffle with the SUBSAMPLE stream, keep the first ceil(rho% * n)."""
    if not items:
        raise ContractError("subsample_dataset: empty dataset")
    if not 0 < rho_percent <= 100:
        raise ContractError(f"subsample_dataset: rho_percent must lie in (0, 100], got {rho_percent}")
    rng = make_rng(seed, SUBSAMPLE)
    order = list(items)
    for i in range(len(order) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order[: subset_size(len(order), rho_percent)]


def _probe_batch(data: Sequence[ImageRecord], patch: int) -> np.ndarray:
    """Centre crops of the first (up to) 8 images: a fixed batch for before/after losses."""
    crops = []
    for rec in data[:8]:
        top, left = (rec.height - patch) // 2, (rec.width - patch) // 2
        crops.append(rec.pixels[:, top : top + patch, left : left + patch])
    return np.stack(crops)


def _rd_step_loss(state: ModelState, x: np.ndarray, cfg: TrainConfig, rng) -> tuple[Tensor, dict]:
    out = forward(state, x, NOISE, rng)
    lb = rd_objective(state, x, out, rd_lambda(cfg.lam, cfg.patch_size))
    return lb.total, {**lb.row(), "kd_loss": ""}


def _kd_step_loss(student: ModelState, teacher: ModelState, x: np.ndarray) -> tuple[Tensor, dict]:
    with T.no_grad():
        y_t, z_t = encode(teacher, x)
    y_s, z_s = encode(student, x)
    if y_t.shape != y_s.shape:
        raise DimensionError(f"student latent {y_s.shape} does not match teacher latent {y_t.shape}")
    loss = kd_loss(y_t, y_s) if z_t is None else kd_loss_hyper(y_t, z_t, y_s, z_s)
    val = loss.item()
    return loss, {"total": val, "rate_y_bits": "", "rate_z_bits": "", "mse": "", "kd_loss": val}


def _train_loop(
    state: ModelState,
    step_loss: Callable[[np.ndarray, np.random.Generator], tuple[Tensor, dict]],
    cfg: TrainConfig,
    data: Sequence[ImageRecord],
) -> ModelState:
    if not data:
        raise ContractError("training needs at least one image")
    if cfg.patch_size % state.downsampling:
        raise ContractError(f"patch_size {cfg.patch_size} is not a multiple of the codec downsampling {state.downsampling}")
    subset = subsample_dataset(list(data), cfg.rho_percent, cfg.seed)
    data_rng = make_rng(cfg.seed, DATA)
    noise_rng = make_rng(cfg.seed, NOISE_STREAM)
    trainable = state.trainable()
    params = [p for _, p in trainable]
    opt = AdamState(lr=cfg.lr)
    probe = _probe_batch(subset, cfg.patch_size)

    def probe_loss() -> float:
        with T.no_grad():
            return step_loss(probe, make_rng(cfg.seed, 99))[0].item()

    state.meta["initial_loss"] = probe_loss()
    state.log = []
    for step in range(cfg.steps):
        idx = data_rng.integers(0, len(subset), size=cfg.batch_size)
        x = np.stack([random_crop(subset[i], cfg.patch_size, data_rng) for i in idx])
        loss, row = step_loss(x, noise_rng)
        if not np.isfinite(loss.data):
            raise DivergenceError(step, loss.item())
        T.backward(loss)
        adam_step(opt, params)
        reproject(trainable)
        state.log.append({"step": step, **row})
    state.meta["final_loss"] = probe_loss()
    state.meta["steps"] = cfg.steps
    state.meta["subset_size"] = len(subset)
    state.meta["config"] = cfg.to_dict()
    return state


def train_teacher(
    cfg: TrainConfig, data: Sequence[ImageRecord], arch: str = "factorized", N: int = 32, M: int = 48, Nh: int = 32, Mh: int = 32
) -> ModelState:
    """Train every module of a fresh codec on the rate-distortion loss."""
    if cfg.regime != "teacher":
        raise ContractError("train_teacher needs regime='teacher'")
    state = init_codec(arch, N, M, make_rng(cfg.seed, INIT), Nh=Nh, Mh=Mh)
    state.meta["lambda"] = cfg.lam
    return _train_loop(state, lambda x, rng: _rd_step_loss(state, x, cfg, rng), cfg, data)


def make_student(
    teacher: ModelState, r: float, seed: int = 0, provenance: str = "", copy_encoder: bool = False
) -> ModelState:
    """Reduced-width encoder(s) in front of the teacher's frozen decoder and entropy model.

    With ``copy_encoder`` (r=1 only) the encoder weights are copied rather
    than freshly initialized, giving the KD fixed point.
    """
    if copy_encoder and r != 1:
        raise ContractError("copy_encoder requires r=1")
    reduction = ReductionSpec(r)
    rng = make_rng(seed, INIT)
    specs = dict(teacher.specs)
    params: dict[str, Tensor] = {}
    for name, p in teacher.params.items():
        module = name.split(".", 1)[0]
        if module not in ENCODERS or copy_encoder:
            params[name] = Tensor(p.data.copy(), name=name)
    if not copy_encoder:
        for role in ENCODERS:
            if role not in specs:
                continue
            specs[role] = reduce_width(teacher.specs[role], reduction)
            if specs[role].latent_channels != teacher.specs[role].latent_channels:
                raise DimensionError(f"reduced {role} changed the latent width")
            for k, v in init_params(specs[role], rng).items():
                params[f"{role}.{k}"] = v
                v.name = f"{role}.{k}"
    frozen = {m: m not in ENCODERS for m in teacher.modules}
    meta = {k: teacher.meta[k] for k in ("N", "M", "Nh", "Mh", "lambda") if k in teacher.meta}
    meta["widths"] = {role: specs[role].widths() for role in ENCODERS if role in specs}
    student = ModelState(teacher.arch, specs, params, frozen, "student", r, provenance, meta)
    log.info("student r=%s widths %s", r, meta["widths"])
    return student


def distill(student: ModelState, teacher: ModelState, cfg: TrainConfig, data: Sequence[ImageRecord]) -> ModelState:
    """Train only the student encoder(s) to reproduce the teacher's continuous latents."""
    if cfg.regime != "kd":
        raise ContractError("distill needs regime='kd'")
    if student.arch != teacher.arch:
        raise DimensionError("student and teacher architectures differ")
    teacher.zero_grad()
    for p in teacher.params.values():
        p.requires_grad = False
    try:
        return _train_loop(student, lambda x, rng: _kd_step_loss(student, teacher, x), cfg, data)
    finally:
        teacher.apply_freezing()


def train_frozen_baseline(student: ModelState, cfg: TrainConfig, data: Sequence[ImageRecord]) -> ModelState:
    """Train the reduced encoder(s) from scratch on the RD loss through the frozen decoder."""
    if cfg.regime != "frozen":
        raise ContractError("train_frozen_baseline needs regime='frozen'")
    student.meta["lambda"] = cfg.lam
    return _train_loop(student, lambda x, rng: _rd_step_loss(student, x, cfg, rng), cfg, data)


def paired_config(cfg: TrainConfig, regime: str) -> TrainConfig:
    """Same (r, rho, lambda, steps, seed) under the other student regime."""
    return TrainConfig(**{**cfg.to_dict(), "regime": regime})


def check_step_parity(kd_log: list[dict], frozen_log: list[dict]) -> int:
    if len(kd_log) != len(frozen_log):
        raise ContractError(f"step parity violated: KD ran {len(kd_log)} steps, frozen {len(frozen_log)}")
    return len(kd_log)


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in LOG_COLUMNS})

