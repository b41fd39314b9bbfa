"""Quantization, the factorized entropy bottleneck, and the Gaussian conditional."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, NumericError, Tensor

LIKELIHOOD_FLOOR = 1e-9
SCALE_MIN = 0.11
NOISE, ROUND = "noise", "round"


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize(y, mode: str, offset=None, rng: np.random.Generator | None = None) -> Tensor:
    """Additive uniform noise for training, rounding (around ``offset``) for evaluation."""
    y = T.as_tensor(y)
    if mode == NOISE:
        if offset is not None:
            raise ContractError("quantize: offset is only used in round mode")
        if rng is None:
            raise ContractError("quantize: noise mode needs an rng")
        return y + rng.uniform(-0.5, 0.5, size=y.shape)
    if mode == ROUND:
        mu = 0.0 if offset is None else T.as_tensor(offset).data
        return Tensor(round_half_away(y.data - mu) + mu)
    raise ContractError(f"quantize: unknown mode {mode!r}")


# ---------------------------------------------------------------- entropy bottleneck

EB_FILTERS = (3, 3, 3)


def init_eb_params(
    channels: int,
    rng: np.random.Generator,
    filters: tuple[int, ...] = EB_FILTERS,
    init_scale: float = 10.0,
) -> dict[str, Tensor]:
    """Per-channel monotone CDF network: len(filters)+1 stages."""
    dims = (1,) + tuple(filters) + (1,)
    scale = init_scale ** (1.0 / (len(dims) - 1))
    params: dict[str, Tensor] = {}
    for k in range(len(dims) - 1):
        init = math.log(math.expm1(1.0 / scale / dims[k + 1]))
        params[f"matrix{k}"] = Tensor(np.full((channels, dims[k + 1], dims[k]), init), True)
        params[f"bias{k}"] = Tensor(rng.uniform(-0.5, 0.5, size=(channels, dims[k + 1], 1)), True)
        if k < len(dims) - 2:
            params[f"factor{k}"] = Tensor(np.zeros((channels, dims[k + 1], 1)), True)
    return params


def _num_stages(params: dict[str, Tensor]) -> int:
    return sum(1 for k in params if k.startswith("matrix"))


def eb_logits(v: Tensor, params: dict[str, Tensor]) -> Tensor:
    """CDF logits for inputs laid out as (C, 1, L)."""
    h = v
    stages = _num_stages(params)
    for k in range(stages):
        h = T.bmm(T.softplus(params[f"matrix{k}"]), h) + params[f"bias{k}"]
        if k < stages - 1:
            h = h + T.tanh(params[f"factor{k}"]) * T.tanh(h)
    return h


def eb_cdf(v: np.ndarray, params: dict[str, Tensor]) -> np.ndarray:
    """c(v) per channel for a (C, L) array of points; no graph is recorded."""
    with T.no_grad():
        logits = eb_logits(Tensor(v[:, None, :]), params)
    return T._sigmoid(logits.data[:, 0, :])


def eb_likelihood(v, params: dict[str, Tensor], floor: float = LIKELIHOOD_FLOOR) -> Tensor:
    """p(v) = c(v + 1/2) - c(v - 1/2) per channel of a (B, C, H, W) tensor, floored."""
    v = T.as_tensor(v)
    if not np.isfinite(v.data).all():
        raise NumericError("eb_likelihood: non-finite input")
    if v.ndim != 4:
        raise DimensionError(f"eb_likelihood: expected (B, C, H, W), got {v.shape}")
    b, c, h, w = v.shape
    if params["matrix0"].shape[0] != c:
        raise DimensionError(f"eb_likelihood: model has {params['matrix0'].shape[0]} channels, input {c}")
    n = b * h * w
    flat = T.reshape(T.transpose(v, (1, 0, 2, 3)), (c, 1, n))
    logits = eb_logits(T.concat([flat - 0.5, flat + 0.5], axis=2), params)
    lower, upper = logits[:, :, :n], logits[:, :, n:]
    # evaluate on whichever tail keeps the sigmoids away from 1
    s = np.where(lower.data + upper.data > 0, -1.0, 1.0)
    p = T.absolute(T.sigmoid(upper * s) - T.sigmoid(lower * s))
    p = T.lower_bound(p, floor)
    return T.transpose(T.reshape(p, (c, b, h, w)), (1, 0, 2, 3))


# ---------------------------------------------------------------- gaussian conditional


def gaussian_conditional_likelihood(
    v, mu, sigma, scale_min: float = SCALE_MIN, floor: float = LIKELIHOOD_FLOOR
) -> Tensor:
    """Mass of N(mu, sigma^2) on the unit bin around v; sigma floored at scale_min."""
    v, mu, sigma = T.as_tensor(v), T.as_tensor(mu), T.as_tensor(sigma)
    if not (v.shape == mu.shape == sigma.shape):
        raise DimensionError(f"gaussian_conditional: shapes differ {v.shape}, {mu.shape}, {sigma.shape}")
    sigma = T.lower_bound(sigma, scale_min)
    d = T.absolute(v - mu)
    upper = T.normal_cdf((0.5 - d) / sigma)
    lower = T.normal_cdf((-0.5 - d) / sigma)
    return T.lower_bound(upper - lower, floor)


def split_side_info(params: Tensor) -> tuple[Tensor, Tensor]:
    """Split h_s output (B, 2M, h, w) into mean and softplus scale."""
    m = params.shape[1] // 2
    return params[:, :m], T.softplus(params[:, m:])


# ---------------------------------------------------------------- rates


def rate_bits(likelihoods) -> Tensor:
    """Differentiable total code length sum(-log2 p)."""
    return -T.tsum(T.log2(likelihoods))


def bits_estimate(likelihoods, num_pixels: int) -> float:
    """Bits per pixel: sum(-log2 p) / num_pixels."""
    p = likelihoods.data if isinstance(likelihoods, Tensor) else np.asarray(likelihoods, dtype=float)
    if np.any(p <= 0) or np.any(p > 1):
        raise ContractError("bits_estimate: likelihoods must lie in (0, 1]")
    if num_pixels < 1:
        raise ContractError("bits_estimate: num_pixels must be positive")
    return float(-np.log2(p).sum() / num_pixels)
