"""Full codec state (parameters + topology + freezing) and its forward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import entropy as E
from . import tensor as T
from .layers import (
    NetworkSpec,
    build_factorized_codec,
    build_hyper_codec,
    check_compatible,
    init_params,
    run_network,
)
from .losses import LossBreakdown, rd_loss, rd_loss_hyper
from .tensor import ContractError, DimensionError, Tensor

ARCHS = ("factorized", "hyper")
ENCODERS = ("g_a", "h_a")


def modules_for(arch: str) -> tuple[str, ...]:
    return ("g_a", "g_s", "eb") if arch == "factorized" else ("g_a", "g_s", "h_a", "h_s", "eb")


@dataclass
class ModelState:
    """Named parameters of one codec plus the metadata needed to rebuild it.

    Parameter names are ``<module>.<local name>``, e.g. ``g_a.0.weight`` or
    ``eb.matrix2``. The entropy bottleneck ``eb`` models y for the
    factorized codec and z for the hyperprior codec.
    """

    arch: str
    specs: dict[str, NetworkSpec]
    params: dict[str, Tensor]
    frozen: dict[str, bool]
    role: str = "teacher"
    r: float = 1
    provenance: str = ""
    meta: dict = field(default_factory=dict)
    log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ContractError(f"unknown arch {self.arch!r}")
        if self.role not in ("teacher", "student"):
            raise ContractError(f"unknown role {self.role!r}")
        self.apply_freezing()

    @property
    def modules(self) -> tuple[str, ...]:
        return modules_for(self.arch)

    @property
    def downsampling(self) -> int:
        f = self.specs["g_a"].downsampling
        return f * self.specs["h_a"].downsampling if self.arch == "hyper" else f

    def module_params(self, module: str) -> dict[str, Tensor]:
        prefix = module + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def apply_freezing(self) -> None:
        for name, p in self.params.items():
            p.requires_grad = not self.frozen[name.split(".", 1)[0]]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(k, self.params[k]) for k in sorted(self.params) if not self.frozen[k.split(".", 1)[0]]]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


def _prefixed(module: str, params: dict[str, Tensor]) -> dict[str, Tensor]:
    out = {}
    for k, v in params.items():
        v.name = f"{module}.{k}"
        out[v.name] = v
    return out


def init_codec(
    arch: str,
    N: int,
    M: int,
    rng: np.random.Generator,
    Nh: int = 32,
    Mh: int = 32,
    specs: dict[str, NetworkSpec] | None = None,
) -> ModelState:
    """Fresh teacher with every module trainable."""
    if specs is None:
        g_a, g_s = build_factorized_codec(N, M)
        specs = {"g_a": g_a, "g_s": g_s}
        if arch == "hyper":
            specs["h_a"], specs["h_s"] = build_hyper_codec(M, Nh, Mh)
    check_compatible(specs["g_a"], specs["g_s"])
    params: dict[str, Tensor] = {}
    for role, spec in specs.items():
        params.update(_prefixed(role, init_params(spec, rng)))
    if arch == "hyper":
        check_compatible(specs["h_a"], specs["h_s"])
        if specs["h_s"].latent_channels != 2 * specs["g_a"].latent_channels:
            raise DimensionError("h_s must emit 2*M channels (mean and scale)")
        eb_channels = specs["h_a"].latent_channels
    else:
        eb_channels = specs["g_a"].latent_channels
    params.update(_prefixed("eb", E.init_eb_params(eb_channels, rng)))
    meta = {"N": N, "M": M, "Nh": Nh, "Mh": Mh}
    return ModelState(arch, dict(specs), params, {m: False for m in modules_for(arch)}, meta=meta)


# ---------------------------------------------------------------- forward passes


def encode(state: ModelState, x) -> tuple[Tensor, Tensor | None]:
    """Continuous latents y = g_a(x) and, for the hyperprior, z = h_a(y)."""
    y = run_network(state.specs["g_a"], state.module_params("g_a"), x)
    z = run_network(state.specs["h_a"], state.module_params("h_a"), y) if state.arch == "hyper" else None
    return y, z


def forward(state: ModelState, x, mode: str, rng: np.random.Generator | None = None) -> dict:
    x = T.as_tensor(x)
    y, z = encode(state, x)
    eb = state.module_params("eb")
    out = {"y": y, "z": z}
    if state.arch == "factorized":
        y_hat = E.quantize(y, mode, rng=rng)
        out["y_likelihoods"] = E.eb_likelihood(y_hat, eb)
        out["z_likelihoods"] = None
    else:
        z_hat = E.quantize(z, mode, rng=rng)
        out["z_likelihoods"] = E.eb_likelihood(z_hat, eb)
        side = run_network(state.specs["h_s"], state.module_params("h_s"), z_hat)
        if side.shape[2:] != y.shape[2:]:
            raise DimensionError(f"h_s output {side.shape} does not cover latent {y.shape}")
        mu, sigma = E.split_side_info(side)
        if mode == E.ROUND:
            y_hat = E.quantize(y, mode, offset=mu)
        else:
            y_hat = E.quantize(y, mode, rng=rng)
        out["y_likelihoods"] = E.gaussian_conditional_likelihood(y_hat, mu, sigma)
    out["y_hat"] = y_hat
    out["x_hat"] = run_network(state.specs["g_s"], state.module_params("g_s"), y_hat)
    return out


def rd_objective(state: ModelState, x, out: dict, lam: float) -> LossBreakdown:
    if state.arch == "factorized":
        return rd_loss(x, out["x_hat"], out["y_likelihoods"], lam)
    return rd_loss_hyper(x, out["x_hat"], out["y_likelihoods"], out["z_likelihoods"], lam)
