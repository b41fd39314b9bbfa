"""Declarative transform specs (g_a, g_s, h_a, h_s), GDN, and width reduction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor

BETA_MIN = 1e-6
KINDS = ("conv", "deconv", "gdn", "igdn", "relu")
ROLES = ("g_a", "g_s", "h_a", "h_s")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    output_padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown layer kind {self.kind!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ContractError(f"{self.kind}: channel counts must be positive")
        if self.kind in ("gdn", "igdn", "relu") and self.in_channels != self.out_channels:
            raise ContractError(f"{self.kind}: in_channels must equal out_channels")
        if self.kind in ("conv", "deconv") and self.kernel < 1:
            raise ContractError(f"{self.kind}: kernel must be positive")
        if self.kind != "deconv" and self.output_padding:
            raise ContractError("output_padding is only meaningful for deconv")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "deconv", "gdn", "igdn")

    def with_channels(self, cin: int, cout: int) -> LayerSpec:
        return replace(self, in_channels=cin, out_channels=cout)


@dataclass(frozen=True)
class NetworkSpec:
    role: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if self.role not in ROLES:
            raise ContractError(f"unknown network role {self.role!r}")
        if not self.layers:
            raise ContractError("network spec needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_channels != b.in_channels:
                raise DimensionError(
                    f"{self.role}: layer {i} outputs {a.out_channels} channels but layer {i + 1} expects {b.in_channels}"
                )

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def latent_channels(self) -> int:
        return self.layers[-1].out_channels

    @property
    def downsampling(self) -> int:
        """Product of conv/deconv strides."""
        f = 1
        for layer in self.layers:
            if layer.kind in ("conv", "deconv"):
                f *= layer.stride
        return f

    def widths(self) -> list[int]:
        """Channel count entering each conv/deconv, followed by the final output."""
        convs = [l for l in self.layers if l.kind in ("conv", "deconv")]
        return [l.in_channels for l in convs] + [convs[-1].out_channels]

    def to_dict(self) -> dict:
        return {"role": self.role, "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(d["role"], tuple(LayerSpec(**l) for l in d["layers"]))


def check_compatible(encoder: NetworkSpec, decoder: NetworkSpec) -> None:
    if encoder.latent_channels != decoder.in_channels:
        raise DimensionError(
            f"{encoder.role} emits {encoder.latent_channels} channels but {decoder.role} expects {decoder.in_channels}"
        )


def _conv(cin, cout, k=5, s=2) -> LayerSpec:
    return LayerSpec("conv", cin, cout, k, s, k // 2)


def _deconv(cin, cout, k=5, s=2) -> LayerSpec:
    return LayerSpec("deconv", cin, cout, k, s, k // 2, s - 1)


def build_factorized_codec(N: int, M: int) -> tuple[NetworkSpec, NetworkSpec]:
    """Four stride-2 k5 convs with GDN between them, and the mirrored decoder."""
    if N < 1 or M < 1:
        raise ContractError("build_factorized_codec: N and M must be >= 1")
    g_a = NetworkSpec(
        "g_a",
        (
            _conv(3, N),
            LayerSpec("gdn", N, N),
            _conv(N, N),
            LayerSpec("gdn", N, N),
            _conv(N, N),
            LayerSpec("gdn", N, N),
            _conv(N, M),
        ),
    )
    g_s = NetworkSpec(
        "g_s",
        (
            _deconv(M, N),
            LayerSpec("igdn", N, N),
            _deconv(N, N),
            LayerSpec("igdn", N, N),
            _deconv(N, N),
            LayerSpec("igdn", N, N),
            _deconv(N, 3),
        ),
    )
    return g_a, g_s


def build_hyper_codec(M: int, Nh: int, Mh: int) -> tuple[NetworkSpec, NetworkSpec]:
    """Hyper-encoder (k3 s1 then two k5 s2) and a deconv hyper-decoder emitting 2*M channels."""
    if min(M, Nh, Mh) < 1:
        raise ContractError("build_hyper_codec: M, Nh, Mh must be >= 1")
    h_a = NetworkSpec(
        "h_a",
        (
            _conv(M, Nh, k=3, s=1),
            LayerSpec("relu", Nh, Nh),
            _conv(Nh, Nh),
            LayerSpec("relu", Nh, Nh),
            _conv(Nh, Mh),
        ),
    )
    h_s = NetworkSpec(
        "h_s",
        (
            _deconv(Mh, Nh),
            LayerSpec("relu", Nh, Nh),
            _deconv(Nh, Nh),
            LayerSpec("relu", Nh, Nh),
            _deconv(Nh, 2 * M, k=3, s=1),
        ),
    )
    return h_a, h_s


@dataclass(frozen=True)
class ReductionSpec:
    r: float
    applies_to: tuple[str, ...] = ("g_a", "h_a")


def reduced_width(n: int, r: float) -> int:
    """n / r rounded half-up, never below 1."""
    return max(1, math.floor(n / r + 0.5))


def reduce_width(spec: NetworkSpec, reduction: ReductionSpec) -> NetworkSpec:
    """Divide every intermediate width by r, keeping the network's input and output widths."""
    if reduction.r < 1:
        raise ContractError(f"reduce_width: r must be >= 1, got {reduction.r}")
    if spec.role not in reduction.applies_to:
        raise ContractError(f"reduce_width: role {spec.role} not in {reduction.applies_to}")
    last = len(spec.layers) - 1
    layers = []
    for i, layer in enumerate(spec.layers):
        cin = layer.in_channels if i == 0 else reduced_width(layer.in_channels, reduction.r)
        cout = layer.out_channels if i == last else reduced_width(layer.out_channels, reduction.r)
        if layer.kind in ("gdn", "igdn", "relu"):
            cout = cin
        layers.append(layer.with_channels(cin, cout))
    return NetworkSpec(spec.role, tuple(layers))


# ---------------------------------------------------------------- parameters


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for i, l in enumerate(spec.layers):
        if l.kind == "conv":
            shapes[f"{i}.weight"] = (l.out_channels, l.in_channels, l.kernel, l.kernel)
            shapes[f"{i}.bias"] = (l.out_channels,)
        elif l.kind == "deconv":
            shapes[f"{i}.weight"] = (l.in_channels, l.out_channels, l.kernel, l.kernel)
            shapes[f"{i}.bias"] = (l.out_channels,)
        elif l.kind in ("gdn", "igdn"):
            shapes[f"{i}.beta"] = (l.in_channels,)
            shapes[f"{i}.gamma"] = (l.in_channels, l.in_channels)
    return shapes


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    """Uniform +-sqrt(1/(k^2 Cin)) conv weights, zero biases, GDN beta=1 gamma=0.1*I."""
    params: dict[str, Tensor] = {}
    for i, l in enumerate(spec.layers):
        if l.kind in ("conv", "deconv"):
            bound = math.sqrt(1.0 / (l.kernel**2 * l.in_channels))
            shape = param_shapes(NetworkSpec(spec.role, (l,)))["0.weight"]
            params[f"{i}.weight"] = Tensor(rng.uniform(-bound, bound, size=shape), True)
            params[f"{i}.bias"] = Tensor(np.zeros(l.out_channels), True)
        elif l.kind in ("gdn", "igdn"):
            params[f"{i}.beta"] = Tensor(np.ones(l.in_channels), True)
            params[f"{i}.gamma"] = Tensor(0.1 * np.eye(l.in_channels), True)
    for name, p in params.items():
        p.name = f"{spec.role}.{name}"
    return params


def gdn_forward(x, beta, gamma, inverse: bool = False) -> Tensor:
    """x_i / sqrt(beta_i + sum_j gamma_ij x_j^2) per site; multiplies instead when inverse."""
    beta, gamma = T.as_tensor(beta), T.as_tensor(gamma)
    if np.any(beta.data < BETA_MIN):
        raise ContractError(f"gdn: beta below beta_min={BETA_MIN}")
    x = T.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != beta.shape[0] or gamma.shape != (beta.shape[0],) * 2:
        raise DimensionError(f"gdn: input {x.shape} incompatible with beta {beta.shape}, gamma {gamma.shape}")
    pool = T.channel_mix(gamma, T.square(x)) + T.reshape(beta, (1, -1, 1, 1))
    norm = T.sqrt(pool)
    return x * norm if inverse else x / norm


def run_network(spec: NetworkSpec, params: dict[str, Tensor], x) -> Tensor:
    h = T.as_tensor(x)
    if h.ndim != 4 or h.shape[1] != spec.in_channels:
        raise DimensionError(f"{spec.role}: expected (B, {spec.in_channels}, H, W) input, got {h.shape}")
    for i, l in enumerate(spec.layers):
        if l.kind == "conv":
            h = T.conv2d(h, params[f"{i}.weight"], params[f"{i}.bias"], l.stride, l.padding)
        elif l.kind == "deconv":
            h = T.conv2d_transpose(
                h, params[f"{i}.weight"], params[f"{i}.bias"], l.stride, l.padding, l.output_padding
            )
        elif l.kind in ("gdn", "igdn"):
            h = gdn_forward(h, params[f"{i}.beta"], params[f"{i}.gamma"], inverse=l.kind == "igdn")
        else:
            h = T.relu(h)
    return h


def reproject(params: dict[str, Tensor] | Iterable[tuple[str, Tensor]]) -> None:
    """Restore beta >= BETA_MIN and gamma >= 0 after an optimizer step."""
    items = params.items() if isinstance(params, dict) else params
    for name, p in items:
        if name.endswith(".beta"):
            np.maximum(p.data, BETA_MIN, out=p.data)
        elif name.endswith(".gamma"):
            np.maximum(p.data, 0.0, out=p.data)
