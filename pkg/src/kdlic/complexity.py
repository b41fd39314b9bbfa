"""MACs per input pixel, parameter counts and weight sizes for network specs.

Counting convention: a conv or deconv costs k*k*Cin*Cout MACs at every
site of its output grid; GDN/IGDN costs C*C per site; ReLU and biases are
free. Per-pixel figures divide by the resolution of the network input image.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .layers import NetworkSpec, ReductionSpec, build_factorized_codec, build_hyper_codec, reduce_width

BYTES_PER_PARAM = 4
REPORT_COLUMNS = ("family", "r", "macs_per_pixel", "relative_macs", "params", "megabytes")


@dataclass(frozen=True)
class LayerCost:
    network: str
    index: int
    kind: str
    in_channels: int
    out_channels: int
    stride_at_output: Fraction
    macs_per_pixel: Fraction
    params: int


@dataclass
class ComplexityReport:
    rows: list[LayerCost]

    @property
    def macs_per_pixel(self) -> float:
        return float(sum(r.macs_per_pixel for r in self.rows))

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def megabytes(self) -> float:
        return self.params * BYTES_PER_PARAM / 1e6


def layer_params(layer) -> int:
    if layer.kind in ("conv", "deconv"):
        return layer.kernel**2 * layer.in_channels * layer.out_channels + layer.out_channels
    if layer.kind in ("gdn", "igdn"):
        return layer.in_channels**2 + layer.in_channels
    return 0


def count_macs_per_pixel(spec: NetworkSpec, input_stride: int = 1) -> ComplexityReport:
    """Per-layer cost rows; ``input_stride`` is the downsampling already applied to this network's input."""
    s = Fraction(input_stride)
    rows = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            s *= layer.stride
        elif layer.kind == "deconv":
            s /= layer.stride
        if layer.kind in ("conv", "deconv"):
            macs = Fraction(layer.kernel**2 * layer.in_channels * layer.out_channels) / (s * s)
        elif layer.kind in ("gdn", "igdn"):
            macs = Fraction(layer.in_channels**2) / (s * s)
        else:
            macs = Fraction(0)
        rows.append(LayerCost(spec.role, i, layer.kind, layer.in_channels, layer.out_channels, s, macs, layer_params(layer)))
    return ComplexityReport(rows)


def count_params(spec: NetworkSpec) -> int:
    return sum(layer_params(l) for l in spec.layers)


def weight_megabytes(spec: NetworkSpec) -> float:
    return count_params(spec) * BYTES_PER_PARAM / 1e6


def encoder_report(specs: Sequence[NetworkSpec]) -> ComplexityReport:
    """Chain g_a (and h_a) so the hyper-encoder is priced at latent resolution."""
    rows: list[LayerCost] = []
    stride = 1
    for spec in specs:
        rep = count_macs_per_pixel(spec, stride)
        rows.extend(rep.rows)
        stride = spec.downsampling * stride
    return ComplexityReport(rows)


def encoder_family(arch: str, N: int, M: int, Nh: int = 0, Mh: int = 0) -> Callable[[float], list[NetworkSpec]]:
    g_a, _ = build_factorized_codec(N, M)
    base = [g_a]
    if arch == "hyper":
        h_a, _ = build_hyper_codec(M, Nh, Mh)
        base.append(h_a)

    def at(r: float) -> list[NetworkSpec]:
        return [reduce_width(s, ReductionSpec(r)) for s in base]

    return at


@dataclass(frozen=True)
class ReportRow:
    family: str
    r: float
    macs_per_pixel: float
    relative_macs: float
    params: int
    megabytes: float


def relative_report(family: Callable[[float], Sequence[NetworkSpec]], rs: Iterable[float], name: str = "") -> list[ReportRow]:
    rs = list(rs)
    if 1 not in rs:
        raise ValueError("relative_report: r list must contain 1")
    reports = {r: encoder_report(family(r)) for r in rs}
    ref = sum(row.macs_per_pixel for row in reports[1].rows)
    return [
        ReportRow(
            name,
            r,
            reports[r].macs_per_pixel,
            float(sum(row.macs_per_pixel for row in reports[r].rows) / ref),
            reports[r].params,
            reports[r].megabytes,
        )
        for r in rs
    ]


def _fmt_r(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else str(r)


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r.family, _fmt_r(r.r), f"{r.macs_per_pixel:.2f}", f"{r.relative_macs:.3f}", r.params, f"{r.megabytes:.3f}"])
    return buf.getvalue()


def report_text(rows: Sequence[ReportRow]) -> str:
    lines = [f"{'family':<12}{'r':>4}{'MACs/px':>14}{'rel. MACs':>11}{'params':>12}{'MB':>9}"]
    for r in rows:
        lines.append(
            f"{r.family:<12}{'÷' + _fmt_r(r.r):>4}{r.macs_per_pixel:>14,.2f}{r.relative_macs:>11.3f}{r.params:>12,}{r.megabytes:>9.3f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------- brute-force oracle


def brute_force_macs(spec: NetworkSpec, height: int, width: int) -> int:
    """Count MACs one output element at a time on an actual input grid.

    Slow by design; used as an independent check of count_macs_per_pixel on
    small specs.
    """
    h, w = height, width
    total = 0
    for layer in spec.layers:
        if layer.kind == "conv":
            ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
            wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
        elif layer.kind == "deconv":
            ho = (h - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.output_padding
            wo = (w - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.output_padding
        else:
            ho, wo = h, w
        for _ in range(ho):
            for _ in range(wo):
                for _ in range(layer.out_channels):
                    if layer.kind in ("conv", "deconv"):
                        for _ in range(layer.in_channels):
                            for _ in range(layer.kernel * layer.kernel):
                                total += 1
                    elif layer.kind in ("gdn", "igdn"):
                        for _ in range(layer.in_channels):
                            total += 1
        h, w = ho, wo
    return total
