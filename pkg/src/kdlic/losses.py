"""Rate-distortion and latent-matching objectives."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .entropy import rate_bits
from .tensor import DimensionError, Tensor


@dataclass
class LossBreakdown:
    total: Tensor
    rate_y_bits: float
    rate_z_bits: float
    distortion_mse: float
    lam: float

    def row(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "rate_y_bits": self.rate_y_bits,
            "rate_z_bits": self.rate_z_bits,
            "mse": self.distortion_mse,
        }


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        for axis, (m, n) in enumerate(zip(a.shape, b.shape)):
            if m != n:
                raise DimensionError(f"{what}: axis {axis} differs ({m} vs {n}); shapes {a.shape} vs {b.shape}")
        raise DimensionError(f"{what}: rank differs, shapes {a.shape} vs {b.shape}")


def _rate_per_image(likelihoods: Tensor, batch: int) -> Tensor:
    return rate_bits(likelihoods) * (1.0 / batch)


def rd_loss(x, x_hat, y_likelihoods, lam: float) -> LossBreakdown:
    """Bits of y per image plus lam times the MSE over all pixels."""
    x, x_hat, y_likelihoods = T.as_tensor(x), T.as_tensor(x_hat), T.as_tensor(y_likelihoods)
    _same_shape(x, x_hat, "rd_loss")
    rate = _rate_per_image(y_likelihoods, x.shape[0])
    mse = T.mean(T.square(x - x_hat))
    total = rate + mse * lam
    return LossBreakdown(total, rate.item(), 0.0, mse.item(), lam)


def rd_loss_hyper(x, x_hat, y_likelihoods, z_likelihoods, lam: float) -> LossBreakdown:
    x, x_hat = T.as_tensor(x), T.as_tensor(x_hat)
    _same_shape(x, x_hat, "rd_loss_hyper")
    batch = x.shape[0]
    rate_y = _rate_per_image(T.as_tensor(y_likelihoods), batch)
    rate_z = _rate_per_image(T.as_tensor(z_likelihoods), batch)
    mse = T.mean(T.square(x - x_hat))
    total = rate_y + rate_z + mse * lam
    return LossBreakdown(total, rate_y.item(), rate_z.item(), mse.item(), lam)


def kd_loss(y_teacher, y_student) -> Tensor:
    """Squared error summed per sample, averaged over the batch.

    The teacher side is detached, so nothing upstream of it receives gradient.
    """
    y_teacher, y_student = T.as_tensor(y_teacher), T.as_tensor(y_student)
    _same_shape(y_teacher, y_student, "kd_loss")
    diff = y_student - y_teacher.detach()
    return T.tsum(T.square(diff)) * (1.0 / y_student.shape[0])


def kd_loss_hyper(y_teacher, z_teacher, y_student, z_student) -> Tensor:
    return kd_loss(y_teacher, y_student) + kd_loss(z_teacher, z_student)
