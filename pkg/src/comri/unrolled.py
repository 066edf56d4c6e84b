"""One reconstruction branch: residual CNN denoiser, conjugate-gradient
data-consistency solve, and the weight-shared unrolled forward pass.

The same denoiser module (one parameter set) is applied at every unrolled
step; the regularization weight is ``exp(log_lam)`` so it stays positive.
Gradients flow through the CG iterations directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ContractError, InvalidConfigError, InvalidInputError, TrainingDivergedError
from .operators import SenseOperator

__all__ = [
    "pack_complex",
    "unpack_complex",
    "ConvDenoiser",
    "cg_solve",
    "UnrolledConfig",
    "UnrolledNet",
]


def pack_complex(x: torch.Tensor) -> torch.Tensor:
    """Stack real and imaginary parts as channels: (..., H, W) -> (..., 2, H, W)."""
    if not x.is_complex():
        raise ContractError("pack_complex expects a complex tensor")
    return torch.stack((x.real, x.imag), dim=-3)


def unpack_complex(x: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`pack_complex`."""
    if x.shape[-3] != 2:
        raise ContractError(
            f"unpack_complex expects 2 channels at dim -3, got {x.shape[-3]}"
        )
    return torch.complex(x[..., 0, :, :], x[..., 1, :, :])


class ConvDenoiser(nn.Module):
    """Residual denoiser ``x - cnn(x)`` on stacked real/imag channels.

    Five groups: the first four are two 3x3 convolutions followed by one
    ReLU; the last is a single convolution back to 2 channels with no
    activation. Fully convolutional with size-preserving zero padding, so
    output shape equals input shape for any H, W.
    """

    def __init__(self, n_filters: int = 64, last_kernel: int = 3):
        super().__init__()
        if last_kernel % 2 != 1:
            raise InvalidConfigError("last_kernel must be odd to preserve size")
        layers: list[nn.Module] = []
        in_ch = 2
        for _ in range(4):
            layers.append(nn.Conv2d(in_ch, n_filters, 3, padding=1))
            layers.append(nn.Conv2d(n_filters, n_filters, 3, padding=1))
            layers.append(nn.ReLU(inplace=True))
            in_ch = n_filters
        layers.append(nn.Conv2d(n_filters, 2, last_kernel, padding=last_kernel // 2))
        self.net = nn.Sequential(*layers)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        # centered uniform fan-in scaling, zero biases
        for m in self.net:
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                nn.init.uniform_(m.weight, -bound, bound)
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        noise = unpack_complex(self.net(pack_complex(x)))
        out = x - noise
        if not torch.isfinite(out).all():
            bad = (~torch.isfinite(out)).sum().item()
            raise TrainingDivergedError(
                f"denoiser produced {bad} non-finite values "
                f"(input range [{x.abs().min():.3e}, {x.abs().max():.3e}])"
            )
        return out.squeeze(0) if squeeze else out


def _dot(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # batched complex inner product over the image axes
    return (a.conj() * b).sum(dim=(-2, -1))


def cg_solve(
    op: SenseOperator,
    rhs: torch.Tensor,
    lam: torch.Tensor | float,
    iters: int = 10,
    tol: float = 1e-5,
) -> torch.Tensor:
    """Solve ``(A^H A + lam I) x = rhs`` by conjugate gradients from zero.

    Stops when the per-sample residual norm drops below ``tol * ||rhs||``
    or after ``iters`` iterations. Differentiable with respect to both
    ``rhs`` and ``lam``; with ``tol=0`` the iteration count is fixed, which
    keeps the computation graph identical across calls.
    """
    if not torch.isfinite(rhs).all():
        raise InvalidInputError("cg_solve: rhs contains NaN or Inf")
    if not torch.is_tensor(lam):
        lam = torch.as_tensor(lam, dtype=rhs.real.dtype)
    if (lam < 0).any():
        raise InvalidInputError("cg_solve: lam must be non-negative")
    if iters < 1:
        raise InvalidConfigError("cg_solve: iters must be >= 1")

    x = torch.zeros_like(rhs)
    r = rhs.clone()
    p = r
    rs = _dot(r, r).real
    rhs_sq = rs.detach()
    eps = torch.finfo(rhs.real.dtype).tiny
    for _ in range(iters):
        if tol > 0 and bool((rs.detach() <= (tol**2) * rhs_sq).all()):
            break
        mp = op.normal(p) + lam * p
        alpha = rs / _dot(p, mp).real.clamp_min(eps)
        x = x + alpha[..., None, None] * p
        r = r - alpha[..., None, None] * mp
        rs_new = _dot(r, r).real
        beta = rs_new / rs.clamp_min(eps)
        p = r + beta[..., None, None] * p
        rs = rs_new
    return x


@dataclass
class UnrolledConfig:
    """Shape of one unrolled branch."""

    unroll_k: int = 5
    cg_iters: int = 10
    cg_tol: float = 1e-5
    lambda_init: float = 0.05
    n_filters: int = 64
    last_kernel: int = 3

    def validate(self) -> None:
        if self.unroll_k < 1:
            raise InvalidConfigError("unroll_k must be >= 1")
        if self.cg_iters < 1:
            raise InvalidConfigError("cg_iters must be >= 1")
        if self.lambda_init <= 0:
            raise InvalidConfigError("lambda_init must be positive")


class UnrolledNet(nn.Module):
    """Alternate denoising and CG data consistency for a fixed number of
    steps, sharing the denoiser weights across steps.

    forward(y, mask, sens):
        x0 = A^H y
        repeat k times:  z = denoise(x);  x = cg_solve(A, A^H y + lam * z)
    """

    def __init__(self, config: UnrolledConfig | None = None):
        super().__init__()
        self.config = config or UnrolledConfig()
        self.config.validate()
        self.denoiser = ConvDenoiser(self.config.n_filters, self.config.last_kernel)
        self.log_lam = nn.Parameter(
            torch.tensor(math.log(self.config.lambda_init), dtype=torch.float32)
        )

    @property
    def lam(self) -> torch.Tensor:
        return self.log_lam.exp()

    def forward(
        self, y: torch.Tensor, mask: torch.Tensor, sens: torch.Tensor
    ) -> torch.Tensor:
        op = SenseOperator(mask, sens)
        aty = op.adjoint(y)
        lam = self.lam.to(aty.real.dtype)
        x = aty
        for _ in range(self.config.unroll_k):
            z = self.denoiser(x)
            x = cg_solve(
                op, aty + lam * z, lam, self.config.cg_iters, self.config.cg_tol
            )
        return x
