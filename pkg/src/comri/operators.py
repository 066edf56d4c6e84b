"""Multi-coil MRI physics operators.

Complex images are tensors of shape ``(..., H, W)``; multi-coil k-space adds
a coil axis, ``(..., C, H, W)``. Fourier transforms are centered (zero
frequency at ``H//2, W//2``) and orthonormal, so they preserve the l2 norm
and the forward/adjoint pairs below satisfy the dot-product identity
exactly. All operations are pure functions of their inputs and fully
differentiable; there is no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ContractError, InvalidInputError

__all__ = [
    "fft2c",
    "ifft2c",
    "rss_combine",
    "SenseOperator",
    "CoilSensitivities",
    "estimate_sensitivities",
    "dc_projection",
]


def _require_finite(x: torch.Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise InvalidInputError(f"{name}: input contains NaN or Inf")


def fft2c(x: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2-D Fourier transform over the last two axes."""
    _require_finite(x, "fft2c")
    x = torch.fft.ifftshift(x, dim=(-2, -1))
    x = torch.fft.fft2(x, norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifft2c(y: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft2c`; same centering and norm preservation."""
    _require_finite(y, "ifft2c")
    y = torch.fft.ifftshift(y, dim=(-2, -1))
    y = torch.fft.ifft2(y, norm="ortho")
    return torch.fft.fftshift(y, dim=(-2, -1))


def rss_combine(coil_images: torch.Tensor) -> torch.Tensor:
    """Root-sum-of-squares combination over the coil axis.

    Args:
        coil_images: ``(..., C, H, W)`` complex (or real) per-coil images.

    Returns:
        ``(..., H, W)`` real array, ``sqrt(sum_c |img_c|^2)`` pixelwise.
    """
    _require_finite(coil_images, "rss_combine")
    return torch.sqrt((coil_images.abs() ** 2).sum(dim=-3))


class SenseOperator:
    """Coil-weighted Fourier encoding with Cartesian undersampling.

    forward   y_c = mask * F(sens_c * x)
    adjoint   x   = sum_c conj(sens_c) * F^{-1}(mask * y_c)

    ``encode``/``decode`` are the unmasked encoding pair used by the k-space
    replacement projection. ``mask`` is a real binary tensor broadcastable
    to ``(..., H, W)``; ``sens`` is complex, broadcastable to
    ``(..., C, H, W)``. Leading batch axes on images and k-space broadcast
    against both.
    """

    def __init__(self, mask: torch.Tensor, sens: torch.Tensor):
        mask = torch.as_tensor(mask)
        if mask.is_complex():
            mask = mask.real
        if not mask.is_floating_point():
            mask = mask.to(torch.float32)
        if sens.ndim < 3:
            raise ContractError(
                f"sens must have shape (..., C, H, W), got {tuple(sens.shape)}"
            )
        if mask.shape[-2:] != sens.shape[-2:]:
            raise ContractError(
                f"mask {tuple(mask.shape)} and sens {tuple(sens.shape)} "
                "disagree on (H, W)"
            )
        self.mask = mask
        self.sens = sens

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.sens.shape[-2:])

    @property
    def num_coils(self) -> int:
        return self.sens.shape[-3]

    def _check_image(self, x: torch.Tensor) -> None:
        if x.shape[-2:] != self.image_shape:
            raise ContractError(
                f"image shape {tuple(x.shape)} does not match operator "
                f"(H, W)={self.image_shape}"
            )

    def _check_kspace(self, y: torch.Tensor) -> None:
        if y.shape[-2:] != self.image_shape or y.shape[-3] != self.num_coils:
            raise ContractError(
                f"k-space shape {tuple(y.shape)} does not match operator "
                f"(C, H, W)=({self.num_coils}, *{self.image_shape})"
            )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Unmasked encoding ``F(sens * x)``: image -> per-coil k-space."""
        self._check_image(x)
        return fft2c(self.sens * x.unsqueeze(-3))

    def decode(self, y: torch.Tensor) -> torch.Tensor:
        """Unmasked decoding ``sum_c conj(sens_c) F^{-1}(y_c)``."""
        self._check_kspace(y)
        return (ifft2c(y) * self.sens.conj()).sum(dim=-3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Full forward model; output is exactly zero off-mask."""
        return self.encode(x) * self.mask.unsqueeze(-3)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        """Adjoint of :meth:`forward`; masks ``y`` internally."""
        self._check_kspace(y)
        return self.decode(y * self.mask.unsqueeze(-3))

    def normal(self, x: torch.Tensor) -> torch.Tensor:
        """Gram operator ``A^H A``."""
        return self.adjoint(self.forward(x))


@dataclass
class CoilSensitivities:
    """Pixelwise-normalized coil maps and the support they are defined on.

    Invariants: ``sum_c |maps_c|^2 == 1`` on support (within float eps) and
    ``maps == 0`` outside it.
    """

    maps: torch.Tensor  # (C, H, W) complex
    support: torch.Tensor  # (H, W) bool


def _raised_cosine(n: int, dtype: torch.dtype) -> torch.Tensor:
    # interior of a Hann window so the end samples stay positive
    return torch.hann_window(n + 2, periodic=False, dtype=dtype)[1:-1]


def _center_slice(n: int, size: int) -> slice:
    start = (n - size) // 2
    return slice(start, start + size)


def estimate_sensitivities(
    kspace: torch.Tensor,
    acs_size: int,
    support_threshold: float = 0.05,
) -> CoilSensitivities:
    """Estimate coil maps from the autocalibration region of k-space.

    The central ``acs_size x acs_size`` block is cropped, apodized with a
    raised-cosine window, zero-padded back to full size and inverse
    transformed, giving smooth low-resolution coil images. Maps are those
    images divided by their root-sum-of-squares, which makes
    ``sum_c |S_c|^2 = 1`` on the support by construction. Pixels whose RSS
    falls below ``support_threshold`` times the peak RSS are declared
    outside the support and zeroed.

    Args:
        kspace: ``(C, H, W)`` complex k-space whose ACS region is sampled.
        acs_size: side of the central calibration block.
        support_threshold: fraction of the peak RSS below which maps are 0.

    Returns:
        :class:`CoilSensitivities` with maps of the input's dtype.
    """
    if kspace.ndim != 3:
        raise ContractError(
            f"kspace must have shape (C, H, W), got {tuple(kspace.shape)}"
        )
    C, H, W = kspace.shape
    if acs_size < 1 or acs_size > min(H, W):
        raise InvalidInputError(
            f"acs_size={acs_size} outside [1, min(H, W)={min(H, W)}]"
        )
    rows, cols = _center_slice(H, acs_size), _center_slice(W, acs_size)
    acs = kspace[:, rows, cols]
    if not acs.abs().any():
        raise InvalidInputError("ACS region of the k-space is empty")

    rdtype = acs.real.dtype
    window = _raised_cosine(acs_size, rdtype)
    apodized = acs * (window[:, None] * window[None, :])
    padded = torch.zeros_like(kspace)
    padded[:, rows, cols] = apodized

    lowres = ifft2c(padded)
    rss = rss_combine(lowres)
    support = rss > support_threshold * rss.max()
    maps = torch.where(support, lowres / rss.clamp_min(torch.finfo(rdtype).tiny),
                       torch.zeros_like(lowres))
    return CoilSensitivities(maps=maps, support=support)


def dc_projection(
    x: torch.Tensor, y: torch.Tensor, op: SenseOperator
) -> torch.Tensor:
    """Replace the sampled k-space locations of the encoded image with ``y``.

    Computes ``decode(encode(x) * (1 - mask) + y * mask)``: measured samples
    overwrite the encoded estimate, unmeasured ones are kept, and the result
    returns to the image domain through the unmasked decoding. With
    normalized single-coil maps this is an idempotent projection.
    """
    m = op.mask.unsqueeze(-3)
    k = op.encode(x) * (1 - m) + y * m
    return op.decode(k)
