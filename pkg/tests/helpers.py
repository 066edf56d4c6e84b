"""Independent oracle implementations used across the test suite.

These deliberately avoid the package's torch code paths: transforms are
numpy, reductions are plain loops or dense linear algebra, so they form a
second route for every dual-checked quantity.
"""

from __future__ import annotations

import numpy as np
import torch


def np_fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D FFT over the last two axes (numpy route)."""
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def np_ifft2c(y: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(y, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def random_complex(rng, *shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_sens(rng, C: int, H: int, W: int) -> np.ndarray:
    """Random smooth-ish complex maps normalized so sum_c |S|^2 = 1."""
    maps = random_complex(rng, C, H, W)
    maps += 2.0  # keep RSS well away from zero
    rss = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    return maps / rss


def dense_matrix(apply_fn, H: int, W: int, dtype=np.complex128) -> np.ndarray:
    """Materialize a linear operator on H*W pixels column by column."""
    n = H * W
    mat = np.zeros((n, n), dtype=dtype)
    for j in range(n):
        e = torch.zeros(H, W, dtype=torch.complex128)
        e.view(-1)[j] = 1.0
        mat[:, j] = apply_fn(e).numpy().reshape(-1)
    return mat


def fd_gradient(loss_fn, param: torch.Tensor, index: tuple, step: float = 1e-5) -> float:
    """Central finite difference of a scalar loss w.r.t. one parameter entry."""
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + step
        hi = float(loss_fn())
        param[index] = orig - step
        lo = float(loss_fn())
        param[index] = orig
    return (hi - lo) / (2.0 * step)


def sample_param_indices(rng, params: list[torch.Tensor], n: int):
    """Pick n (tensor, index) pairs spread across the parameter list."""
    picks = []
    for k in range(n):
        p = params[k % len(params)]
        flat_idx = int(rng.integers(p.numel()))
        idx = np.unravel_index(flat_idx, p.shape)
        picks.append((p, tuple(int(i) for i in idx)))
    return picks


def check_gradients(loss_fn, named_params, rng, n_samples: int,
                    step: float = 1e-5, rtol: float = 1e-3) -> list[dict]:
    """Compare autograd against central differences on sampled entries.

    ``loss_fn`` must rebuild the loss from scratch at each call (it is
    re-evaluated after in-place parameter perturbations). Returns a row per
    sampled entry with both gradients and the relative error.
    """
    params = [p for _, p in named_params]
    loss = loss_fn()
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss.backward()
    analytic = {id(p): (p.grad.clone() if p.grad is not None else None) for p in params}

    rows = []
    for p, idx in sample_param_indices(rng, params, n_samples):
        num = fd_gradient(lambda: loss_fn().detach(), p, idx, step)
        grad = analytic[id(p)]
        ana = float(grad[idx]) if grad is not None else 0.0
        denom = max(abs(num), abs(ana), 1e-8)
        rows.append(
            {"analytic": ana, "numeric": num, "rel_err": abs(num - ana) / denom}
        )
    return rows
