"""Dataset-level evaluation: baselines, per-slice metrics, summary
statistics and error-map export."""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import asdict, dataclass

import matplotlib
import numpy as np
import torch

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InvalidInputError
from .masks import SamplingMask
from .metrics import psnr, ssim
from .operators import SenseOperator, ifft2c, rss_combine
from .unrolled import cg_solve

__all__ = [
    "MetricsRecord",
    "reconstruct_zero_filled",
    "reconstruct_cg_sense",
    "reference_magnitude",
    "evaluate_pool",
    "summarize",
    "write_metrics_csv",
    "read_metrics_csv",
]

METRICS_COLUMNS = ["volume_id", "slice_index", "method", "psnr_db", "ssim"]


@dataclass
class MetricsRecord:
    volume_id: str
    slice_index: int
    method: str
    psnr_db: float
    ssim: float


def reconstruct_zero_filled(
    y: torch.Tensor, mask: torch.Tensor, sens: torch.Tensor
) -> torch.Tensor:
    """Adjoint of the encoding applied to the measured data."""
    return SenseOperator(mask, sens).adjoint(y)


def reconstruct_cg_sense(
    y: torch.Tensor,
    mask: torch.Tensor,
    sens: torch.Tensor,
    lam: float = 1e-3,
    iters: int = 30,
    tol: float = 1e-8,
) -> torch.Tensor:
    """Tikhonov-regularized SENSE solved by conjugate gradients."""
    if lam < 0:
        raise InvalidInputError(f"lam must be >= 0, got {lam}")
    op = SenseOperator(mask, sens)
    return cg_solve(op, op.adjoint(y), lam, iters=iters, tol=tol)


def reference_magnitude(
    kspace_full: torch.Tensor, sens: torch.Tensor | None = None
) -> np.ndarray:
    """Reference image for metrics: magnitude of the sensitivity-weighted
    combination of the fully sampled data, or RSS when no maps exist. The
    same rule is applied to every method under comparison."""
    imgs = ifft2c(kspace_full)
    if sens is not None:
        combined = (imgs * sens.conj()).sum(dim=-3).abs()
    else:
        combined = rss_combine(imgs)
    return combined.cpu().numpy().astype(np.float64)


def evaluate_pool(
    pool,
    acq_mask: SamplingMask,
    methods: dict[str, callable],
    out_dir=None,
    error_map_slices: list[int] | None = None,
) -> tuple[list[MetricsRecord], dict]:
    """Run every method over every slice of the pool and collect metrics.

    ``methods`` maps a method name to ``fn(y, mask_t, sens) -> complex
    image``; ``y`` is the slice k-space with the acquisition mask applied.
    Slices without a usable reference are skipped with a warning. When
    ``out_dir`` is given, writes ``metrics.csv``, ``summary.json`` and jet
    error maps (shared color scale across methods per slice) for the
    requested slice indices (default: the middle slice of each volume).

    Returns the per-slice records and the summary dict.
    """
    mask_t = torch.from_numpy(acq_mask.pattern).to(torch.float32)
    records: list[MetricsRecord] = []
    if error_map_slices is None:
        error_map_slices = _middle_slices(pool)
    map_set = set(error_map_slices)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    for i in range(pool.num_slices):
        if pool.reference is None:
            warnings.warn(f"slice {i}: no reference available, skipping")
            continue
        ref = pool.reference[i].abs().cpu().numpy().astype(np.float64)
        if not ref.max() > 0:
            warnings.warn(
                f"slice {i} ({pool.volume_ids[i]}): degenerate reference, skipping"
            )
            continue
        y = pool.kspace[i] * mask_t
        recons: dict[str, np.ndarray] = {}
        for name, fn in methods.items():
            with torch.no_grad():
                x = fn(y, mask_t, pool.sens[i])
            mag = x.abs().cpu().numpy().astype(np.float64)
            records.append(
                MetricsRecord(
                    volume_id=pool.volume_ids[i],
                    slice_index=pool.slice_indices[i],
                    method=name,
                    psnr_db=psnr(ref, mag),
                    ssim=ssim(ref, mag),
                )
            )
            recons[name] = mag
        if out_dir is not None and i in map_set:
            _save_error_maps(
                out_dir, f"{pool.volume_ids[i]}_s{pool.slice_indices[i]:03d}",
                ref, recons,
            )

    summary = summarize(records)
    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), records)
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2)
    return records, summary


def _middle_slices(pool) -> list[int]:
    by_volume: dict[str, list[int]] = {}
    for i, vol in enumerate(pool.volume_ids):
        by_volume.setdefault(vol, []).append(i)
    return [idx[len(idx) // 2] for idx in by_volume.values()]


def _save_error_maps(out_dir, tag: str, ref: np.ndarray,
                     recons: dict[str, np.ndarray]) -> None:
    errs = {name: np.abs(ref - mag) for name, mag in recons.items()}
    scale = max(e.max() for e in errs.values())
    if scale <= 0:
        scale = 1.0
    for name, err in errs.items():
        path = os.path.join(out_dir, f"error_{tag}_{name}.png")
        plt.imsave(path, err, cmap="jet", vmin=0.0, vmax=scale)
    plt.imsave(
        os.path.join(out_dir, f"reference_{tag}.png"), ref, cmap="gray"
    )


def _stats(values: np.ndarray) -> dict:
    # inf PSNR sentinels (identical images) make std/percentiles ill-defined
    with np.errstate(invalid="ignore"):
        return {
            "mean": float(np.mean(values)),
            "std": float(np.std(values)),
            "median": float(np.median(values)),
            "p25": float(np.percentile(values, 25)),
            "p75": float(np.percentile(values, 75)),
        }


def summarize(records: list[MetricsRecord]) -> dict:
    """Per-method mean/std/median/quartiles of both metrics."""
    summary: dict[str, dict] = {}
    methods = sorted({r.method for r in records})
    for method in methods:
        rows = [r for r in records if r.method == method]
        summary[method] = {
            "n_slices": len(rows),
            "psnr_db": _stats(np.array([r.psnr_db for r in rows])),
            "ssim": _stats(np.array([r.ssim for r in rows])),
        }
    return summary


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow(asdict(rec))


def read_metrics_csv(path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(
                MetricsRecord(
                    volume_id=row["volume_id"],
                    slice_index=int(row["slice_index"]),
                    method=row["method"],
                    psnr_db=float(row["psnr_db"]),
                    ssim=float(row["ssim"]),
                )
            )
    return records
