"""Dual-branch co-training of unrolled reconstruction networks.

Two branches receive differently re-undersampled copies of the measured
k-space and are tied together by a three-part objective: an undersampled
calibration term per branch (agreement with the measured samples after
re-encoding), a reconstructed calibration term per branch (proximity to the
k-space replacement projection of the branch output), and a contrastive
term that pulls the branches' expanded embeddings toward cosine similarity
one. At test time both branches see the full undersampled data and their
outputs are averaged.
"""

from __future__ import annotations

import copy
import csv
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import (
    ContractError,
    InvalidConfigError,
    TrainingDivergedError,
)
from .masks import (
    KIND_1D,
    SamplingMask,
    epoch_split_seed,
    make_1d_random_mask,
    make_2d_random_mask,
    split_mask,
)
from .operators import SenseOperator, dc_projection, ifft2c
from .unrolled import UnrolledConfig, UnrolledNet, pack_complex

__all__ = [
    "Expander",
    "mse_complex",
    "loss_uc",
    "loss_rc",
    "loss_cl",
    "RegimeFlags",
    "REGIMES",
    "CoTrainedModel",
    "CoTrainingLossReport",
    "co_training_loss",
    "reconstruct",
    "TrainConfig",
    "TrainResult",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "write_history_csv",
]


class Expander(nn.Module):
    """Projection head: flattened real/imag image -> 1024 features -> ReLU."""

    def __init__(self, height: int, width: int, out_features: int = 1024):
        super().__init__()
        self.fc = nn.Linear(2 * height * width, out_features)
        bound = 1.0 / math.sqrt(self.fc.in_features)
        nn.init.uniform_(self.fc.weight, -bound, bound)
        nn.init.zeros_(self.fc.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        flat = pack_complex(x).flatten(-3)
        if flat.shape[-1] != self.fc.in_features:
            raise ContractError(
                f"expander built for {self.fc.in_features} inputs, "
                f"got image with {flat.shape[-1]}"
            )
        out = torch.relu(self.fc(flat))
        return out.squeeze(0) if squeeze else out


def mse_complex(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all real and imaginary components."""
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    d = a - b
    if not d.is_complex():
        raise ContractError("mse_complex expects complex inputs")
    return 0.5 * (d.real.square().mean() + d.imag.square().mean())


def loss_uc(x: torch.Tensor, y: torch.Tensor, op_full: SenseOperator) -> torch.Tensor:
    """Undersampled calibration: image-domain MSE between the re-encoded,
    re-undersampled output and the measured data, per coil."""
    return mse_complex(ifft2c(op_full.forward(x)), ifft2c(y))


def loss_rc(x: torch.Tensor, y: torch.Tensor, op_full: SenseOperator) -> torch.Tensor:
    """Reconstructed calibration: MSE between the output and its k-space
    replacement projection onto the measured samples."""
    return mse_complex(x, dc_projection(x, y, op_full))


def loss_cl(
    z1: torch.Tensor, z2: torch.Tensor, gamma: float = 1.0
) -> torch.Tensor:
    """Contrastive term ``-log(exp(sim) / (exp(sim) + gamma))`` with cosine
    similarity between the embeddings; batch inputs are averaged.

    Norms are epsilon-stabilized, so zero embeddings give sim = 0 rather
    than an error.
    """
    if z1.shape != z2.shape:
        raise ContractError(f"shape mismatch: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    if gamma <= 0:
        raise InvalidConfigError(f"gamma must be positive, got {gamma}")
    eps = 1e-8
    dot = (z1 * z2).sum(dim=-1)
    sim = dot / (z1.norm(dim=-1).clamp_min(eps) * z2.norm(dim=-1).clamp_min(eps))
    return torch.log1p(gamma * torch.exp(-sim)).mean()


@dataclass(frozen=True)
class RegimeFlags:
    dual: bool
    uc: bool
    rc: bool
    cl: bool
    supervised: bool


REGIMES: dict[str, RegimeFlags] = {
    "full": RegimeFlags(dual=True, uc=True, rc=True, cl=True, supervised=False),
    "uc-only": RegimeFlags(dual=True, uc=True, rc=False, cl=False, supervised=False),
    "uc+cl": RegimeFlags(dual=True, uc=True, rc=False, cl=True, supervised=False),
    "uc+rc": RegimeFlags(dual=True, uc=True, rc=True, cl=False, supervised=False),
    "single-net": RegimeFlags(dual=False, uc=True, rc=False, cl=False, supervised=False),
    "supervised-modl": RegimeFlags(dual=False, uc=False, rc=False, cl=False, supervised=True),
}


class CoTrainedModel(nn.Module):
    """Two unrolled branches plus expanders, gated by a training regime.

    Dual regimes hold two branches with disjoint parameters (or shared ones
    when ``share_branches`` is set, which also shares the expanders);
    single-branch regimes hold only ``branch1``.
    """

    def __init__(
        self,
        height: int,
        width: int,
        unrolled: UnrolledConfig | None = None,
        regime: str = "full",
        gamma: float = 1.0,
        share_branches: bool = False,
        expander_dim: int = 1024,
    ):
        super().__init__()
        if regime not in REGIMES:
            raise InvalidConfigError(
                f"unknown regime {regime!r}; choose from {sorted(REGIMES)}"
            )
        if gamma <= 0:
            raise InvalidConfigError(f"gamma must be positive, got {gamma}")
        self.height = height
        self.width = width
        self.regime = regime
        self.flags = REGIMES[regime]
        self.gamma = gamma
        self.share_branches = share_branches
        self.unrolled_config = unrolled or UnrolledConfig()

        self.branch1 = UnrolledNet(self.unrolled_config)
        if self.flags.dual:
            self.branch2 = (
                self.branch1
                if share_branches
                else UnrolledNet(copy.deepcopy(self.unrolled_config))
            )
            self.expander1 = Expander(height, width, expander_dim)
            self.expander2 = (
                self.expander1
                if share_branches
                else Expander(height, width, expander_dim)
            )
            if not share_branches:
                # equal starting weights keep the contrastive embeddings
                # aligned from the outset; the parameters stay disjoint
                self.expander2.load_state_dict(self.expander1.state_dict())
        else:
            self.branch2 = None
            self.expander1 = None
            self.expander2 = None


@dataclass
class CoTrainingLossReport:
    """Per-batch mean value of each objective component."""

    uc1: float = 0.0
    uc2: float = 0.0
    rc1: float = 0.0
    rc2: float = 0.0
    cl: float = 0.0
    total: float = 0.0

    def components(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("uc1", "uc2", "rc1", "rc2", "cl")}


def co_training_loss(
    model: CoTrainedModel, batch: dict[str, torch.Tensor]
) -> tuple[torch.Tensor, CoTrainingLossReport]:
    """Evaluate the regime-gated objective on one batch.

    The batch carries ``y`` (undersampled k-space, zero off the acquisition
    mask), ``mask`` (acquisition), ``mask1``/``mask2`` (branch masks, dual
    regimes), ``sens``, and ``reference`` (supervised regime). Disabled
    components are not computed at all, so their parameters receive no
    gradient. Returns the differentiable total and a float report.
    """
    flags = model.flags
    y, mask, sens = batch["y"], batch["mask"], batch["sens"]
    op_full = SenseOperator(mask, sens)
    report = CoTrainingLossReport()

    if flags.supervised:
        x1 = model.branch1(y, mask, sens)
        total = mse_complex(x1, batch["reference"])
    elif not flags.dual:
        x1 = model.branch1(y, mask, sens)
        total = loss_uc(x1, y, op_full)
        report.uc1 = float(total.detach())
    else:
        m1, m2 = batch["mask1"], batch["mask2"]
        x1 = model.branch1(y * m1.unsqueeze(-3), m1, sens)
        x2 = model.branch2(y * m2.unsqueeze(-3), m2, sens)
        terms = []
        if flags.uc:
            uc1 = loss_uc(x1, y, op_full)
            uc2 = loss_uc(x2, y, op_full)
            terms += [uc1, uc2]
            report.uc1, report.uc2 = float(uc1.detach()), float(uc2.detach())
        if flags.rc:
            rc1 = loss_rc(x1, y, op_full)
            rc2 = loss_rc(x2, y, op_full)
            terms += [rc1, rc2]
            report.rc1, report.rc2 = float(rc1.detach()), float(rc2.detach())
        if flags.cl:
            cl = loss_cl(model.expander1(x1), model.expander2(x2), model.gamma)
            terms.append(cl)
            report.cl = float(cl.detach())
        total = sum(terms)

    if flags.supervised:
        report.total = float(total.detach())
    else:
        # bookkeeping identity: the report total is the sum of its components
        report.total = sum(report.components().values())
    if not math.isfinite(report.total):
        raise TrainingDivergedError(
            f"non-finite co-training loss: {report.components()}"
        )
    return total, report


def reconstruct(
    model: CoTrainedModel,
    y: torch.Tensor,
    mask: torch.Tensor,
    sens: torch.Tensor,
) -> torch.Tensor:
    """Test-time reconstruction: both branches receive the full undersampled
    data; dual models return the elementwise branch average."""
    x1 = model.branch1(y, mask, sens)
    if model.branch2 is None:
        return x1
    x2 = model.branch2(y, mask, sens)
    return 0.5 * (x1 + x2)


@dataclass
class TrainConfig:
    """Optimization protocol and model hyperparameters for one run."""

    epochs: int = 200
    batch_size: int = 4
    lr_init: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    plateau_patience: int = 10
    plateau_factor: float = 0.3
    early_stop_patience: int = 50
    keep_ratio: float = 0.7
    gamma: float = 1.0
    regime: str = "full"
    seed: int = 0
    resample_splits: bool = True  # fresh branch masks every epoch
    mask_per_sample: bool = False  # redraw the acquisition mask per sample
    unroll_k: int = 5
    cg_iters: int = 10
    cg_tol: float = 1e-5
    lambda_init: float = 0.05
    n_filters: int = 64
    last_kernel: int = 3
    share_branches: bool = False
    expander_dim: int = 1024

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("epochs and batch_size must be >= 1")
        if self.lr_init <= 0:
            raise InvalidConfigError("lr_init must be positive")
        if not 0 < self.plateau_factor < 1:
            raise InvalidConfigError("plateau_factor must lie in (0, 1)")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise InvalidConfigError("patience values must be >= 1")
        if not 0 < self.keep_ratio <= 1:
            raise InvalidConfigError("keep_ratio must lie in (0, 1]")
        if self.gamma <= 0:
            raise InvalidConfigError("gamma must be positive")
        if self.regime not in REGIMES:
            raise InvalidConfigError(
                f"unknown regime {self.regime!r}; choose from {sorted(REGIMES)}"
            )
        self.unrolled_config().validate()

    def unrolled_config(self) -> UnrolledConfig:
        return UnrolledConfig(
            unroll_k=self.unroll_k,
            cg_iters=self.cg_iters,
            cg_tol=self.cg_tol,
            lambda_init=self.lambda_init,
            n_filters=self.n_filters,
            last_kernel=self.last_kernel,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "betas" in kwargs:
            kwargs["betas"] = tuple(kwargs["betas"])
        return cls(**kwargs)


def build_model(height: int, width: int, cfg: TrainConfig) -> CoTrainedModel:
    """Construct the model for a training config; parameter initialization
    is seeded by ``cfg.seed`` so build + train is reproducible end to end."""
    torch.manual_seed(cfg.seed)
    return CoTrainedModel(
        height,
        width,
        unrolled=cfg.unrolled_config(),
        regime=cfg.regime,
        gamma=cfg.gamma,
        share_branches=cfg.share_branches,
        expander_dim=cfg.expander_dim,
    )


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_monitor: float = math.nan
    best_epoch: int = -1
    best_state: dict | None = None
    monitor_kind: str = "ssim"
    stopped_early: bool = False


def _redraw_mask(template: SamplingMask, seed: int) -> SamplingMask:
    """A fresh mask from the same family (kind, R, acs) as the template."""
    H, W = template.pattern.shape
    make = make_1d_random_mask if template.kind == KIND_1D else make_2d_random_mask
    return make(H, W, template.acceleration, template.acs, seed)


def _branch_masks_for_epoch(
    acq_masks: list[SamplingMask],
    indices: np.ndarray,
    keep_ratio: float,
    base_seed: int,
    epoch: int,
    dtype: torch.dtype,
) -> tuple[torch.Tensor, torch.Tensor]:
    m1, m2 = [], []
    for mask, idx in zip(acq_masks, indices):
        seed = epoch_split_seed(base_seed, epoch, int(idx))
        split = split_mask(mask, keep_ratio, seed)
        m1.append(torch.from_numpy(split.omega1.pattern))
        m2.append(torch.from_numpy(split.omega2.pattern))
    return (
        torch.stack(m1).to(dtype),
        torch.stack(m2).to(dtype),
    )


def _training_batch_masks(
    acq_mask: SamplingMask,
    cfg: "TrainConfig",
    epoch: int,
    indices: np.ndarray,
    dtype: torch.dtype,
    dual: bool,
) -> tuple[torch.Tensor | None, torch.Tensor | None, torch.Tensor | None]:
    """Per-sample acquisition masks (when enabled) and branch splits."""
    if cfg.mask_per_sample:
        acq_list = [
            _redraw_mask(
                acq_mask, epoch_split_seed(cfg.seed, epoch, int(i), stream=1)
            )
            for i in indices
        ]
        acq_t = torch.stack(
            [torch.from_numpy(m.pattern) for m in acq_list]
        ).to(dtype)
    else:
        acq_list = [acq_mask] * len(indices)
        acq_t = None
    m1 = m2 = None
    if dual:
        m1, m2 = _branch_masks_for_epoch(
            acq_list, indices, cfg.keep_ratio, cfg.seed, epoch, dtype
        )
    return acq_t, m1, m2


def _validation_monitor(
    model: CoTrainedModel,
    pool,
    mask_t: torch.Tensor,
    acq_mask: SamplingMask,
    cfg: TrainConfig,
    ssim_fn,
) -> tuple[float, str]:
    """Mean SSIM of reconstructions against references when the pool has
    references, otherwise the co-training loss on fixed validation splits."""
    n = pool.kspace.shape[0]
    bs = cfg.batch_size
    if pool.reference is not None:
        scores = []
        for i in range(0, n, bs):
            y = pool.kspace[i : i + bs] * mask_t
            xr = reconstruct(model, y, mask_t, pool.sens[i : i + bs])
            for j in range(xr.shape[0]):
                ref = pool.reference[i + j].abs().cpu().numpy()
                scores.append(ssim_fn(ref, xr[j].abs().cpu().numpy()))
        return float(np.mean(scores)), "ssim"
    totals = []
    for i in range(0, n, bs):
        idx = np.arange(i, min(i + bs, n))
        batch = {
            "y": pool.kspace[i : i + bs] * mask_t,
            "mask": mask_t,
            "sens": pool.sens[i : i + bs],
        }
        if model.flags.dual:
            # epoch index 0 keeps the monitor comparable across epochs
            m1, m2 = _branch_masks_for_epoch(
                [acq_mask] * len(idx), idx, cfg.keep_ratio, cfg.seed, 0,
                mask_t.dtype,
            )
            batch["mask1"], batch["mask2"] = m1, m2
        _, report = co_training_loss(model, batch)
        totals.append(report.total)
    return float(np.mean(totals)), "loss"


def train(
    model: CoTrainedModel,
    train_pool,
    val_pool,
    acq_mask: SamplingMask,
    cfg: TrainConfig,
    out_dir: str | None = None,
) -> TrainResult:
    """Run the optimization protocol: adaptive moments at ``lr_init`` with
    the configured betas, plateau-driven learning-rate decay, early
    stopping, and best/last checkpointing.

    Pools must expose ``kspace`` (N, C, H, W complex, fully sampled),
    ``sens`` (N, C, H, W) and optionally ``reference`` (N, H, W complex).
    Undersampling with ``acq_mask`` and the per-epoch branch re-splits
    happen inside the loop. Raises :class:`TrainingDivergedError` on a
    non-finite loss; the previous epoch's checkpoint is retained.
    """
    from .metrics import ssim as ssim_fn  # local import to avoid cycles

    cfg.validate()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    dtype = model.branch1.log_lam.dtype
    mask_t = torch.from_numpy(acq_mask.pattern).to(dtype)

    try:
        # fused CPU kernels cut the update cost of the wide expander layers
        opt = torch.optim.Adam(
            model.parameters(), lr=cfg.lr_init, betas=cfg.betas, fused=True
        )
    except (RuntimeError, ValueError):
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_init, betas=cfg.betas)
    result = TrainResult()
    best = None
    since_improve = 0
    bad_epochs = 0
    n = train_pool.kspace.shape[0]
    if n < 1:
        raise InvalidConfigError("training pool is empty")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    for epoch in range(cfg.epochs):
        model.train()
        perm = rng.permutation(n)
        sums: dict[str, float] = {k: 0.0 for k in ("uc1", "uc2", "rc1", "rc2", "cl", "total")}
        seen = 0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            split_epoch = epoch if cfg.resample_splits else 0
            acq_t, m1, m2 = _training_batch_masks(
                acq_mask, cfg, split_epoch, idx, dtype, model.flags.dual
            )
            mask_b = acq_t if acq_t is not None else mask_t
            y = train_pool.kspace[idx] * (
                acq_t.unsqueeze(-3) if acq_t is not None else mask_t
            )
            batch = {"y": y, "mask": mask_b, "sens": train_pool.sens[idx]}
            if model.flags.supervised:
                batch["reference"] = train_pool.reference[idx]
            if model.flags.dual:
                batch["mask1"], batch["mask2"] = m1, m2
            total, report = co_training_loss(model, batch)
            opt.zero_grad()
            total.backward()
            opt.step()
            b = len(idx)
            for k in sums:
                sums[k] += getattr(report, k) * b
            seen += b

        model.eval()
        with torch.no_grad():
            monitor, kind = _validation_monitor(
                model, val_pool, mask_t, acq_mask, cfg, ssim_fn
            )
        result.monitor_kind = kind
        improved = (
            best is None
            or (kind == "ssim" and monitor > best)
            or (kind == "loss" and monitor < best)
        )
        if improved:
            best = monitor
            result.best_monitor = monitor
            result.best_epoch = epoch
            result.best_state = copy.deepcopy(model.state_dict())
            since_improve = 0
            bad_epochs = 0
            if out_dir is not None:
                save_checkpoint(
                    os.path.join(out_dir, "checkpoint_best.pt"),
                    model, opt, epoch, cfg, monitor,
                )
        else:
            since_improve += 1
            bad_epochs += 1

        lr = opt.param_groups[0]["lr"]
        if bad_epochs >= cfg.plateau_patience:
            lr *= cfg.plateau_factor
            for g in opt.param_groups:
                g["lr"] = lr
            bad_epochs = 0

        row = {"epoch": epoch, "lr": opt.param_groups[0]["lr"]}
        row.update({k: sums[k] / max(seen, 1) for k in sums})
        row["val_monitor"] = monitor
        result.history.append(row)
        if out_dir is not None:
            save_checkpoint(
                os.path.join(out_dir, "checkpoint_last.pt"),
                model, opt, epoch, cfg, monitor,
            )
            write_history_csv(os.path.join(out_dir, "history.csv"), result.history)

        if since_improve >= cfg.early_stop_patience:
            result.stopped_early = True
            break

    return result


def save_checkpoint(path, model: CoTrainedModel, optimizer, epoch: int,
                    cfg: TrainConfig, monitor: float) -> None:
    """Single-archive checkpoint with named arrays; see README for the key
    naming scheme."""
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "epoch": epoch,
            "monitor": monitor,
            "config": cfg.to_dict(),
            "height": model.height,
            "width": model.width,
        },
        path,
    )


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def model_from_checkpoint(ckpt: dict) -> CoTrainedModel:
    cfg = TrainConfig.from_dict(ckpt["config"])
    model = build_model(ckpt["height"], ckpt["width"], cfg)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model


HISTORY_COLUMNS = [
    "epoch", "lr", "uc1", "uc2", "rc1", "rc2", "cl", "total", "val_monitor",
]


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, "") for k in HISTORY_COLUMNS})
