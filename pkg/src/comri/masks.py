"""Cartesian undersampling masks and the two-branch re-undersampling split.

Masks are ``(H, W)`` uint8 arrays with a fully sampled autocalibration (ACS)
region in the center: the central ``acs`` columns for the 1-D kind, a
central ``acs x acs`` block for the 2-D kind. Generators are deterministic
given their seed and hit their sample budget exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import h5py
import numpy as np

from .errors import ContractError, InvalidConfigError, InvalidInputError

KIND_1D = "1d-random"
KIND_2D = "2d-random"

__all__ = [
    "KIND_1D",
    "KIND_2D",
    "SamplingMask",
    "MaskSplit",
    "make_1d_random_mask",
    "make_2d_random_mask",
    "split_mask",
    "apply_mask",
    "effective_acceleration",
    "epoch_split_seed",
    "save_mask",
    "load_mask",
]


def _center_slice(n: int, size: int) -> slice:
    start = (n - size) // 2
    return slice(start, start + size)


@dataclass(frozen=True)
class SamplingMask:
    """Binary acquisition pattern plus the metadata that produced it."""

    pattern: np.ndarray  # (H, W) uint8
    kind: str  # KIND_1D | KIND_2D
    acceleration: float
    acs: int
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.shape

    def acs_region(self) -> tuple[slice, slice]:
        """Row/column slices of the fully sampled central region."""
        H, W = self.pattern.shape
        if self.kind == KIND_1D:
            return slice(0, H), _center_slice(W, self.acs)
        return _center_slice(H, self.acs), _center_slice(W, self.acs)

    def num_sampled(self) -> int:
        return int(self.pattern.sum())


@dataclass(frozen=True)
class MaskSplit:
    """A branch pair of re-undersampling masks drawn from one acquisition."""

    omega1: SamplingMask
    omega2: SamplingMask
    keep_ratio: float
    seed: int


def make_1d_random_mask(
    H: int, W: int, R: float, acs: int, seed: int
) -> SamplingMask:
    """Random phase-encode line mask: full central ``acs`` columns plus
    uniformly drawn extra columns so that ``round(W/R)`` columns are sampled.

    Raises:
        InvalidConfigError: R <= 1, or the budget cannot cover the ACS.
    """
    _validate_dims(H, W)
    if R <= 1:
        raise InvalidConfigError(f"acceleration R must be > 1, got {R}")
    if not 0 < acs <= W:
        raise InvalidConfigError(f"acs={acs} outside (0, W={W}]")
    budget = int(round(W / R))
    if budget < acs:
        raise InvalidConfigError(
            f"round(W/R)={budget} sampled columns cannot cover acs={acs}"
        )
    cols = np.zeros(W, dtype=bool)
    cols[_center_slice(W, acs)] = True
    rng = np.random.default_rng(seed)
    extra = rng.choice(np.flatnonzero(~cols), size=budget - acs, replace=False)
    cols[extra] = True
    pattern = np.broadcast_to(cols, (H, W)).astype(np.uint8)
    return SamplingMask(pattern, KIND_1D, float(R), acs, seed)


def make_2d_random_mask(
    H: int, W: int, R: float, acs: int, seed: int
) -> SamplingMask:
    """Random point mask: full central ``acs x acs`` block plus uniformly
    drawn extra points so that ``round(H*W/R)`` points are sampled."""
    _validate_dims(H, W)
    if R <= 1:
        raise InvalidConfigError(f"acceleration R must be > 1, got {R}")
    if not 0 < acs <= min(H, W):
        raise InvalidConfigError(f"acs={acs} outside (0, min(H, W)]")
    budget = int(round(H * W / R))
    if budget < acs * acs:
        raise InvalidConfigError(
            f"round(H*W/R)={budget} sampled points cannot cover "
            f"the {acs}x{acs} ACS block"
        )
    pattern = np.zeros((H, W), dtype=bool)
    pattern[_center_slice(H, acs), _center_slice(W, acs)] = True
    rng = np.random.default_rng(seed)
    extra = rng.choice(
        np.flatnonzero(~pattern.ravel()), size=budget - acs * acs, replace=False
    )
    pattern.ravel()[extra] = True
    return SamplingMask(pattern.astype(np.uint8), KIND_2D, float(R), acs, seed)


def _validate_dims(H: int, W: int) -> None:
    if H < 1 or W < 1:
        raise InvalidConfigError(f"mask dims must be positive, got {H}x{W}")


def split_mask(
    omega: SamplingMask,
    keep_ratio: float,
    seed: int,
    resample_until_distinct: bool = True,
    max_attempts: int = 1000,
) -> MaskSplit:
    """Draw the two branch masks used for contrastive re-undersampling.

    Each branch keeps the full ACS region plus an independent uniform subset
    of ``keep_ratio`` of the non-ACS sampled units (columns for the 1-D
    kind, points for the 2-D kind). By default the draw repeats until the
    branches differ somewhere.

    Raises:
        InvalidConfigError: keep_ratio outside (0, 1], or distinct branches
            are requested but impossible for this mask/ratio.
    """
    if not 0 < keep_ratio <= 1:
        raise InvalidConfigError(f"keep_ratio={keep_ratio} outside (0, 1]")
    sampled = omega.pattern.astype(bool)
    acs_rows, acs_cols = omega.acs_region()
    acs_mask = np.zeros_like(sampled)
    acs_mask[acs_rows, acs_cols] = True

    if omega.kind == KIND_1D:
        col_sampled = sampled[0]
        col_acs = acs_mask[0]
        candidates = np.flatnonzero(col_sampled & ~col_acs)
    else:
        candidates = np.flatnonzero((sampled & ~acs_mask).ravel())

    n_keep = int(round(keep_ratio * candidates.size))
    distinct_possible = 0 < n_keep < candidates.size
    if resample_until_distinct and not distinct_possible:
        raise InvalidConfigError(
            f"cannot draw distinct branch masks: keep {n_keep} of "
            f"{candidates.size} non-ACS units"
        )

    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        pick1 = rng.choice(candidates, size=n_keep, replace=False)
        pick2 = rng.choice(candidates, size=n_keep, replace=False)
        p1 = _branch_pattern(omega, acs_mask, pick1)
        p2 = _branch_pattern(omega, acs_mask, pick2)
        if not resample_until_distinct or not np.array_equal(p1, p2):
            break
    else:
        raise InvalidConfigError(
            f"no distinct branch masks after {max_attempts} draws"
        )

    H, W = omega.pattern.shape

    def _as_mask(p: np.ndarray) -> SamplingMask:
        return replace(
            omega, pattern=p, acceleration=float(H * W / p.sum()), seed=seed
        )

    return MaskSplit(_as_mask(p1), _as_mask(p2), keep_ratio, seed)


def _branch_pattern(
    omega: SamplingMask, acs_mask: np.ndarray, picked: np.ndarray
) -> np.ndarray:
    keep = acs_mask.copy()
    if omega.kind == KIND_1D:
        keep[:, picked] = True
    else:
        keep.ravel()[picked] = True
    return (keep & omega.pattern.astype(bool)).astype(np.uint8)


def apply_mask(y: np.ndarray, omega: SamplingMask) -> np.ndarray:
    """Elementwise mask, broadcast over leading (coil/batch) axes.

    Off-mask entries of the result are bit-exact zero.
    """
    if y.shape[-2:] != omega.pattern.shape:
        raise ContractError(
            f"k-space (H, W)={y.shape[-2:]} does not match mask "
            f"{omega.pattern.shape}"
        )
    return y * omega.pattern


def effective_acceleration(omega: SamplingMask) -> float:
    """Ratio of grid size to sampled points."""
    ones = omega.num_sampled()
    if ones == 0:
        raise InvalidInputError("mask has no sampled points")
    H, W = omega.pattern.shape
    return H * W / ones


def epoch_split_seed(base_seed: int, epoch: int, index: int, stream: int = 0) -> int:
    """Deterministic child seed for per-epoch, per-sample mask draws.

    ``stream`` separates independent uses of the same (seed, epoch, index)
    triple, e.g. acquisition-mask draws vs branch splits.
    """
    return int(
        np.random.SeedSequence((base_seed, epoch, index, stream)).generate_state(1)[0]
    )


def save_mask(path, omega: SamplingMask) -> None:
    """Persist as HDF5: dataset ``mask`` (H, W) uint8 plus metadata attrs."""
    with h5py.File(path, "w") as f:
        d = f.create_dataset("mask", data=omega.pattern.astype(np.uint8))
        d.attrs["kind"] = omega.kind
        d.attrs["acceleration"] = omega.acceleration
        d.attrs["acs"] = omega.acs
        d.attrs["seed"] = omega.seed


def load_mask(path) -> SamplingMask:
    with h5py.File(path, "r") as f:
        if "mask" not in f:
            raise InvalidInputError(f"{path}: no 'mask' dataset")
        d = f["mask"]
        pattern = np.asarray(d[()], dtype=np.uint8)
        if pattern.ndim != 2:
            raise InvalidInputError(
                f"{path}: mask must be 2-D, got shape {pattern.shape}"
            )
        return SamplingMask(
            pattern=pattern,
            kind=str(d.attrs.get("kind", KIND_2D)),
            acceleration=float(d.attrs.get("acceleration", 0.0)),
            acs=int(d.attrs.get("acs", 0)),
            seed=int(d.attrs.get("seed", 0)),
        )
