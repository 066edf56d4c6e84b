"""Dataset ingestion, synthetic multi-coil phantom simulation,
normalization, and volume-level train/val/test splitting.

On-disk layout per volume (HDF5): dataset ``kspace`` (slices x C x H x W,
complex64, fully sampled as stored), optional ``ground_truth`` (slices x H
x W, complex64) and ``sensitivities`` (C x H x W, complex64). Scalar
metadata lives in the attrs of ``kspace``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace

import h5py
import numpy as np
import torch

from .errors import DataFormatError, InvalidConfigError, InvalidInputError
from .operators import (
    CoilSensitivities,
    estimate_sensitivities,
    fft2c,
    ifft2c,
    rss_combine,
)

__all__ = [
    "VolumeRecord",
    "DatasetManifest",
    "load_volume",
    "save_volume",
    "load_sensitivities",
    "simulate_phantom_dataset",
    "coil_profiles",
    "normalize_volume",
    "split_dataset",
    "save_manifest",
    "load_manifest",
    "SlicePool",
    "build_slice_pool",
]


@dataclass
class VolumeRecord:
    """One multi-coil volume, fully sampled as stored."""

    kspace: np.ndarray  # (S, C, H, W) complex64
    id: str
    metadata: dict = field(default_factory=dict)
    ground_truth: np.ndarray | None = None  # (S, H, W) complex64
    sensitivities: np.ndarray | None = None  # (C, H, W) complex64


@dataclass
class DatasetManifest:
    """Volume ids per split; disjoint by construction."""

    train: list[str]
    val: list[str]
    test: list[str]
    seed: int

    def all_ids(self) -> list[str]:
        return list(self.train) + list(self.val) + list(self.test)


def load_volume(path) -> VolumeRecord:
    """Read one volume file; rejects files without a rank-4 ``kspace``."""
    with h5py.File(path, "r") as f:
        if "kspace" not in f:
            raise DataFormatError(f"{path}: missing 'kspace' dataset")
        kspace = np.asarray(f["kspace"][()])
        if kspace.ndim != 4:
            raise DataFormatError(
                f"{path}: expected kspace of shape (slices, coils, H, W), "
                f"found rank-{kspace.ndim} array {kspace.shape}"
            )
        gt = np.asarray(f["ground_truth"][()]) if "ground_truth" in f else None
        sens = np.asarray(f["sensitivities"][()]) if "sensitivities" in f else None
        metadata = {k: _from_attr(v) for k, v in f["kspace"].attrs.items()}
    vol_id = metadata.get("id", os.path.splitext(os.path.basename(path))[0])
    return VolumeRecord(
        kspace=kspace, id=str(vol_id), metadata=metadata,
        ground_truth=gt, sensitivities=sens,
    )


def _from_attr(v):
    if isinstance(v, bytes):
        return v.decode()
    if isinstance(v, np.generic):
        return v.item()
    return v


def save_volume(path, rec: VolumeRecord) -> None:
    with h5py.File(path, "w") as f:
        d = f.create_dataset("kspace", data=rec.kspace.astype(np.complex64))
        d.attrs["id"] = rec.id
        for k, v in rec.metadata.items():
            if isinstance(v, (int, float, str, np.generic)):
                d.attrs[k] = v
        if rec.ground_truth is not None:
            f.create_dataset("ground_truth", data=rec.ground_truth.astype(np.complex64))
        if rec.sensitivities is not None:
            f.create_dataset("sensitivities", data=rec.sensitivities.astype(np.complex64))


def load_sensitivities(path) -> CoilSensitivities:
    """Load precomputed coil maps: dataset ``sensitivities`` (C, H, W,
    complex64) plus optional ``support`` (H, W, uint8)."""
    with h5py.File(path, "r") as f:
        if "sensitivities" not in f:
            raise DataFormatError(f"{path}: missing 'sensitivities' dataset")
        maps = np.asarray(f["sensitivities"][()])
        if maps.ndim != 3:
            raise DataFormatError(
                f"{path}: expected maps of shape (C, H, W), "
                f"found rank-{maps.ndim} array {maps.shape}"
            )
        if "support" in f:
            support = np.asarray(f["support"][()]).astype(bool)
        else:
            support = np.abs(maps).sum(axis=0) > 0
    return CoilSensitivities(
        maps=torch.from_numpy(maps.astype(np.complex64)),
        support=torch.from_numpy(support),
    )


def _grids(H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(
        np.linspace(-1.0, 1.0, H), np.linspace(-1.0, 1.0, W), indexing="ij"
    )
    return yy, xx


def _smooth_phase_field(rng, H: int, W: int, scale: float) -> np.ndarray:
    yy, xx = _grids(H, W)
    fld = np.zeros((H, W))
    for _ in range(3):
        fx, fy = rng.uniform(-1.5, 1.5, size=2)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        fld += np.cos(np.pi * (fx * xx + fy * yy) + phi)
    return scale * fld / 3.0


def _ellipse_phantom(rng, H: int, W: int) -> np.ndarray:
    """Random multi-ellipse complex phantom, peak magnitude exactly 1."""
    yy, xx = _grids(H, W)
    img = np.zeros((H, W), dtype=np.complex128)
    n_ellipses = int(rng.integers(4, 11))
    for k in range(n_ellipses):
        if k == 0:
            # large body ellipse with zero phase anchors the support
            cx, cy = rng.uniform(-0.1, 0.1, size=2)
            a, b = rng.uniform(0.55, 0.8, size=2)
            amp, phase = rng.uniform(0.6, 1.0), 0.0
        else:
            cx, cy = rng.uniform(-0.55, 0.55, size=2)
            a, b = rng.uniform(0.08, 0.45, size=2)
            amp = rng.uniform(0.2, 1.0)
            phase = rng.uniform(-np.pi, np.pi)
        theta = rng.uniform(0.0, np.pi)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        img[inside] += amp * np.exp(1j * phase)
    img *= np.exp(1j * _smooth_phase_field(rng, H, W, scale=np.pi / 4.0))
    peak = np.abs(img).max()
    if peak <= 0:
        raise InvalidInputError("degenerate phantom draw (all-zero image)")
    return img / peak


def coil_profiles(
    H: int, W: int, C: int, rng=None, ring_radius: float = 1.25,
    width: float = 0.9,
) -> np.ndarray:
    """Pixelwise-normalized Gaussian coil maps on a ring around the image.

    For ``C == 1`` the map is identically one. With an ``rng``, each coil
    gets a random constant phase; without one the maps are real.
    """
    if C < 1:
        raise InvalidConfigError(f"need at least one coil, got {C}")
    if C == 1:
        return np.ones((1, H, W), dtype=np.complex128)
    yy, xx = _grids(H, W)
    maps = np.empty((C, H, W), dtype=np.complex128)
    for c in range(C):
        angle = 2.0 * np.pi * c / C
        cx, cy = ring_radius * np.cos(angle), ring_radius * np.sin(angle)
        g = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2)) / (2.0 * width**2))
        phase = rng.uniform(-np.pi, np.pi) if rng is not None else 0.0
        maps[c] = g * np.exp(1j * phase)
    rss = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    return maps / rss


def simulate_phantom_dataset(
    out_dir,
    n_volumes: int,
    slices_per_volume: int,
    H: int,
    W: int,
    C: int,
    noise_std: float,
    seed: int,
) -> list[str]:
    """Write a deterministic synthetic multi-coil dataset.

    Each slice is an ellipse phantom with a smooth random phase field; coil
    maps are ring Gaussians shared within a volume; k-space is the encoded
    image plus complex Gaussian noise with standard deviation ``noise_std``
    per complex sample (the ground-truth peak magnitude is 1, so the noise
    level is relative to it). Ground truth and sensitivities are stored
    alongside the k-space.
    """
    if C < 1:
        raise InvalidConfigError(f"need at least one coil, got {C}")
    if n_volumes < 1 or slices_per_volume < 1:
        raise InvalidConfigError("need at least one volume and one slice")
    os.makedirs(out_dir, exist_ok=True)
    ids = []
    for v in range(n_volumes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, v)))
        sens = coil_profiles(H, W, C, rng=rng if C > 1 else None)
        sens_t = torch.from_numpy(sens)
        kspace = np.empty((slices_per_volume, C, H, W), dtype=np.complex64)
        gt = np.empty((slices_per_volume, H, W), dtype=np.complex64)
        for s in range(slices_per_volume):
            x = _ellipse_phantom(rng, H, W)
            coil_imgs = sens_t * torch.from_numpy(x)
            k = fft2c(coil_imgs).numpy()
            if noise_std > 0:
                noise = rng.normal(0.0, noise_std / np.sqrt(2.0), size=(C, H, W, 2))
                k = k + noise[..., 0] + 1j * noise[..., 1]
            kspace[s] = k.astype(np.complex64)
            gt[s] = x.astype(np.complex64)
        vol_id = f"vol_{v:03d}"
        ids.append(vol_id)
        rec = VolumeRecord(
            kspace=kspace,
            id=vol_id,
            metadata={
                "H": H, "W": W, "C": C,
                "noise_std": float(noise_std), "seed": seed,
            },
            ground_truth=gt,
            sensitivities=sens.astype(np.complex64),
        )
        save_volume(os.path.join(out_dir, f"{vol_id}.h5"), rec)
    return ids


def normalize_volume(rec: VolumeRecord) -> tuple[VolumeRecord, float]:
    """Scale the volume so the zero-filled combined image peaks at 1.

    The scale is the maximum RSS magnitude of the per-coil inverse
    transforms over all slices; ground truth is scaled with the k-space so
    references stay consistent. The scale is recorded in the metadata for
    de-normalization in reports.
    """
    if not np.isfinite(rec.kspace).all():
        raise InvalidInputError(f"{rec.id}: non-finite k-space")
    if not np.abs(rec.kspace).max() > 0:
        raise InvalidInputError(f"{rec.id}: all-zero volume")
    zf = rss_combine(ifft2c(torch.from_numpy(rec.kspace)))
    scale = float(zf.max())
    out = replace(
        rec,
        kspace=(rec.kspace / scale).astype(rec.kspace.dtype),
        ground_truth=None
        if rec.ground_truth is None
        else (rec.ground_truth / scale).astype(rec.ground_truth.dtype),
        metadata={**rec.metadata, "norm_scale": scale * rec.metadata.get("norm_scale", 1.0)},
    )
    return out, scale


def split_dataset(volume_ids: list[str], seed: int) -> DatasetManifest:
    """Shuffle and partition volume ids 60/20/20 (rounded to nearest)."""
    ids = list(volume_ids)
    if len(ids) < 5:
        raise InvalidConfigError(f"need at least 5 volumes, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return DatasetManifest(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


def save_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w") as f:
        f.write(f"seed: {manifest.seed}\n")
        for split in ("train", "val", "test"):
            f.write(f"[{split}]\n")
            for vol_id in getattr(manifest, split):
                f.write(f"{vol_id}\n")


def load_manifest(path) -> DatasetManifest:
    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    seed = 0
    current = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            m = re.fullmatch(r"seed:\s*(-?\d+)", line)
            if m:
                seed = int(m.group(1))
                continue
            m = re.fullmatch(r"\[(\w+)\]", line)
            if m:
                current = m.group(1)
                if current not in splits:
                    raise DataFormatError(f"{path}: unknown split '{current}'")
                continue
            if current is None:
                raise DataFormatError(f"{path}: volume id before any [split]")
            splits[current].append(line)
    return DatasetManifest(seed=seed, **splits)


@dataclass
class SlicePool:
    """In-memory stack of slices ready for training or evaluation."""

    kspace: torch.Tensor  # (N, C, H, W) complex, fully sampled, normalized
    sens: torch.Tensor  # (N, C, H, W) complex
    reference: torch.Tensor | None  # (N, H, W) complex
    volume_ids: list[str]
    slice_indices: list[int]

    @property
    def num_slices(self) -> int:
        return self.kspace.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.kspace.shape[-2:])

    def subset(self, indices) -> "SlicePool":
        idx = list(indices)
        return SlicePool(
            kspace=self.kspace[idx],
            sens=self.sens[idx],
            reference=None if self.reference is None else self.reference[idx],
            volume_ids=[self.volume_ids[i] for i in idx],
            slice_indices=[self.slice_indices[i] for i in idx],
        )


def build_slice_pool(
    data_dir,
    volume_ids: list[str],
    dtype: torch.dtype = torch.complex64,
    with_reference: bool = True,
    sens_acs: int = 24,
    normalize: bool = True,
) -> SlicePool:
    """Load volumes, normalize, and flatten them into per-slice tensors.

    Stored sensitivities take precedence; otherwise maps are estimated per
    slice from the central ``sens_acs`` calibration block. The reference is
    the sensitivity-weighted combination of the fully sampled data (the
    same rule the evaluator applies to every method).
    """
    ks, sens_list, refs, vols, slices = [], [], [], [], []
    for vol_id in volume_ids:
        rec = load_volume(os.path.join(data_dir, f"{vol_id}.h5"))
        if normalize:
            rec, _ = normalize_volume(rec)
        k_t = torch.from_numpy(rec.kspace.astype(np.complex64)).to(dtype)
        if rec.sensitivities is not None:
            sens_vol = torch.from_numpy(
                rec.sensitivities.astype(np.complex64)
            ).to(dtype)
        else:
            sens_vol = None
        for s in range(k_t.shape[0]):
            k_slice = k_t[s]
            sens_slice = (
                sens_vol
                if sens_vol is not None
                else estimate_sensitivities(k_slice, sens_acs).maps
            )
            ks.append(k_slice)
            sens_list.append(sens_slice)
            if with_reference:
                refs.append((ifft2c(k_slice) * sens_slice.conj()).sum(dim=0))
            vols.append(rec.id)
            slices.append(s)
    if not ks:
        raise InvalidConfigError("no volumes given")
    return SlicePool(
        kspace=torch.stack(ks),
        sens=torch.stack(sens_list),
        reference=torch.stack(refs) if with_reference else None,
        volume_ids=vols,
        slice_indices=slices,
    )
