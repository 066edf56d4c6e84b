import numpy as np
import pytest
import torch

from comri import (
    DataFormatError,
    InvalidConfigError,
    InvalidInputError,
    VolumeRecord,
    build_slice_pool,
    fft2c,
    ifft2c,
    load_manifest,
    load_sensitivities,
    load_volume,
    normalize_volume,
    psnr,
    rss_combine,
    save_manifest,
    save_volume,
    simulate_phantom_dataset,
    split_dataset,
    ssim,
)

import h5py


class TestVolumeIO:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        k = (rng.standard_normal((3, 2, 16, 16)) + 1j * rng.standard_normal((3, 2, 16, 16))).astype(np.complex64)
        rec = VolumeRecord(kspace=k, id="vol_x", metadata={"H": 16})
        path = tmp_path / "vol_x.h5"
        save_volume(path, rec)
        loaded = load_volume(path)
        assert np.array_equal(loaded.kspace, k)
        assert loaded.id == "vol_x"
        assert loaded.metadata["H"] == 16

    def test_wrong_rank_rejected(self, tmp_path):
        path = tmp_path / "bad.h5"
        with h5py.File(path, "w") as f:
            f.create_dataset("kspace", data=np.zeros((2, 16, 16), np.complex64))
        with pytest.raises(DataFormatError, match="rank-3"):
            load_volume(path)

    def test_missing_kspace_rejected(self, tmp_path):
        path = tmp_path / "empty.h5"
        with h5py.File(path, "w") as f:
            f.create_dataset("other", data=np.zeros(4))
        with pytest.raises(DataFormatError, match="kspace"):
            load_volume(path)

    def test_load_sensitivities(self, tmp_path):
        rng = np.random.default_rng(1)
        maps = (rng.standard_normal((4, 8, 8)) + 1j * rng.standard_normal((4, 8, 8))).astype(np.complex64)
        support = (rng.random((8, 8)) > 0.3).astype(np.uint8)
        path = tmp_path / "sens.h5"
        with h5py.File(path, "w") as f:
            f.create_dataset("sensitivities", data=maps)
            f.create_dataset("support", data=support)
        sens = load_sensitivities(path)
        assert np.array_equal(sens.maps.numpy(), maps)
        assert np.array_equal(sens.support.numpy(), support.astype(bool))
        with h5py.File(tmp_path / "bad.h5", "w") as f:
            f.create_dataset("sensitivities", data=maps[0])
        with pytest.raises(DataFormatError):
            load_sensitivities(tmp_path / "bad.h5")


class TestSimulator:
    def test_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            simulate_phantom_dataset(out, 2, 3, 24, 24, 3, 0.02, seed=5)
        for name in ("vol_000.h5", "vol_001.h5"):
            va = load_volume(a / name)
            vb = load_volume(b / name)
            assert np.array_equal(va.kspace, vb.kspace)
            assert np.array_equal(va.ground_truth, vb.ground_truth)
            assert np.array_equal(va.sensitivities, vb.sensitivities)

    def test_noiseless_single_coil_inverts_to_ground_truth(self, tmp_path):
        simulate_phantom_dataset(tmp_path, 1, 2, 32, 32, 1, 0.0, seed=3)
        rec = load_volume(tmp_path / "vol_000.h5")
        assert np.allclose(rec.sensitivities, 1.0)
        img = ifft2c(torch.from_numpy(rec.kspace[:, 0])).numpy()
        assert np.abs(img - rec.ground_truth).max() <= 1e-6

    def test_forward_consistency_with_stored_maps(self, tmp_path):
        simulate_phantom_dataset(tmp_path, 1, 2, 32, 32, 4, 0.0, seed=7)
        rec = load_volume(tmp_path / "vol_000.h5")
        sens = torch.from_numpy(rec.sensitivities.astype(np.complex128))
        for s in range(2):
            gt = torch.from_numpy(rec.ground_truth[s].astype(np.complex128))
            k = fft2c(sens * gt).numpy()
            assert np.abs(k - rec.kspace[s]).max() <= 1e-6

    def test_noise_level_in_image_domain(self, tmp_path):
        noise_std = 0.05
        simulate_phantom_dataset(tmp_path, 2, 4, 48, 48, 4, noise_std, seed=11)
        maes = []
        for vol in ("vol_000", "vol_001"):
            rec = load_volume(tmp_path / f"{vol}.h5")
            for s in range(4):
                coil_imgs = ifft2c(torch.from_numpy(rec.kspace[s]))
                mag = rss_combine(coil_imgs).numpy()
                maes.append(np.abs(mag - np.abs(rec.ground_truth[s])).mean())
        assert np.mean(maes) <= 2 * noise_std

    def test_sensitivities_normalized(self, tmp_path):
        simulate_phantom_dataset(tmp_path, 1, 1, 16, 16, 5, 0.0, seed=13)
        rec = load_volume(tmp_path / "vol_000.h5")
        ssq = (np.abs(rec.sensitivities) ** 2).sum(axis=0)
        assert np.allclose(ssq, 1.0, atol=1e-5)

    def test_config_validation(self, tmp_path):
        with pytest.raises(InvalidConfigError):
            simulate_phantom_dataset(tmp_path, 0, 1, 16, 16, 1, 0.0, seed=0)
        with pytest.raises(InvalidConfigError):
            simulate_phantom_dataset(tmp_path, 1, 1, 16, 16, 0, 0.0, seed=0)


class TestNormalize:
    def _record(self, seed=0):
        rng = np.random.default_rng(seed)
        k = 37.0 * (
            rng.standard_normal((2, 3, 16, 16)) + 1j * rng.standard_normal((2, 3, 16, 16))
        ).astype(np.complex64)
        gt = rng.standard_normal((2, 16, 16)).astype(np.complex64)
        return VolumeRecord(kspace=k, id="v", ground_truth=gt)

    def test_second_application_is_identity(self):
        rec, scale1 = normalize_volume(self._record())
        rec2, scale2 = normalize_volume(rec)
        assert scale1 > 0
        assert scale2 == pytest.approx(1.0, abs=1e-6)

    def test_scale_recorded_and_composed(self):
        rec, s1 = normalize_volume(self._record())
        assert rec.metadata["norm_scale"] == pytest.approx(s1)
        rec2, s2 = normalize_volume(rec)
        assert rec2.metadata["norm_scale"] == pytest.approx(s1 * s2)

    def test_metrics_invariant_to_normalization(self):
        rec = self._record(seed=4)
        normed, scale = normalize_volume(rec)
        ref_raw = np.abs(rec.ground_truth[0])
        ref_new = np.abs(normed.ground_truth[0])
        rng = np.random.default_rng(5)
        err = rng.normal(0, 0.05, size=ref_raw.shape)
        assert psnr(ref_raw, ref_raw + err) == pytest.approx(
            psnr(ref_new, ref_new + err / scale), abs=1e-6
        )
        assert ssim(ref_raw, ref_raw + err) == pytest.approx(
            ssim(ref_new, ref_new + err / scale), abs=1e-6
        )

    def test_zero_volume_rejected(self):
        rec = VolumeRecord(kspace=np.zeros((1, 1, 8, 8), np.complex64), id="z")
        with pytest.raises(InvalidInputError):
            normalize_volume(rec)


class TestSplitDataset:
    def test_ten_volumes(self):
        m = split_dataset([f"v{i}" for i in range(10)], seed=0)
        assert (len(m.train), len(m.val), len(m.test)) == (6, 2, 2)

    def test_knee_scale_counts(self):
        m = split_dataset([f"v{i}" for i in range(245)], seed=1)
        assert (len(m.train), len(m.val), len(m.test)) == (147, 49, 49)

    def test_disjoint_and_covering(self):
        ids = [f"v{i}" for i in range(23)]
        m = split_dataset(ids, seed=2)
        assert set(m.train) | set(m.val) | set(m.test) == set(ids)
        assert not set(m.train) & set(m.val)
        assert not set(m.train) & set(m.test)
        assert not set(m.val) & set(m.test)

    def test_too_few_rejected(self):
        with pytest.raises(InvalidConfigError):
            split_dataset(["a", "b", "c", "d"], seed=0)

    def test_deterministic(self):
        ids = [f"v{i}" for i in range(9)]
        assert split_dataset(ids, seed=3) == split_dataset(ids, seed=3)

    def test_manifest_roundtrip(self, tmp_path):
        m = split_dataset([f"v{i}" for i in range(11)], seed=4)
        path = tmp_path / "manifest.txt"
        save_manifest(path, m)
        assert load_manifest(path) == m


class TestSlicePool:
    def test_pool_shapes_and_reference_rule(self, tmp_path):
        simulate_phantom_dataset(tmp_path, 2, 3, 24, 24, 4, 0.0, seed=17)
        pool = build_slice_pool(tmp_path, ["vol_000", "vol_001"])
        assert pool.kspace.shape == (6, 4, 24, 24)
        assert pool.sens.shape == (6, 4, 24, 24)
        assert pool.reference.shape == (6, 24, 24)
        # stored maps take precedence and define the reference combine
        rec, _ = normalize_volume(load_volume(tmp_path / "vol_000.h5"))
        sens = torch.from_numpy(rec.sensitivities)
        assert torch.allclose(pool.sens[0], sens, atol=1e-6)
        k = torch.from_numpy(rec.kspace[0])
        expected = (ifft2c(k) * sens.conj()).sum(dim=0)
        assert torch.allclose(pool.reference[0], expected, atol=1e-5)

    def test_estimated_maps_when_not_stored(self, tmp_path):
        simulate_phantom_dataset(tmp_path, 1, 1, 24, 24, 3, 0.0, seed=19)
        rec = load_volume(tmp_path / "vol_000.h5")
        bare = VolumeRecord(kspace=rec.kspace, id="vol_bare")
        save_volume(tmp_path / "vol_bare.h5", bare)
        pool = build_slice_pool(tmp_path, ["vol_bare"], sens_acs=12)
        ssq = (pool.sens[0].abs() ** 2).sum(dim=0)
        on = ssq > 0.5
        assert torch.allclose(ssq[on], torch.ones_like(ssq[on]), atol=1e-5)

    def test_subset(self, tmp_path):
        simulate_phantom_dataset(tmp_path, 1, 4, 16, 16, 2, 0.0, seed=23)
        pool = build_slice_pool(tmp_path, ["vol_000"])
        sub = pool.subset([1, 3])
        assert sub.num_slices == 2
        assert torch.equal(sub.kspace[0], pool.kspace[1])
        assert sub.slice_indices == [1, 3]
