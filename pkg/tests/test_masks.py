import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comri import (
    ContractError,
    InvalidConfigError,
    InvalidInputError,
    apply_mask,
    effective_acceleration,
    epoch_split_seed,
    load_mask,
    make_1d_random_mask,
    make_2d_random_mask,
    save_mask,
    split_mask,
)


class TestMake1d:
    def test_budget_and_acs(self):
        m = make_1d_random_mask(256, 256, 3, 24, seed=0)
        cols = m.pattern[0]
        assert cols.sum() == 85  # round(256/3)
        assert m.num_sampled() == 85 * 256
        rows, acs_cols = m.acs_region()
        assert m.pattern[rows, acs_cols].all()
        assert acs_cols.stop - acs_cols.start == 24

    def test_columns_are_constant(self):
        m = make_1d_random_mask(64, 48, 2.5, 8, seed=3)
        assert (m.pattern == m.pattern[0]).all()

    def test_r_of_one_rejected(self):
        with pytest.raises(InvalidConfigError):
            make_1d_random_mask(64, 64, 1, 8, seed=0)

    def test_infeasible_budget_rejected(self):
        # round(64/3) = 21 < 24 ACS columns
        with pytest.raises(InvalidConfigError):
            make_1d_random_mask(64, 64, 3, 24, seed=0)

    def test_deterministic(self):
        a = make_1d_random_mask(128, 128, 4, 16, seed=42)
        b = make_1d_random_mask(128, 128, 4, 16, seed=42)
        assert np.array_equal(a.pattern, b.pattern)
        c = make_1d_random_mask(128, 128, 4, 16, seed=43)
        assert not np.array_equal(a.pattern, c.pattern)


class TestMake2d:
    @pytest.mark.parametrize("R,expected", [(4, 16384), (8, 8192)])
    def test_budget(self, R, expected):
        m = make_2d_random_mask(256, 256, R, 24, seed=1)
        assert m.num_sampled() == expected
        rows, cols = m.acs_region()
        block = m.pattern[rows, cols]
        assert block.shape == (24, 24) and block.all()

    def test_sampled_fraction_exact(self):
        m = make_2d_random_mask(256, 256, 4, 24, seed=1)
        frac = m.num_sampled() / (256 * 256)
        assert abs(frac - 0.25) <= 1 / (256 * 256)

    def test_infeasible_budget_rejected(self):
        with pytest.raises(InvalidConfigError):
            make_2d_random_mask(16, 16, 8, 12, seed=0)  # 32 < 144

    def test_deterministic(self):
        a = make_2d_random_mask(64, 64, 4, 8, seed=9)
        b = make_2d_random_mask(64, 64, 4, 8, seed=9)
        assert np.array_equal(a.pattern, b.pattern)


@settings(max_examples=25, deadline=None)
@given(
    W=st.integers(32, 192),
    R=st.floats(1.5, 6.0),
    acs=st.integers(2, 12),
    seed=st.integers(0, 2**31),
)
def test_1d_budget_law_property(W, R, acs, seed):
    budget = int(round(W / R))
    if budget < acs:
        with pytest.raises(InvalidConfigError):
            make_1d_random_mask(32, W, R, acs, seed)
        return
    m = make_1d_random_mask(32, W, R, acs, seed)
    assert m.pattern[0].sum() == budget
    rows, cols = m.acs_region()
    assert m.pattern[rows, cols].all()


class TestSplitMask:
    def _omega(self):
        return make_1d_random_mask(256, 256, 3, 24, seed=0)

    def test_line_counts(self):
        split = split_mask(self._omega(), keep_ratio=0.7, seed=1)
        # 24 ACS + round(0.7 * 61) = 67 sampled columns per branch
        assert split.omega1.pattern[0].sum() == 67
        assert split.omega2.pattern[0].sum() == 67

    def test_subset_law_bit_exact(self):
        omega = self._omega()
        split = split_mask(omega, keep_ratio=0.6, seed=5)
        for branch in (split.omega1, split.omega2):
            assert np.array_equal(branch.pattern * omega.pattern, branch.pattern)

    def test_acs_preserved(self):
        omega = self._omega()
        split = split_mask(omega, keep_ratio=0.5, seed=2)
        rows, cols = omega.acs_region()
        both = split.omega1.pattern & split.omega2.pattern
        assert np.array_equal(both[rows, cols], omega.pattern[rows, cols])

    def test_branches_distinct(self):
        for seed in range(5):
            split = split_mask(self._omega(), keep_ratio=0.7, seed=seed)
            assert not np.array_equal(split.omega1.pattern, split.omega2.pattern)

    def test_full_keep_without_distinctness(self):
        omega = self._omega()
        split = split_mask(
            omega, keep_ratio=1.0, seed=0, resample_until_distinct=False
        )
        assert np.array_equal(split.omega1.pattern, omega.pattern)
        assert np.array_equal(split.omega2.pattern, omega.pattern)

    def test_full_keep_with_distinctness_rejected(self):
        with pytest.raises(InvalidConfigError):
            split_mask(self._omega(), keep_ratio=1.0, seed=0)

    def test_keep_ratio_validated(self):
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(InvalidConfigError):
                split_mask(self._omega(), keep_ratio=bad, seed=0)

    def test_2d_split_point_granular(self):
        omega = make_2d_random_mask(64, 64, 4, 8, seed=7)
        split = split_mask(omega, keep_ratio=0.7, seed=3)
        non_acs = omega.num_sampled() - 64
        expected = 64 + int(round(0.7 * non_acs))
        assert split.omega1.num_sampled() == expected
        assert np.array_equal(
            split.omega1.pattern * omega.pattern, split.omega1.pattern
        )

    def test_deterministic(self):
        a = split_mask(self._omega(), keep_ratio=0.7, seed=11)
        b = split_mask(self._omega(), keep_ratio=0.7, seed=11)
        assert np.array_equal(a.omega1.pattern, b.omega1.pattern)
        assert np.array_equal(a.omega2.pattern, b.omega2.pattern)


class TestApplyMask:
    def test_identity_and_zero(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((4, 16, 16)) + 1j * rng.standard_normal((4, 16, 16))
        full = make_2d_random_mask(16, 16, 1.0001, 4, seed=0)  # ~full
        m = make_2d_random_mask(16, 16, 2, 4, seed=0)
        out = apply_mask(y, m)
        assert np.all(out[:, m.pattern == 0] == 0)
        assert np.array_equal(out[:, m.pattern == 1], y[:, m.pattern == 1])
        assert full.num_sampled() == 256  # round(256/1.0001) == 256

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal((2, 32, 32)) + 1j * rng.standard_normal((2, 32, 32))
        m = make_1d_random_mask(32, 32, 2, 8, seed=1)
        once = apply_mask(y, m)
        assert np.array_equal(apply_mask(once, m), once)

    def test_shape_mismatch_rejected(self):
        m = make_1d_random_mask(32, 32, 2, 8, seed=1)
        with pytest.raises(ContractError):
            apply_mask(np.zeros((2, 16, 16), dtype=complex), m)


class TestEffectiveAcceleration:
    def test_values(self):
        m4 = make_2d_random_mask(256, 256, 4, 24, seed=0)
        assert effective_acceleration(m4) == 4.0
        m = make_1d_random_mask(8, 8, 2, 2, seed=0)
        checker = m.pattern.copy()
        checker[:] = np.indices((8, 8)).sum(axis=0) % 2
        from dataclasses import replace

        assert effective_acceleration(replace(m, pattern=checker)) == 2.0
        full = replace(m, pattern=np.ones((8, 8), dtype=np.uint8))
        assert effective_acceleration(full) == 1.0

    def test_empty_rejected(self):
        from dataclasses import replace

        m = make_1d_random_mask(8, 8, 2, 2, seed=0)
        with pytest.raises(InvalidInputError):
            effective_acceleration(replace(m, pattern=np.zeros((8, 8), np.uint8)))


def test_epoch_split_seed_deterministic_and_distinct():
    assert epoch_split_seed(1, 2, 3) == epoch_split_seed(1, 2, 3)
    seeds = {epoch_split_seed(0, e, i) for e in range(10) for i in range(10)}
    assert len(seeds) == 100


def test_mask_hdf5_roundtrip(tmp_path):
    m = make_2d_random_mask(64, 48, 4, 12, seed=5)
    path = tmp_path / "mask.h5"
    save_mask(path, m)
    loaded = load_mask(path)
    assert np.array_equal(loaded.pattern, m.pattern)
    assert loaded.kind == m.kind
    assert loaded.acs == m.acs
    assert loaded.seed == m.seed
