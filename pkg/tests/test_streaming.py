import dataclasses

import numpy as np
import pytest

from ttcompress import (
    CompressionConfig,
    ConfigError,
    DenseTensor,
    MergeError,
    SnapshotBatch,
    StructureError,
    combine_stats,
    compose_tolerances,
    compress_segment,
    compress_tensor,
    load_segment,
    merge_concat,
    merge_stack,
    merge_tree,
    nrmse,
    nrmse_to_relfrob,
    plan_tau_schedule,
    reconstruct_region,
    reconstruct_segment,
    rel_frob,
    save_segment,
    segment_entry,
    stats_of,
    synth_particles,
)
from ttcompress.streaming import DataStats


def batch_from_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    pos = arr[0, :, :3].copy() if arr.shape[2] >= 3 else None
    return SnapshotBatch(
        data=DenseTensor.from_numpy(arr), positions_first=pos, timestep_size=1.0
    )


def relfrob_config(tol, **kwargs):
    kwargs.setdefault("reorder", "none")
    return CompressionConfig(
        tolerance=tol, tolerance_kind="relfrob", **kwargs
    )


def split_time(arr, n_seg, cfg, **kwargs):
    step = arr.shape[0] // n_seg
    return [
        compress_segment(
            batch_from_array(arr[i * step : (i + 1) * step]),
            cfg,
            first_step=i * step,
            **kwargs,
        )
        for i in range(n_seg)
    ]


class TestToleranceConversion:
    def test_direct_evaluation(self):
        stats = stats_of(np.array([1.0, -1.0]))
        # range 2, norm sqrt(2), n 2 -> factor 2
        assert nrmse_to_relfrob(0.01, stats) == pytest.approx(0.02)

    def test_constant_data_sentinel(self):
        stats = stats_of(np.full(10, 3.0))
        assert nrmse_to_relfrob(0.1, stats) is None

    def test_zero_data_sentinel(self):
        stats = stats_of(np.zeros(10))
        assert nrmse_to_relfrob(0.1, stats) is None

    def test_compressing_with_derived_tolerance_meets_target(self):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((8, 16, 3))
        for target in (0.2, 0.05):
            cfg = CompressionConfig(
                tolerance=target, tolerance_kind="nrmse", reorder="none"
            )
            seg = compress_segment(batch_from_array(arr), cfg)
            measured = nrmse(
                DenseTensor.from_numpy(arr), reconstruct_segment(seg)
            )
            assert measured <= target


class TestCompressSegment:
    def test_constant_batch_rank_one(self):
        arr = np.full((32, 1024, 3), 7.5)
        seg = compress_segment(
            batch_from_array(arr),
            CompressionConfig(tolerance=0.1, tolerance_kind="nrmse", reorder="none"),
        )
        assert set(seg.tt.ranks) == {1}
        assert seg.compression_ratio > 1e3
        assert np.allclose(reconstruct_segment(seg).to_numpy(), 7.5)

    def test_noise_ratio_below_five(self):
        batch = synth_particles(512, 32, "noise", seed=1)
        seg = compress_segment(
            batch, CompressionConfig(tolerance=1e-3, tolerance_kind="nrmse")
        )
        assert seg.compression_ratio < 5

    def test_tensorized_beats_flat_on_settle(self):
        batch = synth_particles(1024, 32, "settle", seed=2)
        cfg = CompressionConfig(tolerance=0.1, tolerance_kind="nrmse")
        tens = compress_segment(batch, cfg)
        flat = compress_segment(
            batch, dataclasses.replace(cfg, tensorize=False)
        )
        assert tens.compression_ratio > flat.compression_ratio

    def test_error_guarantee_on_unpadded_region(self):
        rng = np.random.default_rng(3)
        arr = rng.uniform(size=(6, 13, 3))  # both axes need padding
        for tol in (1e-1, 1e-3):
            cfg = relfrob_config(tol)
            seg = compress_segment(batch_from_array(arr), cfg)
            err = rel_frob(
                DenseTensor.from_numpy(arr), reconstruct_segment(seg)
            )
            assert err <= tol

    def test_reorder_roundtrip(self):
        batch = synth_particles(50, 8, "ballistic", seed=4)
        cfg = CompressionConfig(tolerance=0.0, tolerance_kind="relfrob")
        seg = compress_segment(batch, cfg)
        assert seg.permutations is not None
        recon = reconstruct_segment(seg).to_numpy()
        assert np.allclose(
            recon, batch.data.to_numpy(), atol=1e-11 * seg.stats.frobenius_norm
        )

    def test_per_timestep_reorder_roundtrip(self):
        batch = synth_particles(24, 6, "ballistic", seed=5)
        cfg = CompressionConfig(
            tolerance=0.0, tolerance_kind="relfrob", reorder="timestep"
        )
        seg = compress_segment(batch, cfg)
        assert seg.permutations.shape == (6, 24)
        recon = reconstruct_segment(seg).to_numpy()
        assert np.allclose(
            recon, batch.data.to_numpy(), atol=1e-11 * seg.stats.frobenius_norm
        )

    def test_reorder_requires_positions(self):
        arr = np.zeros((4, 4, 2))
        arr[0, 0, 0] = 1.0
        with pytest.raises(ConfigError):
            compress_segment(
                SnapshotBatch(
                    data=DenseTensor.from_numpy(arr),
                    positions_first=None,
                    timestep_size=1.0,
                ),
                CompressionConfig(tolerance=0.1),
            )

    def test_padding_disabled_plan_error(self):
        from ttcompress import PlanError

        rng = np.random.default_rng(6)
        arr = rng.uniform(size=(4, 13, 3))
        with pytest.raises(PlanError):
            compress_segment(
                batch_from_array(arr),
                relfrob_config(0.1, allow_padding=False),
            )


class TestMergeStack:
    def test_duplicate_data_collapses(self):
        rng = np.random.default_rng(7)
        block = rng.uniform(size=(8, 16, 3))
        arr = np.concatenate([block, block], axis=0)
        cfg = relfrob_config(1e-8)
        parts = split_time(arr, 2, cfg)
        merged = merge_stack(parts, 1e-10)
        single = parts[0]
        d = single.tt.ndim
        assert merged.tt.ranks[1:d] == single.tt.ranks[1:d]

    def test_tolerance_composition(self):
        assert compose_tolerances(1e-2, [1e-2]) == pytest.approx(0.0201)

    def test_stacking_error_only_from_rounding(self):
        rng = np.random.default_rng(8)
        arr = rng.uniform(size=(8, 8, 2))
        cfg = relfrob_config(1e-2)
        parts = split_time(arr, 2, cfg)
        tau_round = 1e-3
        merged = merge_stack(parts, tau_round)
        stacked_parts = np.concatenate(
            [reconstruct_segment(p).to_numpy() for p in parts], axis=0
        )
        err = rel_frob(
            DenseTensor.from_numpy(stacked_parts),
            reconstruct_segment(merged),
        )
        assert err <= tau_round

    def test_budget_property(self):
        rng = np.random.default_rng(9)
        arr = rng.uniform(size=(8, 8, 8))
        for n_seg in (2, 4, 8):
            for tau in (1e-2, 1e-4):
                for tau_round in (1e-2, 1e-4):
                    cfg = relfrob_config(tau)
                    parts = split_time(arr, n_seg, cfg)
                    merged = merge_stack(parts, tau_round)
                    err = rel_frob(
                        DenseTensor.from_numpy(arr),
                        reconstruct_segment(merged),
                    )
                    assert err <= tau + tau_round + tau * tau_round
                    assert merged.tolerance_spent == pytest.approx(
                        compose_tolerances(tau, [tau_round])
                    )

    def test_stats_union_exact(self):
        rng = np.random.default_rng(10)
        arr = rng.standard_normal((8, 6, 3))
        parts = split_time(arr, 2, relfrob_config(0.1))
        merged = merge_stack(parts, 0.0)
        direct = stats_of(arr)
        assert merged.stats.x_min == direct.x_min
        assert merged.stats.x_max == direct.x_max
        assert merged.stats.entry_count == direct.entry_count
        assert merged.stats.frobenius_norm == pytest.approx(
            direct.frobenius_norm, rel=1e-12
        )

    def test_non_contiguous_rejected(self):
        rng = np.random.default_rng(11)
        arr = rng.uniform(size=(8, 4, 3))
        parts = split_time(arr, 2, relfrob_config(0.1))
        with pytest.raises(MergeError):
            merge_stack([parts[1], parts[0]], 0.0)

    def test_mismatched_permutations_rejected(self):
        batch_a = synth_particles(16, 8, "ballistic", seed=12)
        batch_b = synth_particles(16, 8, "ballistic", seed=13)
        cfg = CompressionConfig(tolerance=0.1, tolerance_kind="nrmse")
        a = compress_segment(batch_a, cfg, first_step=0)
        b = compress_segment(batch_b, cfg, first_step=8)
        if np.array_equal(a.permutations, b.permutations):
            pytest.skip("random clouds coincidentally share an ordering")
        with pytest.raises(StructureError):
            merge_stack([a, b], 0.0)

    def test_ragged_tail_merge(self):
        rng = np.random.default_rng(14)
        arr = rng.uniform(size=(12, 8, 3))
        cfg = relfrob_config(1e-6)
        first = compress_segment(
            batch_from_array(arr[:8]), cfg, first_step=0, pad_time_to=8
        )
        tail = compress_segment(
            batch_from_array(arr[8:]), cfg, first_step=8, pad_time_to=8
        )
        merged = merge_stack([first, tail], 1e-8)
        assert merged.total_steps == 12
        recon = reconstruct_segment(merged)
        assert recon.dims == (12, 8, 3)
        assert rel_frob(DenseTensor.from_numpy(arr), recon) <= 2e-6


class TestMergeConcat:
    def test_split_tensor_roundtrip(self):
        rng = np.random.default_rng(15)
        arr = rng.uniform(size=(8, 3, 2))
        tau, tau_round = 1e-2, 1e-3
        cfg = relfrob_config(tau, tensorize=False)
        parts = split_time(arr, 2, cfg)
        merged = merge_concat(parts, 1, tau_round)
        err = rel_frob(
            DenseTensor.from_numpy(arr), reconstruct_segment(merged)
        )
        assert err <= compose_tolerances(tau, [tau_round])

    def test_exact_with_zero_rounding(self):
        rng = np.random.default_rng(16)
        arr = rng.uniform(size=(8, 4, 2))
        parts = split_time(arr, 2, relfrob_config(0.0, tensorize=False))
        merged = merge_concat(parts, 1, 0.0)
        for k in range(1, 3):
            assert merged.tt.ranks[k] == sum(p.tt.ranks[k] for p in parts)
        assert np.allclose(
            reconstruct_segment(merged).to_numpy(), arr, atol=1e-12
        )

    def test_budget_across_split_counts(self):
        rng = np.random.default_rng(17)
        arr = rng.uniform(size=(8, 8, 8))
        for n_seg in (2, 4, 8):
            for tau in (1e-2, 1e-4):
                for tau_round in (1e-2, 1e-4):
                    parts = split_time(
                        arr, n_seg, relfrob_config(tau, tensorize=False)
                    )
                    merged = merge_concat(parts, 1, tau_round)
                    err = rel_frob(
                        DenseTensor.from_numpy(arr),
                        reconstruct_segment(merged),
                    )
                    assert err <= tau + tau_round + tau * tau_round

    def test_tensorized_axis_rejected(self):
        rng = np.random.default_rng(18)
        arr = rng.uniform(size=(8, 4, 3))
        parts = split_time(arr, 2, relfrob_config(0.1))  # tensorized
        with pytest.raises(MergeError):
            merge_concat(parts, 1, 0.0)


class TestMergeTree:
    def test_level_counts(self):
        rng = np.random.default_rng(19)
        arr = rng.uniform(size=(32, 4, 3))
        parts = split_time(arr, 32, relfrob_config(1e-3))
        levels = merge_tree(parts, 2, [1e-4] * 5)
        assert [len(lv) for lv in levels] == [32, 16, 8, 4, 2, 1]

    def test_single_segment_identity(self):
        rng = np.random.default_rng(20)
        arr = rng.uniform(size=(4, 4, 3))
        seg = compress_segment(batch_from_array(arr), relfrob_config(1e-3))
        levels = merge_tree([seg], 2, [])
        assert levels == [[seg]]

    def test_final_error_within_budget(self):
        rng = np.random.default_rng(21)
        arr = rng.uniform(size=(8, 4, 3))
        tau = 1e-2
        parts = split_time(arr, 4, relfrob_config(tau))
        schedule = plan_tau_schedule(3 * tau, tau, 2)
        levels = merge_tree(parts, 2, schedule, budget=3 * tau)
        final = levels[-1][0]
        err = rel_frob(
            DenseTensor.from_numpy(arr), reconstruct_segment(final)
        )
        assert err <= 3 * tau
        assert final.tolerance_spent <= 3 * tau * (1 + 1e-12)

    def test_budget_exhaustion_fails_before_work(self):
        rng = np.random.default_rng(22)
        arr = rng.uniform(size=(8, 4, 3))
        parts = split_time(arr, 4, relfrob_config(1e-2))
        with pytest.raises(ConfigError):
            merge_tree(parts, 2, [1e-1, 1e-1], budget=5e-2)

    def test_schedule_too_short(self):
        rng = np.random.default_rng(23)
        arr = rng.uniform(size=(8, 4, 3))
        parts = split_time(arr, 4, relfrob_config(1e-2))
        with pytest.raises(ConfigError):
            merge_tree(parts, 2, [1e-3])


class TestScheduling:
    def test_equal_factor_schedule(self):
        total, per_seg = 0.1, 0.05
        taus = plan_tau_schedule(total, per_seg, 3)
        assert len(taus) == 3
        assert compose_tolerances(per_seg, taus) == pytest.approx(total, rel=1e-12)

    def test_over_budget_rejected(self):
        with pytest.raises(ConfigError):
            plan_tau_schedule(0.01, 0.02, 2)


class TestElementAccess:
    def test_segment_entry_matches_dense(self):
        batch = synth_particles(20, 8, "ballistic", seed=24)
        cfg = CompressionConfig(tolerance=0.0, tolerance_kind="relfrob")
        seg = compress_segment(batch, cfg, first_step=100)
        dense = reconstruct_segment(seg).to_numpy()
        rng = np.random.default_rng(25)
        for _ in range(30):
            t = int(rng.integers(0, 8))
            p = int(rng.integers(1, 21))
            c = int(rng.integers(1, 4))
            assert segment_entry(seg, 100 + t, (p, c)) == pytest.approx(
                dense[t, p - 1, c - 1], rel=1e-10, abs=1e-12
            )

    def test_region_without_materialization(self, monkeypatch):
        batch = synth_particles(16, 8, "ballistic", seed=26)
        cfg = CompressionConfig(tolerance=0.0, tolerance_kind="relfrob")
        seg = compress_segment(batch, cfg)
        dense = reconstruct_segment(seg).to_numpy()
        # a cap too small for the full tensor still allows region queries
        monkeypatch.setenv("QTT_MEMORY_CAP_ENTRIES", "10")
        region = reconstruct_region(seg, [(1, 8), (3, 3), (1, 3)])
        assert region.dims == (8, 1, 3)
        assert np.allclose(
            region.to_numpy()[:, 0, :], dense[:, 2, :], atol=1e-10
        )

    def test_region_on_merged_segment(self):
        rng = np.random.default_rng(27)
        arr = rng.uniform(size=(8, 4, 3))
        parts = split_time(arr, 2, relfrob_config(0.0))
        merged = merge_stack(parts, 0.0)
        region = reconstruct_region(merged, [(3, 6), (1, 4), (2, 2)])
        assert np.allclose(
            region.to_numpy()[:, :, 0], arr[2:6, :, 1], atol=1e-10
        )


class TestStoreRoundtrip:
    def test_save_load_identity(self, tmp_path):
        batch = synth_particles(12, 8, "settle", seed=28)
        cfg = CompressionConfig(tolerance=0.05, tolerance_kind="nrmse")
        seg = compress_segment(batch, cfg, first_step=16)
        path = save_segment(tmp_path, seg, cfg.config_hash())
        assert path.endswith("seg_16_23.ttc")
        loaded = load_segment(path)
        assert loaded.time_range == seg.time_range
        assert loaded.plan == seg.plan
        assert loaded.stack_dims == seg.stack_dims
        assert loaded.part_time_extents == seg.part_time_extents
        assert loaded.tolerance_spent == seg.tolerance_spent
        assert np.array_equal(loaded.permutations, seg.permutations)
        assert loaded.stats == seg.stats
        for a, b in zip(loaded.tt.cores, seg.tt.cores):
            assert np.array_equal(a, b)

    def test_byte_identical_recompression(self, tmp_path):
        batch = synth_particles(16, 8, "settle", seed=29)
        cfg = CompressionConfig(tolerance=0.1, tolerance_kind="nrmse")
        a = compress_segment(batch, cfg)
        b = compress_segment(batch, cfg)
        pa = save_segment(tmp_path / "a", a, cfg.config_hash())
        pb = save_segment(tmp_path / "b", b, cfg.config_hash())
        with open(pa, "rb") as fa, open(pb, "rb") as fb:
            assert fa.read() == fb.read()


class TestGenericTensor:
    def test_compress_tensor_roundtrip(self):
        rng = np.random.default_rng(30)
        data = DenseTensor.from_numpy(rng.uniform(size=(16, 16)))
        seg = compress_tensor(data, relfrob_config(1e-6), level=4)
        assert rel_frob(data, reconstruct_segment(seg)) <= 1e-6

    def test_combine_stats_direct(self):
        a = DataStats(x_min=-1.0, x_max=2.0, frobenius_norm=3.0, entry_count=10)
        b = DataStats(x_min=0.0, x_max=5.0, frobenius_norm=4.0, entry_count=6)
        c = combine_stats([a, b])
        assert c == DataStats(
            x_min=-1.0, x_max=5.0, frobenius_norm=5.0, entry_count=16
        )
