"""Segment-wise streaming compression.

Incoming snapshot batches are compressed independently (reorder particles,
pad, tensorize, TT-SVD), then merged under an explicit error budget:
if every part meets relative tolerance ``t`` and the merge is rounded at
``t_r``, the combination meets ``t + t_r + t * t_r``.  Stacking along a
new trailing dimension preserves tensorized time hierarchies; plain
concatenation serves untensorized streaming axes.
"""

import base64
import dataclasses
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dense import DenseTensor
from .errors import (
    ConfigError,
    IndexRangeError,
    MergeError,
    PlanError,
    StructureError,
)
from .metrics import MetricsReport, nrmse as nrmse_metric, rel_frob
from .morton import DEFAULT_BITS, fit_domain, morton_sort
from .synthdata import SnapshotBatch
from .tensorize import (
    AxisPad,
    TensorizePlan,
    apply_plan,
    factor_dims,
    invert_plan,
    next_factorable,
)
from .tt import (
    TTTensor,
    constant_tt,
    tt_concat_existing,
    tt_full,
    tt_get,
    tt_round,
    tt_stack_new,
    tt_svd,
)

TOLERANCE_KINDS = ("nrmse", "relfrob")
REORDER_POLICIES = ("none", "segment", "timestep")
SEGMENT_FILE_RE = re.compile(r"^seg_(\d+)_(\d+)\.ttc$")


@dataclass(frozen=True)
class DataStats:
    """Extrema, Frobenius norm and entry count of (unpadded) data."""

    x_min: float
    x_max: float
    frobenius_norm: float
    entry_count: int


def stats_of(arr) -> DataStats:
    arr = np.asarray(arr, dtype=np.float64)
    return DataStats(
        x_min=float(arr.min()),
        x_max=float(arr.max()),
        frobenius_norm=float(np.linalg.norm(arr.reshape(-1))),
        entry_count=int(arr.size),
    )


def combine_stats(items) -> DataStats:
    items = list(items)
    if not items:
        raise ConfigError("cannot combine an empty list of stats")
    return DataStats(
        x_min=min(s.x_min for s in items),
        x_max=max(s.x_max for s in items),
        frobenius_norm=float(
            math.sqrt(sum(s.frobenius_norm**2 for s in items))
        ),
        entry_count=sum(s.entry_count for s in items),
    )


def nrmse_to_relfrob(tau_nrmse: float, stats: DataStats):
    """Relative-Frobenius tolerance equivalent to a normalized-RMSE target.

    ``(x_max - x_min) * sqrt(n) / ||X||_F * tau``.  Returns ``None`` for
    constant or all-zero data: no truncation tolerance applies, the caller
    should store the (rank-1) tensor exactly.
    """
    if tau_nrmse <= 0:
        raise ConfigError(f"nRMSE target must be > 0, got {tau_nrmse}")
    if stats.x_max == stats.x_min or stats.frobenius_norm == 0.0:
        return None
    return (
        (stats.x_max - stats.x_min)
        * math.sqrt(stats.entry_count)
        / stats.frobenius_norm
        * tau_nrmse
    )


@dataclass(frozen=True)
class CompressionConfig:
    """Everything the segment pipeline needs to know.

    ``tolerance == 0`` with kind ``relfrob`` selects lossless mode (keep
    every numerically nonzero singular value).  ``reorder`` picks the
    Morton policy: one permutation per segment (default), one per timestep
    (requires 3-component position-like data), or none.
    """

    tolerance: float = 0.1
    tolerance_kind: str = "nrmse"
    segment_length: int = 32
    merge_arity: int = 2
    tensorize: bool = True
    max_factor: int = 5
    time_level: Optional[int] = None
    particle_level: Optional[int] = None
    reorder: str = "segment"
    morton_bits: Optional[int] = None
    allow_padding: bool = True

    def __post_init__(self):
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.tolerance_kind not in TOLERANCE_KINDS:
            raise ConfigError(
                f"tolerance kind must be one of {TOLERANCE_KINDS}, "
                f"got {self.tolerance_kind!r}"
            )
        if self.tolerance == 0 and self.tolerance_kind == "nrmse":
            raise ConfigError("an nRMSE target must be > 0")
        if self.segment_length < 1:
            raise ConfigError("segment length must be >= 1")
        if self.merge_arity < 2:
            raise ConfigError("merge arity must be >= 2")
        if self.max_factor < 2:
            raise ConfigError("factor cap must be >= 2")
        if self.reorder not in REORDER_POLICIES:
            raise ConfigError(
                f"reorder policy must be one of {REORDER_POLICIES}, "
                f"got {self.reorder!r}"
            )
        if self.morton_bits is not None and not 1 <= self.morton_bits <= 21:
            raise ConfigError("morton bits must be in 1..21")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class CompressedSegment:
    """A compressed piece of a run plus everything needed to undo it.

    ``time_range`` holds inclusive global step indices.  A merged segment
    carries extra trailing stack dimensions on its train; each stacked
    leaf covers ``part_time_extents[j]`` real timesteps (padding copies
    excluded).  ``tolerance_spent`` is the cumulative relative-Frobenius
    budget consumed against this segment's own unpadded data.
    """

    tt: TTTensor
    plan: TensorizePlan
    reorder: str
    permutations: Optional[np.ndarray]
    time_range: tuple
    part_time_extents: tuple
    stack_dims: tuple
    stats: DataStats
    tolerance_spent: float

    def __post_init__(self):
        object.__setattr__(self, "time_range", tuple(self.time_range))
        object.__setattr__(
            self, "part_time_extents", tuple(self.part_time_extents)
        )
        object.__setattr__(self, "stack_dims", tuple(self.stack_dims))
        expected = self.plan.tensorized_dims() + self.stack_dims
        if self.tt.dims != expected:
            raise StructureError(
                f"train dims {self.tt.dims} do not match plan + stack dims "
                f"{expected}"
            )
        n_leaves = math.prod(self.stack_dims) if self.stack_dims else 1
        if len(self.part_time_extents) != n_leaves:
            raise StructureError(
                "per-leaf time extents do not match the stack shape"
            )
        first, last = self.time_range
        if sum(self.part_time_extents) != last - first + 1:
            raise StructureError("time range does not match leaf extents")
        if self.permutations is not None:
            perms = np.asarray(self.permutations)
            object.__setattr__(self, "permutations", perms)

    @property
    def total_steps(self) -> int:
        return self.time_range[1] - self.time_range[0] + 1

    @property
    def compression_ratio(self) -> float:
        """Unpadded original entries per stored core entry."""
        return self.stats.entry_count / self.tt.core_entry_count


def _morton_permutation(positions, bits: Optional[int]) -> np.ndarray:
    transform = fit_domain(positions)
    return morton_sort(transform.apply(positions), bits or DEFAULT_BITS)


def _plan_axis(extent, max_factor, level, allow_padding, axis):
    factors = factor_dims(extent, max_factor)
    pad = None
    if factors is None:
        if not allow_padding:
            raise PlanError(
                f"axis {axis} extent {extent} has a prime factor above "
                f"{max_factor} and padding is disabled"
            )
        padded = next_factorable(extent, max_factor)
        pad = AxisPad(axis=axis, original=extent, padded=padded)
        factors = factor_dims(padded, max_factor)
    if level is None:
        level = len(factors)
    return tuple(factors), int(level), pad


def build_batch_plan(
    dims, config: CompressionConfig, pad_time_to: Optional[int] = None
) -> TensorizePlan:
    """Tensorization plan for an (n_t, n_p, n_c) batch.

    Time and particle axes are factored into small primes (padding by
    replication when an extent will not factor); the component axis stays
    whole.  ``pad_time_to`` grows a short segment to a common length so
    segments of one run share a shape and can be merged.  With
    tensorization off the plan is a pass-through.
    """
    n_t, n_p, n_c = dims
    t_target = n_t
    if pad_time_to is not None:
        if pad_time_to < n_t:
            raise PlanError(
                f"cannot pad {n_t} timesteps down to {pad_time_to}"
            )
        if pad_time_to > n_t and not config.allow_padding:
            raise PlanError("time padding needed but padding is disabled")
        t_target = pad_time_to
    if not config.tensorize:
        pads = ()
        if t_target != n_t:
            pads = (AxisPad(axis=1, original=n_t, padded=t_target),)
        return TensorizePlan(
            original_dims=(n_t, n_p, n_c),
            axis_factors=((t_target,), (n_p,), (n_c,)),
            axis_levels=(1, 1, 1),
            interlace=None,
            pads=pads,
        )
    t_factors, t_level, t_pad = _plan_axis(
        t_target, config.max_factor, config.time_level, config.allow_padding, 1
    )
    if t_pad is None and t_target != n_t:
        t_pad = AxisPad(axis=1, original=n_t, padded=t_target)
    elif t_pad is not None:
        t_pad = AxisPad(axis=1, original=n_t, padded=t_pad.padded)
    p_factors, p_level, p_pad = _plan_axis(
        n_p, config.max_factor, config.particle_level, config.allow_padding, 2
    )
    pads = tuple(p for p in (t_pad, p_pad) if p is not None)
    return TensorizePlan(
        original_dims=(n_t, n_p, n_c),
        axis_factors=(t_factors, p_factors, (n_c,)),
        axis_levels=(t_level, p_level, 1),
        interlace=None,
        pads=pads,
    )


def _target_relfrob(config: CompressionConfig, stats: DataStats, reference):
    """Per-segment relative-Frobenius tolerance, or None for the exact path."""
    if stats.x_max == stats.x_min or stats.frobenius_norm == 0.0:
        return None
    if config.tolerance_kind == "relfrob":
        return config.tolerance
    return nrmse_to_relfrob(config.tolerance, reference or stats)


def compress_segment(
    batch: SnapshotBatch,
    config: CompressionConfig,
    first_step: int = 0,
    stats_reference: Optional[DataStats] = None,
    permutation_override: Optional[np.ndarray] = None,
    pad_time_to: Optional[int] = None,
) -> CompressedSegment:
    """Compress one snapshot batch.

    Pipeline: reorder particles by the Morton policy, pad and tensorize
    per the plan, then TT-SVD at the converted tolerance.  Statistics are
    recorded from the raw (pre-padding) data.  When padding grows the
    tensor the internal tolerance is tightened by the norm ratio so the
    guarantee still holds on the real data region.

    ``stats_reference`` feeds the nRMSE conversion with running global
    statistics when a multi-segment run targets one overall error;
    ``permutation_override`` pins one particle ordering across segments
    that will later be merged.
    """
    arr = np.array(batch.data.to_numpy())
    n_t, n_p, n_c = arr.shape
    stats = stats_of(arr)

    perms = None
    if permutation_override is not None:
        perms = np.asarray(permutation_override)
        if perms.shape != (n_p,):
            raise ConfigError(
                f"permutation override has shape {perms.shape}, "
                f"expected ({n_p},)"
            )
        arr = arr[:, perms, :]
    elif config.reorder == "segment":
        if batch.positions_first is None:
            raise ConfigError(
                "Morton reordering needs first-timestep positions; "
                "use reorder='none' for data without them"
            )
        perms = _morton_permutation(batch.positions_first, config.morton_bits)
        arr = arr[:, perms, :]
    elif config.reorder == "timestep":
        if n_c != 3:
            raise ConfigError(
                "per-timestep reordering uses the data itself as positions "
                "and needs exactly 3 components"
            )
        perms = np.empty((n_t, n_p), dtype=np.int64)
        for t in range(n_t):
            perms[t] = _morton_permutation(arr[t], config.morton_bits)
            arr[t] = arr[t][perms[t]]

    plan = build_batch_plan((n_t, n_p, n_c), config, pad_time_to=pad_time_to)
    tau_rel = _target_relfrob(config, stats, stats_reference)
    time_range = (first_step, first_step + n_t - 1)

    if tau_rel is None:
        # constant (or zero) data is exactly rank 1 after any reshaping
        tt = constant_tt(plan.tensorized_dims(), stats.x_min)
        return CompressedSegment(
            tt=tt,
            plan=plan,
            reorder="none" if perms is None else config.reorder,
            permutations=perms,
            time_range=time_range,
            part_time_extents=(n_t,),
            stack_dims=(),
            stats=stats,
            tolerance_spent=0.0,
        )

    tensorized = apply_plan(DenseTensor.from_numpy(arr), plan)
    padded_norm = float(np.linalg.norm(tensorized.values))
    tau_eff = tau_rel * stats.frobenius_norm / padded_norm
    tt = tt_svd(tensorized, tau_eff)
    return CompressedSegment(
        tt=tt,
        plan=plan,
        reorder="none" if perms is None else config.reorder,
        permutations=perms,
        time_range=time_range,
        part_time_extents=(n_t,),
        stack_dims=(),
        stats=stats,
        tolerance_spent=tau_rel,
    )


def compress_tensor(
    data: DenseTensor, config: CompressionConfig, level: Optional[int] = None
) -> CompressedSegment:
    """Compress a generic dense tensor (no particle semantics).

    Every axis is factored when tensorization is on; ``level`` overrides
    the per-axis split depth.  The first axis plays the role of time in
    the segment bookkeeping.
    """
    dims = data.dims
    stats = stats_of(data.values)
    if config.tensorize:
        per_axis = [
            _plan_axis(n, config.max_factor, level, config.allow_padding, ax + 1)
            for ax, n in enumerate(dims)
        ]
        plan = TensorizePlan(
            original_dims=dims,
            axis_factors=tuple(f for f, _, _ in per_axis),
            axis_levels=tuple(
                min(l, len(f)) for f, l, _ in per_axis
            ),
            interlace=None,
            pads=tuple(p for _, _, p in per_axis if p is not None),
        )
    else:
        plan = TensorizePlan(
            original_dims=dims,
            axis_factors=tuple((n,) for n in dims),
            axis_levels=tuple(1 for _ in dims),
            interlace=None,
            pads=(),
        )
    tau_rel = _target_relfrob(config, stats, None)
    if tau_rel is None:
        tt = constant_tt(plan.tensorized_dims(), stats.x_min)
        spent = 0.0
    else:
        tensorized = apply_plan(data, plan)
        padded_norm = float(np.linalg.norm(tensorized.values))
        tau_eff = tau_rel * stats.frobenius_norm / padded_norm
        tt = tt_svd(tensorized, tau_eff)
        spent = tau_rel
    return CompressedSegment(
        tt=tt,
        plan=plan,
        reorder="none",
        permutations=None,
        time_range=(0, dims[0] - 1),
        part_time_extents=(dims[0],),
        stack_dims=(),
        stats=stats,
        tolerance_spent=spent,
    )


def compose_tolerances(base: float, rounding_taus) -> float:
    """Cumulative relative tolerance after a chain of rounded merges."""
    total = float(base)
    for tau in rounding_taus:
        total = total + tau + total * tau
    return total


def plan_tau_schedule(
    total_budget: float, per_segment: float, n_levels: int
):
    """Equal per-level rounding tolerances exhausting the remaining budget.

    Solves ``(1 + per_segment) * (1 + x)^n == 1 + total_budget`` for x.
    """
    if per_segment > total_budget:
        raise ConfigError(
            f"per-segment tolerance {per_segment} exceeds the total budget "
            f"{total_budget}"
        )
    if n_levels == 0:
        return []
    factor = (1.0 + total_budget) / (1.0 + per_segment)
    x = factor ** (1.0 / n_levels) - 1.0
    return [max(x, 0.0)] * n_levels


def _same_permutations(a, b) -> bool:
    if a is None and b is None:
        return True
    if a is None or b is None:
        return False
    return np.array_equal(a, b)


def _normalize_time_axis(plan: TensorizePlan) -> TensorizePlan:
    """Treat the padded time extent as original (per-leaf crops take over
    once segments are merged)."""
    padded = plan.padded_dims()
    return TensorizePlan(
        original_dims=(padded[0],) + plan.original_dims[1:],
        axis_factors=plan.axis_factors,
        axis_levels=plan.axis_levels,
        interlace=plan.interlace,
        pads=tuple(p for p in plan.pads if p.axis != 1),
    )


def _check_stack_compatible(parts) -> None:
    base = parts[0]
    for p in parts[1:]:
        if p.tt.dims != base.tt.dims:
            raise MergeError(
                f"train dims differ: {p.tt.dims} != {base.tt.dims}"
            )
        if p.stack_dims != base.stack_dims:
            raise MergeError("parts carry different stack histories")
        if p.reorder != base.reorder:
            raise MergeError("parts used different reorder policies")
        if _normalize_time_axis(p.plan) != _normalize_time_axis(base.plan):
            raise MergeError("parts were tensorized under different plans")
        if not _same_permutations(p.permutations, base.permutations):
            raise StructureError(
                "parts use different particle permutations; reuse one "
                "ordering per merged group"
            )
    for prev, nxt in zip(parts, parts[1:]):
        if prev.time_range[1] + 1 != nxt.time_range[0]:
            raise MergeError(
                f"time ranges are not contiguous: {prev.time_range} then "
                f"{nxt.time_range}"
            )


def merge_stack(parts, tau_round: float) -> CompressedSegment:
    """Merge segments by stacking along a new trailing dimension.

    The stacked train is exact; rounding at ``tau_round`` (skipped when 0)
    then shrinks the inflated ranks.  The budget update is
    ``t + tau_round + t * tau_round`` with ``t`` the worst part tolerance.
    """
    parts = list(parts)
    if not parts:
        raise MergeError("nothing to merge")
    if tau_round < 0:
        raise ConfigError(f"rounding tolerance must be >= 0, got {tau_round}")
    if len(parts) == 1:
        return parts[0]
    _check_stack_compatible(parts)
    stacked = tt_stack_new([p.tt for p in parts])
    merged = tt_round(stacked, tau_round) if tau_round > 0 else stacked
    spent = compose_tolerances(
        max(p.tolerance_spent for p in parts), [tau_round]
    )
    extents = ()
    for p in parts:
        extents += p.part_time_extents
    return CompressedSegment(
        tt=merged,
        plan=_normalize_time_axis(parts[0].plan),
        reorder=parts[0].reorder,
        permutations=parts[0].permutations,
        time_range=(parts[0].time_range[0], parts[-1].time_range[1]),
        part_time_extents=extents,
        stack_dims=parts[0].stack_dims + (len(parts),),
        stats=combine_stats([p.stats for p in parts]),
        tolerance_spent=spent,
    )


def _concat_axis_position(plan: TensorizePlan, axis: int) -> int:
    """1-based train dimension holding a given unsplit original axis."""
    if plan.interlace is not None:
        raise MergeError("cannot concatenate interlaced plans")
    split = plan.axis_split_dims(axis)
    if len(split) != 1 or split[0] != plan.original_dims[axis - 1]:
        raise MergeError(
            f"axis {axis} is tensorized; stack along a new dimension instead"
        )
    pos = 0
    for ax in range(1, axis):
        pos += len(plan.axis_split_dims(ax))
    return pos + 1


def merge_concat(parts, dim: int, tau_round: float) -> CompressedSegment:
    """Merge segments along an existing (untensorized) dimension.

    Cores are combined with zero padding so reconstruction equals the
    dense concatenation exactly, then rounded at ``tau_round`` (skipped
    when 0).  Budget update as in :func:`merge_stack`.
    """
    parts = list(parts)
    if not parts:
        raise MergeError("nothing to merge")
    if tau_round < 0:
        raise ConfigError(f"rounding tolerance must be >= 0, got {tau_round}")
    if len(parts) == 1:
        return parts[0]
    base = parts[0]
    n_axes = len(base.plan.original_dims)
    if not 1 <= dim <= n_axes:
        raise IndexRangeError(f"axis {dim} out of range 1..{n_axes}")
    for p in parts:
        if p.stack_dims != ():
            raise MergeError(
                "parts already stacked along a new dimension cannot be "
                "concatenated"
            )
        for ax in range(1, n_axes + 1):
            if ax == dim:
                continue
            if p.plan.axis_split_dims(ax) != base.plan.axis_split_dims(ax):
                raise MergeError(f"parts differ on axis {ax}")
            if p.plan.original_dims[ax - 1] != base.plan.original_dims[ax - 1]:
                raise MergeError(f"parts differ on axis {ax}")
        if p.plan.pads != base.plan.pads:
            raise MergeError("parts carry different padding records")
        if any(pad.axis == dim for pad in p.plan.pads):
            raise MergeError(f"axis {dim} is padded; cannot concatenate")
        if p.reorder != base.reorder:
            raise MergeError("parts used different reorder policies")
        if not _same_permutations(p.permutations, base.permutations):
            raise StructureError(
                "parts use different particle permutations; reuse one "
                "ordering per merged group"
            )
    pos = _concat_axis_position(base.plan, dim)
    for p in parts[1:]:
        if _concat_axis_position(p.plan, dim) != pos:
            raise MergeError("concat axis sits at different train positions")
    if dim == 1:
        for prev, nxt in zip(parts, parts[1:]):
            if prev.time_range[1] + 1 != nxt.time_range[0]:
                raise MergeError(
                    f"time ranges are not contiguous: {prev.time_range} "
                    f"then {nxt.time_range}"
                )
    else:
        for p in parts[1:]:
            if p.time_range != base.time_range:
                raise MergeError(
                    "parts merged along a non-time axis must cover the "
                    "same steps"
                )

    merged_tt = parts[0].tt
    for p in parts[1:]:
        merged_tt = tt_concat_existing(merged_tt, p.tt, pos)
    if tau_round > 0:
        merged_tt = tt_round(merged_tt, tau_round)

    total_extent = sum(p.plan.original_dims[dim - 1] for p in parts)
    new_dims = list(base.plan.original_dims)
    new_dims[dim - 1] = total_extent
    new_factors = list(base.plan.axis_factors)
    new_factors[dim - 1] = (total_extent,)
    plan = TensorizePlan(
        original_dims=tuple(new_dims),
        axis_factors=tuple(new_factors),
        axis_levels=base.plan.axis_levels,
        interlace=None,
        pads=base.plan.pads,
    )
    if dim == 1:
        time_range = (parts[0].time_range[0], parts[-1].time_range[1])
        extents = (total_extent,)
    else:
        time_range = base.time_range
        extents = base.part_time_extents
    return CompressedSegment(
        tt=merged_tt,
        plan=plan,
        reorder=base.reorder,
        permutations=base.permutations,
        time_range=time_range,
        part_time_extents=extents,
        stack_dims=(),
        stats=combine_stats([p.stats for p in parts]),
        tolerance_spent=compose_tolerances(
            max(p.tolerance_spent for p in parts), [tau_round]
        ),
    )


def merge_tree_levels(n_segments: int, arity: int) -> int:
    """Number of merge levels needed to collapse ``n_segments`` to one."""
    if arity < 2:
        raise ConfigError("merge arity must be >= 2")
    levels = 0
    count = n_segments
    while count > 1:
        count = math.ceil(count / arity)
        levels += 1
    return levels


def merge_tree(segments, arity: int, tau_schedule, budget=None):
    """Hierarchical stack-merge: level 0 holds the input segments, each
    next level merges consecutive groups of ``arity``.

    Returns every level (outermost first) so per-level compression curves
    can be reported.  When ``budget`` is given the composed tolerance is
    validated before any merging starts.
    """
    segments = list(segments)
    if not segments:
        raise ConfigError("no segments to merge")
    n_levels = merge_tree_levels(len(segments), arity)
    tau_schedule = list(tau_schedule)
    if len(tau_schedule) < n_levels:
        raise ConfigError(
            f"need {n_levels} rounding tolerances, got {len(tau_schedule)}"
        )
    if budget is not None:
        worst = max(s.tolerance_spent for s in segments)
        total = compose_tolerances(worst, tau_schedule[:n_levels])
        if total > budget * (1.0 + 1e-12):
            raise ConfigError(
                f"tolerance schedule composes to {total:.3e}, above the "
                f"budget {budget:.3e}"
            )
    levels = [segments]
    current = segments
    for lvl in range(n_levels):
        tau = tau_schedule[lvl]
        nxt = []
        for start in range(0, len(current), arity):
            group = current[start : start + arity]
            if len(group) == 1:
                nxt.append(group[0])
            else:
                nxt.append(merge_stack(group, tau))
        levels.append(nxt)
        current = nxt
    return levels


def _leaf_digits(leaf: int, stack_dims) -> tuple:
    digits = []
    rem = leaf
    for extent in stack_dims:
        digits.append(rem % extent)
        rem //= extent
    return tuple(digits)


def _unpermute(seg: CompressedSegment, slab: np.ndarray, t0: int) -> np.ndarray:
    """Undo the particle ordering of one reconstructed time slab."""
    if seg.permutations is None:
        return slab
    out = np.empty_like(slab)
    perms = seg.permutations
    if perms.ndim == 1:
        out[:, perms, :] = slab
    else:
        for t in range(slab.shape[0]):
            out[t, perms[t0 + t], :] = slab[t]
    return out


def reconstruct_segment(
    seg: CompressedSegment, max_entries=None
) -> DenseTensor:
    """Full dense reconstruction in original order, padding cropped.

    Each stacked leaf is extracted, the tensorization plan inverted, the
    leaf cropped to its real timestep count and the particle permutation
    undone; the leaves are then concatenated along time.
    """
    dense = tt_full(seg.tt, max_entries=max_entries).to_numpy()
    n_plan_dims = len(seg.plan.tensorized_dims())
    slabs = []
    t0 = 0
    n_leaves = math.prod(seg.stack_dims) if seg.stack_dims else 1
    for leaf in range(n_leaves):
        digits = _leaf_digits(leaf, seg.stack_dims)
        slab = dense[(slice(None),) * n_plan_dims + digits]
        block = invert_plan(
            DenseTensor.from_numpy(slab), seg.plan
        ).to_numpy()
        block = block[: seg.part_time_extents[leaf]]
        slabs.append(_unpermute(seg, block, t0))
        t0 += seg.part_time_extents[leaf]
    return DenseTensor.from_numpy(np.concatenate(slabs, axis=0))


def segment_entry(seg: CompressedSegment, step: int, indices) -> float:
    """Entry lookup without materializing anything.

    ``step`` is the global timestep index (within ``time_range``);
    ``indices`` holds the remaining 1-based original coordinates
    (particle, component, ...).  Served through per-element train access,
    so memory stays at the size of the cores.
    """
    first, last = seg.time_range
    if not first <= step <= last:
        raise IndexRangeError(
            f"step {step} outside this segment's range {seg.time_range}"
        )
    offset = step - first
    bounds = np.cumsum((0,) + seg.part_time_extents)
    leaf = int(np.searchsorted(bounds, offset, side="right") - 1)
    t_within = offset - int(bounds[leaf])

    indices = tuple(int(i) for i in indices)
    if len(indices) != len(seg.plan.original_dims) - 1:
        raise IndexRangeError(
            f"expected {len(seg.plan.original_dims) - 1} trailing indices"
        )
    coords = list(indices)
    if seg.permutations is not None:
        perms = seg.permutations
        perm = perms if perms.ndim == 1 else perms[offset]
        # position of the original particle in the sorted order
        coords[0] = int(np.nonzero(perm == coords[0] - 1)[0][0]) + 1
    full = seg.plan.forward_index((t_within + 1, *coords))
    leaf_digits = tuple(d + 1 for d in _leaf_digits(leaf, seg.stack_dims))
    return tt_get(seg.tt, full + leaf_digits)


def reconstruct_region(seg: CompressedSegment, region) -> DenseTensor:
    """Reconstruct a sub-box via per-entry access only.

    ``region`` lists one inclusive 1-based (lo, hi) pair per original
    axis; the time axis counts within the segment (1..total steps).
    """
    dims = (seg.total_steps,) + seg.plan.original_dims[1:]
    region = [tuple(int(x) for x in r) for r in region]
    if len(region) != len(dims):
        raise IndexRangeError(
            f"region needs {len(dims)} axis ranges, got {len(region)}"
        )
    for (lo, hi), n in zip(region, dims):
        if not 1 <= lo <= hi <= n:
            raise IndexRangeError(
                f"region ({lo}, {hi}) out of range 1..{n}"
            )
    inv_perm = None
    if seg.permutations is not None and seg.permutations.ndim == 1:
        inv_perm = np.argsort(seg.permutations)
    out_dims = tuple(hi - lo + 1 for lo, hi in region)
    out = np.empty(out_dims)
    first = seg.time_range[0]
    bounds = np.cumsum((0,) + seg.part_time_extents)
    for flat in range(math.prod(out_dims)):
        rem = flat
        local = []
        for n in out_dims:
            local.append(rem % n)
            rem //= n
        coords = [r[0] + o for r, o in zip(region, local)]  # 1-based
        offset = coords[0] - 1
        leaf = int(np.searchsorted(bounds, offset, side="right") - 1)
        t_within = offset - int(bounds[leaf])
        rest = list(coords[1:])
        if seg.permutations is not None:
            if inv_perm is not None:
                rest[0] = int(inv_perm[rest[0] - 1]) + 1
            else:
                perm = seg.permutations[offset]
                rest[0] = int(np.nonzero(perm == rest[0] - 1)[0][0]) + 1
        full = seg.plan.forward_index((t_within + 1, *rest))
        leaf_digits = tuple(d + 1 for d in _leaf_digits(leaf, seg.stack_dims))
        out[tuple(local)] = tt_get(seg.tt, full + leaf_digits)
    # local digits were generated column-major, so out is already aligned
    return DenseTensor.from_numpy(out)


def segment_metrics(
    seg: CompressedSegment,
    original: Optional[DenseTensor] = None,
    archive_bytes: Optional[int] = None,
    max_entries=None,
) -> MetricsReport:
    """Quality report; reconstruction errors are filled in when the
    original data is supplied."""
    err_nrmse = None
    err_rel = None
    if original is not None:
        recon = reconstruct_segment(seg, max_entries=max_entries)
        if seg.stats.x_max > seg.stats.x_min:
            err_nrmse = nrmse_metric(original, recon)
        if seg.stats.frobenius_norm > 0:
            err_rel = rel_frob(original, recon)
    total_ratio = None
    if archive_bytes:
        total_ratio = seg.stats.entry_count * 8 / archive_bytes
    return MetricsReport(
        nrmse=err_nrmse,
        rel_frob=err_rel,
        compression_ratio_cores_only=seg.compression_ratio,
        compression_ratio_total_archive=total_ratio,
        entry_count=seg.stats.entry_count,
        x_min=seg.stats.x_min,
        x_max=seg.stats.x_max,
    )


# --- segment store -------------------------------------------------------


def _encode_u32(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.asarray(arr).astype("<u4").tobytes()
    ).decode("ascii")


def _decode_u32(blob: str, shape) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(blob), dtype="<u4")
    return flat.reshape(tuple(shape)).astype(np.int64)


def _plan_to_dict(plan: TensorizePlan) -> dict:
    return {
        "original_dims": list(plan.original_dims),
        "axis_factors": [list(f) for f in plan.axis_factors],
        "axis_levels": list(plan.axis_levels),
        "interlace": list(plan.interlace) if plan.interlace else None,
        "pads": [
            [p.axis, p.original, p.padded, p.strategy] for p in plan.pads
        ],
    }


def _plan_from_dict(d: dict) -> TensorizePlan:
    return TensorizePlan(
        original_dims=tuple(d["original_dims"]),
        axis_factors=tuple(tuple(f) for f in d["axis_factors"]),
        axis_levels=tuple(d["axis_levels"]),
        interlace=tuple(d["interlace"]) if d.get("interlace") else None,
        pads=tuple(
            AxisPad(axis=a, original=o, padded=p, strategy=s)
            for a, o, p, s in d.get("pads", [])
        ),
    )


def segment_metadata(
    seg: CompressedSegment, config_hash: Optional[str] = None
) -> dict:
    from . import __version__

    meta = {
        "format": "ttc-segment",
        "time_range": list(seg.time_range),
        "part_time_extents": list(seg.part_time_extents),
        "stack_dims": list(seg.stack_dims),
        "reorder": seg.reorder,
        "plan": _plan_to_dict(seg.plan),
        "stats": dataclasses.asdict(seg.stats),
        "tolerance_spent": seg.tolerance_spent,
        "tool_version": __version__,
    }
    if seg.permutations is not None:
        perms = seg.permutations
        meta["permutation"] = {
            "shape": list(perms.shape),
            "u32le_b64": _encode_u32(perms),
        }
    if config_hash is not None:
        meta["config_hash"] = config_hash
    return meta


def segment_from_parts(tt: TTTensor, meta: dict) -> CompressedSegment:
    from .errors import FormatError

    try:
        perms = None
        if "permutation" in meta:
            perms = _decode_u32(
                meta["permutation"]["u32le_b64"], meta["permutation"]["shape"]
            )
        stats = DataStats(**meta["stats"])
        return CompressedSegment(
            tt=tt,
            plan=_plan_from_dict(meta["plan"]),
            reorder=meta.get("reorder", "none"),
            permutations=perms,
            time_range=tuple(meta["time_range"]),
            part_time_extents=tuple(meta["part_time_extents"]),
            stack_dims=tuple(meta["stack_dims"]),
            stats=stats,
            tolerance_spent=float(meta["tolerance_spent"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"segment metadata is malformed: {exc!r}") from exc


def segment_filename(seg: CompressedSegment) -> str:
    return f"seg_{seg.time_range[0]}_{seg.time_range[1]}.ttc"


def save_segment(
    directory, seg: CompressedSegment, config_hash: Optional[str] = None
) -> str:
    from .formats import write_ttc1

    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, segment_filename(seg))
    write_ttc1(path, seg.tt, segment_metadata(seg, config_hash))
    return path


def load_segment(path) -> CompressedSegment:
    from .formats import read_ttc1

    tt, meta = read_ttc1(path)
    return segment_from_parts(tt, meta)


def list_segments(directory):
    """Paths of ``seg_<first>_<last>.ttc`` files sorted by first step."""
    found = []
    for name in os.listdir(directory):
        m = SEGMENT_FILE_RE.match(name)
        if m:
            found.append((int(m.group(1)), os.path.join(directory, name)))
    return [path for _, path in sorted(found)]
