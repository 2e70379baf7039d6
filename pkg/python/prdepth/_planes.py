from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, get_args

import numpy as np
import numpy.typing as npt

from prdepth._errors import InvalidArgumentError

logger = logging.getLogger(__name__)

PlaneStrategy = Literal["UR", "UA", "DR", "DA"]
"""Uniform / Disparity-wise spacing x Relative / Absolute anchoring."""

FloatArray = npt.NDArray[np.float64]
LabelArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

_STRATEGIES: frozenset[str] = frozenset(get_args(PlaneStrategy))
_RESIDUAL_UPPER = np.nextafter(0.5, 0.0)


def _is_relative(strategy: PlaneStrategy) -> bool:
    return strategy[1] == "R"


def _is_disparity(strategy: PlaneStrategy) -> bool:
    return strategy[0] == "D"


def _spacing_ok(values: FloatArray) -> bool:
    gaps = np.diff(values)
    tolerance = 1e-9 * np.abs(gaps).max() + 64 * np.finfo(np.float64).eps * np.abs(
        values
    ).max()
    return bool(np.all(np.abs(gaps - gaps.mean()) <= tolerance))


@dataclass(frozen=True, slots=True, eq=False)
class DepthPlaneSet:
    """Ordered plane depths ``d_1 < ... < d_D`` in meters."""

    depths: FloatArray
    strategy: PlaneStrategy
    d_min: float
    d_max: float

    def __post_init__(self) -> None:
        depths = np.array(self.depths, dtype=np.float64)
        depths.setflags(write=False)
        object.__setattr__(self, "depths", depths)

        if self.strategy not in _STRATEGIES:
            msg = f"unknown plane strategy: {self.strategy!r}"
            raise InvalidArgumentError(msg)
        if depths.ndim != 1 or depths.size < 2:
            msg = f"a plane set needs at least 2 planes, got {depths.size}"
            raise InvalidArgumentError(msg)
        if not np.all(np.isfinite(depths)) or np.any(np.diff(depths) <= 0):
            msg = "plane depths must be finite and strictly increasing"
            raise InvalidArgumentError(msg)
        if depths[0] != self.d_min or depths[-1] != self.d_max:
            msg = "first and last plane must sit exactly on d_min and d_max"
            raise InvalidArgumentError(msg)
        if _is_disparity(self.strategy):
            if depths[0] <= 0:
                msg = "disparity-wise planes need positive depths"
                raise InvalidArgumentError(msg)
            if not _spacing_ok(1.0 / depths):
                msg = "disparity-wise planes must be uniform in inverse depth"
                raise InvalidArgumentError(msg)
        elif not _spacing_ok(depths):
            msg = "uniform planes must be equally spaced"
            raise InvalidArgumentError(msg)

    @property
    def count(self) -> int:
        return int(self.depths.size)

    @property
    def gaps(self) -> FloatArray:
        return np.diff(self.depths)

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        depths = ", ".join(f"{d:.6g}" for d in self.depths)
        return f"DepthPlaneSet({self.strategy}, D={self.count}, [{depths}])"


@dataclass(frozen=True, slots=True, eq=False)
class PRMap:
    """Per-pixel plane label ``p`` (1-based) and normalized residual ``r``.

    Invalid pixels carry ``p == 0`` and ``r == 0``. ``clamped`` counts valid
    pixels whose depth fell outside ``[d_1, d_D]`` during encoding.
    """

    plane: LabelArray
    residual: FloatArray
    clamped: int = 0

    @property
    def valid(self) -> BoolArray:
        return self.plane > 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.plane.shape


def _valid_samples(sparse: npt.ArrayLike) -> FloatArray:
    values = np.asarray(sparse, dtype=np.float64)
    return values[np.isfinite(values) & (values > 0)]


def make_planes(
    strategy: PlaneStrategy,
    count: int,
    *,
    d_min: float | None = None,
    d_max: float | None = None,
    sparse: npt.ArrayLike | None = None,
) -> DepthPlaneSet:
    """Build a plane set.

    Relative strategies (UR, DR) anchor on the minimum and maximum valid
    sample of ``sparse``; absolute strategies (UA, DA) take ``d_min`` and
    ``d_max``. Disparity-wise strategies (DR, DA) space the planes uniformly
    in inverse depth.
    """
    if strategy not in _STRATEGIES:
        msg = f"unknown plane strategy: {strategy!r}"
        raise InvalidArgumentError(msg)
    if count < 2:
        msg = f"need at least 2 planes, got {count}"
        raise InvalidArgumentError(msg)

    if _is_relative(strategy):
        if sparse is None:
            msg = f"{strategy} planes are anchored on a sparse depth map"
            raise InvalidArgumentError(msg)
        samples = _valid_samples(sparse)
        if np.unique(samples).size < 2:
            msg = "relative planes need at least 2 distinct valid depth samples"
            raise InvalidArgumentError(msg)
        lo, hi = float(samples.min()), float(samples.max())
    else:
        if d_min is None or d_max is None:
            msg = f"{strategy} planes need explicit d_min and d_max"
            raise InvalidArgumentError(msg)
        lo, hi = float(d_min), float(d_max)

    if not lo < hi:
        msg = f"d_min must be below d_max, got {lo} and {hi}"
        raise InvalidArgumentError(msg)

    if _is_disparity(strategy):
        if lo <= 0:
            msg = f"disparity-wise planes need d_min > 0, got {lo}"
            raise InvalidArgumentError(msg)
        depths = np.sort(1.0 / np.linspace(1.0 / lo, 1.0 / hi, count))
    else:
        depths = lo + np.arange(count) * ((hi - lo) / (count - 1))
    depths[0], depths[-1] = lo, hi

    planes = DepthPlaneSet(depths, strategy, lo, hi)
    logger.debug("built %r", planes)
    return planes


def d_step(planes: DepthPlaneSet, p: int, r: float) -> float:
    """Gap to the neighbour plane on the side selected by the sign of ``r``.

    ``r == 0`` on the last plane measures the gap below it; a positive
    residual on the last plane or a negative one on the first is rejected.
    """
    count = planes.count
    if not 1 <= p <= count:
        msg = f"plane label {p} outside [1, {count}]"
        raise InvalidArgumentError(msg)
    if p == 1 and r < 0:
        msg = "plane 1 has no lower neighbour for a negative residual"
        raise InvalidArgumentError(msg)
    if p == count and r > 0:
        msg = f"plane {count} has no upper neighbour for a positive residual"
        raise InvalidArgumentError(msg)
    gaps = planes.gaps
    if r >= 0 and p < count:
        return float(gaps[p - 1])
    return float(gaps[p - 2])


def step_lengths(
    planes: DepthPlaneSet, plane: npt.ArrayLike, residual: npt.ArrayLike
) -> FloatArray:
    """Vectorized ``d_step`` that extrapolates past the outermost planes.

    Plane 1 with a negative residual reuses the first gap and plane D with a
    positive residual reuses the last one.
    """
    labels = np.asarray(plane, dtype=np.int64)
    r = np.asarray(residual, dtype=np.float64)
    upper = np.clip(labels - 1, 0, planes.count - 2)
    lower = np.clip(labels - 2, 0, planes.count - 2)
    return np.where(r >= 0, planes.gaps[upper], planes.gaps[lower])


def encode(
    depth: npt.ArrayLike, planes: DepthPlaneSet, valid: npt.ArrayLike | None = None
) -> PRMap:
    """Encode metric depth as (plane, residual) pairs.

    Depths outside ``[d_1, d_D]`` clamp to ``(1, 0)`` or ``(D, 0)`` and are
    counted in ``PRMap.clamped``. Without an explicit mask, positive finite
    pixels are valid.
    """
    values = np.asarray(depth, dtype=np.float64)
    if valid is None:
        mask = np.isfinite(values) & (values > 0)
    else:
        mask = np.asarray(valid, dtype=bool)
        if mask.shape != values.shape:
            msg = f"mask shape {mask.shape} != depth shape {values.shape}"
            raise InvalidArgumentError(msg)
        if not np.all(np.isfinite(values[mask])):
            msg = "depth must be finite on valid pixels"
            raise InvalidArgumentError(msg)

    d = planes.depths
    count = planes.count
    x = values[mask]

    below = x < d[0]
    above = x > d[-1]
    inside = ~(below | above)

    # Lower plane of the bracketing interval [d_i, d_{i+1}); i is 0-based.
    lower = np.clip(np.searchsorted(d, x, side="right") - 1, 0, count - 2)
    lo, hi = d[lower], d[lower + 1]
    gap = hi - lo
    take_lower = x < (lo + hi) / 2

    labels = np.where(take_lower, lower + 1, lower + 2)
    residual = np.where(
        take_lower,
        np.minimum((x - lo) / gap, _RESIDUAL_UPPER),
        np.maximum((x - hi) / gap, -0.5),
    )
    labels = np.where(below, 1, np.where(above, count, labels))
    residual = np.where(inside, residual, 0.0)

    plane_map = np.zeros(values.shape, dtype=np.int64)
    residual_map = np.zeros(values.shape, dtype=np.float64)
    plane_map[mask] = labels
    residual_map[mask] = residual

    clamped = int(below.sum() + above.sum())
    if clamped:
        logger.warning(
            "%d of %d depths fell outside [%g, %g] and were clamped",
            clamped,
            x.size,
            d[0],
            d[-1],
        )
    return PRMap(plane_map, residual_map, clamped)


def decode(pr: PRMap, planes: DepthPlaneSet) -> FloatArray:
    """``D(p, r) = d_p + r * d_step(p, r)``; invalid pixels decode to 0."""
    labels = np.asarray(pr.plane, dtype=np.int64)
    r = np.asarray(pr.residual, dtype=np.float64)
    if labels.shape != r.shape:
        msg = f"plane map {labels.shape} and residual map {r.shape} disagree"
        raise InvalidArgumentError(msg)
    valid = labels > 0
    p, rv = labels[valid], r[valid]
    count = planes.count
    if np.any(p > count):
        msg = f"plane label outside [1, {count}] on a valid pixel"
        raise InvalidArgumentError(msg)
    if np.any((p == 1) & (rv < 0)) or np.any((p == count) & (rv > 0)):
        msg = "residual points past the outermost plane"
        raise InvalidArgumentError(msg)

    out = np.zeros(labels.shape, dtype=np.float64)
    out[valid] = planes.depths[p - 1] + rv * step_lengths(planes, p, rv)
    return out


def sparse_to_network_input(
    sparse: npt.ArrayLike, planes: DepthPlaneSet
) -> tuple[FloatArray, FloatArray]:
    """Split sparse samples into a D-channel plane mask and a residual map.

    Channel ``p - 1`` of the mask is 1 where a sample encodes to plane
    ``p``; the residual map is 1 x H x W and zero away from samples.
    """
    values = np.asarray(sparse, dtype=np.float64)
    if values.ndim != 2:
        msg = f"sparse depth must be H x W, got {values.shape}"
        raise InvalidArgumentError(msg)
    pr = encode(values, planes)
    if not np.any(pr.valid):
        msg = "sparse depth has no valid samples"
        raise InvalidArgumentError(msg)
    channels = np.arange(1, planes.count + 1)[:, None, None]
    plane_mask = (pr.plane[None] == channels).astype(np.float64)
    return plane_mask, pr.residual[None].copy()
