"""Probability-volume operations over D x H x W logit grids.

Reconstruction and filtering have a tensor form used inside the network,
where gradients must flow, and an array form for standalone use. The array
forms call the tensor forms with no tape active.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from prdepth._diffcore import (
    Tensor,
    as_tensor,
    box_mean,
    channel_dot,
    detach,
    mul,
    reshape,
    softmax_channels,
)
from prdepth._errors import InvalidArgumentError
from prdepth._planes import step_lengths

if TYPE_CHECKING:
    from prdepth._diffcore import TensorLike
    from prdepth._planes import DepthPlaneSet, FloatArray, LabelArray

DEFAULT_FILTER_RADIUS = 4
DEFAULT_FILTER_EPS = 1e-4


def _check_volume(name: str, volume: Tensor, planes: DepthPlaneSet | None = None) -> None:
    if volume.ndim != 3:
        msg = f"{name} must be D x H x W, got {volume.shape}"
        raise InvalidArgumentError(msg)
    if planes is not None and volume.shape[0] != planes.count:
        msg = f"{name} has {volume.shape[0]} channels for {planes.count} planes"
        raise InvalidArgumentError(msg)


def _residual_plane(residual: Tensor, spatial: tuple[int, ...]) -> Tensor:
    if residual.shape == (1, *spatial):
        return reshape(residual, spatial)
    if residual.shape != spatial:
        msg = f"residual map {residual.shape} does not match volume size {spatial}"
        raise InvalidArgumentError(msg)
    return residual


def softmax_volume(logits: npt.ArrayLike) -> FloatArray:
    return softmax_channels(logits).data


def argmax_plane(probs: npt.ArrayLike) -> LabelArray:
    """1-based index of the most probable plane; ties go to the smaller p."""
    values = np.asarray(probs, dtype=np.float64)
    if values.ndim != 3:
        msg = f"probability volume must be D x H x W, got {values.shape}"
        raise InvalidArgumentError(msg)
    return values.argmax(axis=0).astype(np.int64) + 1


def confidence(probs: npt.ArrayLike) -> FloatArray:
    """Per-pixel maximum plane probability, in ``[1/D, 1]``."""
    values = np.asarray(probs, dtype=np.float64)
    if values.ndim != 3:
        msg = f"probability volume must be D x H x W, got {values.shape}"
        raise InvalidArgumentError(msg)
    return values.max(axis=0)


def reconstruct_depth_tensor(
    logits: TensorLike, residual: TensorLike, planes: DepthPlaneSet
) -> Tensor:
    """Expected plane depth plus the residual scaled at the argmax plane.

    The argmax plane and the chosen gap are piecewise constant, so no
    gradient flows through them.
    """
    volume, r = as_tensor(logits), as_tensor(residual)
    _check_volume("logit volume", volume, planes)
    r = _residual_plane(r, volume.shape[1:])
    probs = softmax_channels(volume)
    p_hat = argmax_plane(probs.data)
    steps = step_lengths(planes, p_hat, r.data)
    return channel_dot(probs, planes.depths) + mul(r, steps)


def reconstruct_depth(
    logits: npt.ArrayLike, residual: npt.ArrayLike, planes: DepthPlaneSet
) -> FloatArray:
    r = np.asarray(residual, dtype=np.float64)
    if np.any(np.abs(r) > 0.5):
        msg = "residuals must lie in [-0.5, 0.5]"
        raise InvalidArgumentError(msg)
    return reconstruct_depth_tensor(detach(logits), detach(r), planes).data


def classification_depth(
    logits: npt.ArrayLike, planes: DepthPlaneSet, *, soft: bool = True
) -> FloatArray:
    """Depth from the plane classifier alone, residual forced to zero.

    ``soft`` takes the probability-weighted plane depth; otherwise the depth
    of the argmax plane.
    """
    volume = as_tensor(logits)
    _check_volume("logit volume", volume, planes)
    probs = softmax_volume(volume.data)
    if soft:
        return np.tensordot(planes.depths, probs, axes=(0, 0))
    return planes.depths[argmax_plane(probs) - 1]


def guided_filter_tensor(
    logits: TensorLike,
    guide: TensorLike,
    *,
    radius: int = DEFAULT_FILTER_RADIUS,
    eps: float = DEFAULT_FILTER_EPS,
) -> Tensor:
    """Channel-wise guided filter of ``logits`` steered by ``guide``.

    Every window w_k fits ``l = a_k * I + b_k`` by least squares with ridge
    ``eps``; each output pixel averages the fits of all windows covering it.
    Windows are clipped at the image border and normalized by their true
    size.
    """
    src, gd = as_tensor(logits), as_tensor(guide)
    _check_volume("logit volume", src)
    if gd.shape != src.shape:
        msg = f"guide {gd.shape} must match logit volume {src.shape}"
        raise InvalidArgumentError(msg)
    if radius < 1:
        msg = f"filter radius must be >= 1, got {radius}"
        raise InvalidArgumentError(msg)
    if radius > min(src.shape[1:]) // 2:
        msg = f"filter radius {radius} exceeds half the image extent {src.shape[1:]}"
        raise InvalidArgumentError(msg)
    if not eps > 0:
        msg = f"filter eps must be positive, got {eps}"
        raise InvalidArgumentError(msg)

    mean_i = box_mean(gd, radius)
    mean_l = box_mean(src, radius)
    cov_il = box_mean(gd * src, radius) - mean_i * mean_l
    var_i = box_mean(gd * gd, radius) - mean_i * mean_i
    a = cov_il / (var_i + eps)
    b = mean_l - a * mean_i
    return box_mean(a, radius) * gd + box_mean(b, radius)


def guided_filter(
    logits: npt.ArrayLike,
    guide: npt.ArrayLike,
    *,
    radius: int = DEFAULT_FILTER_RADIUS,
    eps: float = DEFAULT_FILTER_EPS,
) -> FloatArray:
    return guided_filter_tensor(detach(logits), detach(guide), radius=radius, eps=eps).data
