from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from prdepth._diffcore import (
    Tensor,
    absolute,
    add,
    as_tensor,
    cross_entropy_channels,
    detach,
    mean,
    mul,
    reshape,
    sub,
)
from prdepth._errors import InvalidArgumentError

if TYPE_CHECKING:
    from pathlib import Path

    from prdepth._diffcore import TensorLike

DEFAULT_PLANE_WEIGHT = 0.7


def _plane(value: TensorLike, name: str) -> Tensor:
    t = as_tensor(value)
    if t.ndim == 3 and t.shape[0] == 1:
        return reshape(t, t.shape[1:])
    if t.ndim != 2:
        msg = f"{name} must be an H x W map, got {t.shape}"
        raise InvalidArgumentError(msg)
    return t


def _mask(mask: npt.ArrayLike, shape: tuple[int, ...]) -> npt.NDArray[np.bool_]:
    selected = np.asarray(mask, dtype=bool)
    if selected.shape != shape:
        msg = f"mask shape {selected.shape} != map shape {shape}"
        raise InvalidArgumentError(msg)
    if not selected.any():
        msg = "loss mask selects no pixels"
        raise InvalidArgumentError(msg)
    return selected


def depth_loss(pred: TensorLike, gt: npt.ArrayLike, mask: npt.ArrayLike) -> Tensor:
    """Mean absolute depth error over valid pixels."""
    p, g = _plane(pred, "prediction"), _plane(gt, "ground truth")
    if p.shape != g.shape:
        msg = f"prediction {p.shape} and ground truth {g.shape} disagree"
        raise InvalidArgumentError(msg)
    return mean(absolute(sub(g, p)), _mask(mask, p.shape))


def plane_ce_loss(
    logits: TensorLike,
    refined_logits: TensorLike,
    gt_planes: npt.ArrayLike,
    mask: npt.ArrayLike,
    plane_weight: float = DEFAULT_PLANE_WEIGHT,
) -> Tensor:
    """``lambda * H(P_gt, l) + H(P_gt, l_refined)`` with mean cross entropy."""
    labels = np.asarray(gt_planes)
    selected = _mask(mask, labels.shape)
    initial = cross_entropy_channels(logits, labels, selected)
    refined = cross_entropy_channels(refined_logits, labels, selected)
    return add(mul(initial, plane_weight), refined)


def residual_loss(
    r_pred: TensorLike,
    r_gt: npt.ArrayLike,
    conf: TensorLike,
    mask: npt.ArrayLike,
) -> Tensor:
    """Confidence-weighted mean absolute residual error.

    The confidence map is a fixed weight; no gradient flows into it.
    """
    r, g = _plane(r_pred, "predicted residual"), _plane(r_gt, "ground-truth residual")
    c = detach(_plane(conf, "confidence"))
    if not r.shape == g.shape == c.shape:
        msg = f"residual maps {r.shape}, {g.shape} and confidence {c.shape} disagree"
        raise InvalidArgumentError(msg)
    return mean(mul(c, absolute(sub(g, r))), _mask(mask, r.shape))


@dataclass(frozen=True, slots=True)
class LossReport:
    step: int
    depth: float
    plane: float
    residual: float
    total: float
    valid_pixel_count: int
    mean_confidence: float = math.nan

    def is_finite(self) -> bool:
        values = (self.depth, self.plane, self.residual, self.total)
        return all(math.isfinite(v) for v in values)


def total_loss(
    depth: Tensor,
    plane: Tensor,
    residual: Tensor,
    *,
    num_planes: int,
    valid_pixel_count: int,
    mean_confidence: float = math.nan,
    step: int = 0,
) -> tuple[Tensor, LossReport]:
    """``L_D + L_P + L_R / D``, as a tape tensor and as a plain report."""
    if num_planes < 2:
        msg = f"need at least 2 planes, got {num_planes}"
        raise InvalidArgumentError(msg)
    total = add(add(depth, plane), mul(residual, 1.0 / num_planes))
    report = LossReport(
        step=step,
        depth=depth.item(),
        plane=plane.item(),
        residual=residual.item(),
        total=total.item(),
        valid_pixel_count=valid_pixel_count,
        mean_confidence=mean_confidence,
    )
    return total, report


CSV_HEADER = ("step", "L_D", "L_P", "L_R", "total", "mean_confidence")


def start_loss_log(path: Path) -> None:
    """Create or truncate a loss log holding only the CSV header."""
    with path.open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerow(CSV_HEADER)


def append_loss_row(path: Path, report: LossReport) -> None:
    """Append one row; the file is closed again before this returns."""
    with path.open("a", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerow((
            report.step,
            repr(report.depth),
            repr(report.plane),
            repr(report.residual),
            repr(report.total),
            repr(report.mean_confidence),
        ))
