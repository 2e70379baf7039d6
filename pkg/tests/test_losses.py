from __future__ import annotations

import csv
import math
from typing import TYPE_CHECKING

import numpy as np
import pytest

from prdepth import (
    InvalidArgumentError,
    LossReport,
    Tape,
    Tensor,
    backward,
    depth_loss,
    parameter,
    plane_ce_loss,
    residual_loss,
    total_loss,
)
from prdepth._diffcore import absolute, mean, sub
from prdepth._losses import append_loss_row, start_loss_log

if TYPE_CHECKING:
    from pathlib import Path


def test_depth_loss_is_masked_mean_absolute_error() -> None:
    pred, gt = np.array([[1.0, 3.0, 9.0]]), np.array([[2.0, 2.0, 0.0]])
    assert depth_loss(pred, gt, gt > 0).item() == pytest.approx(1.0)
    assert depth_loss(pred, gt, np.array([[True, False, False]])).item() == 1.0


def test_depth_loss_ignores_non_finite_values_outside_the_mask() -> None:
    pred = np.array([[1.0, np.nan]])
    gt = np.array([[2.0, 5.0]])
    assert depth_loss(pred, gt, np.array([[True, False]])).item() == 1.0


def test_depth_loss_rejects_empty_mask() -> None:
    with pytest.raises(InvalidArgumentError, match="no pixels"):
        depth_loss(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), dtype=bool))


def test_plane_loss_weights_initial_logits_by_lambda() -> None:
    logits = np.zeros((2, 3, 3))
    labels = np.ones((3, 3), dtype=np.int64)
    mask = np.ones((3, 3), dtype=bool)

    loss = plane_ce_loss(logits, logits, labels, mask).item()
    assert loss == pytest.approx(1.7 * math.log(2.0))

    weighted = plane_ce_loss(logits, logits, labels, mask, plane_weight=0.0).item()
    assert weighted == pytest.approx(math.log(2.0))


def test_plane_loss_rejects_labels_outside_the_plane_range() -> None:
    logits = np.zeros((2, 1, 2))
    with pytest.raises(InvalidArgumentError, match=r"\[1, 2\]"):
        plane_ce_loss(logits, logits, np.array([[1, 3]]), np.ones((1, 2), dtype=bool))


def test_residual_loss_is_confidence_weighted() -> None:
    loss = residual_loss(
        np.array([[0.1, -0.2]]),
        np.array([[0.0, 0.0]]),
        np.array([[0.5, 1.0]]),
        np.ones((1, 2), dtype=bool),
    )
    assert loss.item() == pytest.approx(0.125)


def test_residual_loss_with_unit_confidence_is_plain_l1() -> None:
    rng = np.random.default_rng(0)
    r_pred = rng.uniform(-0.5, 0.5, size=(6, 7))
    r_gt = rng.uniform(-0.5, 0.5, size=(6, 7))
    mask = rng.uniform(size=(6, 7)) > 0.3

    weighted = residual_loss(r_pred, r_gt, np.ones((6, 7)), mask).item()
    plain = mean(absolute(sub(r_gt, r_pred)), mask).item()

    assert weighted == plain


def test_residual_loss_does_not_differentiate_confidence() -> None:
    r_pred = parameter(np.array([[0.2, -0.1]]))
    conf = parameter(np.array([[0.6, 0.9]]))
    with Tape() as tape:
        loss = residual_loss(r_pred, np.zeros((1, 2)), conf, np.ones((1, 2), dtype=bool))
    backward(tape, loss)

    assert conf.grad is None
    np.testing.assert_allclose(r_pred.grad, [[0.3, -0.45]])


def test_total_loss_scales_residual_by_plane_count() -> None:
    total, report = total_loss(
        Tensor(1.0),
        Tensor(2.0),
        Tensor(4.0),
        num_planes=8,
        valid_pixel_count=10,
        mean_confidence=0.5,
        step=3,
    )
    assert total.item() == 3.5
    assert report == LossReport(
        step=3,
        depth=1.0,
        plane=2.0,
        residual=4.0,
        total=3.5,
        valid_pixel_count=10,
        mean_confidence=0.5,
    )
    assert report.is_finite()


def test_loss_report_detects_non_finite_values() -> None:
    _, report = total_loss(
        Tensor(1.0), Tensor(float("nan")), Tensor(0.0), num_planes=2, valid_pixel_count=1
    )
    assert not report.is_finite()


def test_loss_log_has_one_row_per_report(tmp_path: Path) -> None:
    reports = [
        LossReport(step=i, depth=1.0, plane=0.5, residual=0.25, total=1.6, valid_pixel_count=4)
        for i in range(3)
    ]
    path = tmp_path / "loss.csv"
    start_loss_log(path)
    for report in reports:
        append_loss_row(path, report)

    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["step"] for row in rows] == ["0", "1", "2"]
    assert float(rows[0]["L_R"]) == 0.25
    assert math.isnan(float(rows[0]["mean_confidence"]))
    assert path.read_text(encoding="utf-8").splitlines()[0] == (
        "step,L_D,L_P,L_R,total,mean_confidence"
    )


def test_loss_worked_examples() -> None:
    full = np.ones((1, 2), dtype=bool)
    assert depth_loss(np.array([[1.0, 2.0]]), np.array([[2.0, 4.0]]), full).item() == 1.5

    uniform = np.zeros((4, 2, 2))
    labels = np.array([[1, 2], [3, 4]])
    assert plane_ce_loss(uniform, uniform, labels, np.ones((2, 2), dtype=bool)).item() == (
        pytest.approx(1.7 * math.log(4.0))
    )

    weighted = residual_loss(
        np.array([[0.4, 0.1]]), np.zeros((1, 2)), np.array([[0.25, 1.0]]), full
    )
    assert weighted.item() == pytest.approx(0.1)

    total, _ = total_loss(
        Tensor(0.2), Tensor(1.0), Tensor(0.8), num_planes=8, valid_pixel_count=2
    )
    assert total.item() == pytest.approx(1.3)


def test_plane_loss_vanishes_for_confident_correct_logits() -> None:
    labels = np.array([[1, 3], [2, 2]])
    logits = np.zeros((3, 2, 2))
    np.put_along_axis(logits, (labels - 1)[None], 1e4, axis=0)
    loss = plane_ce_loss(logits, logits, labels, np.ones((2, 2), dtype=bool)).item()
    assert 0.0 <= loss <= 1e-3


def test_residual_loss_never_decreases_with_more_confidence() -> None:
    rng = np.random.default_rng(8)
    r_pred, r_gt = rng.uniform(-0.5, 0.5, size=(2, 5, 5))
    conf = rng.uniform(0.2, 1.0, size=(5, 5))
    mask = np.ones((5, 5), dtype=bool)

    base = residual_loss(r_pred, r_gt, conf, mask).item()
    raised = residual_loss(r_pred, r_gt, np.minimum(conf + 0.1, 1.0), mask).item()

    assert raised >= base


def test_masked_pixels_do_not_affect_any_loss() -> None:
    rng = np.random.default_rng(9)
    mask = rng.uniform(size=(4, 4)) > 0.5
    mask[0, 0] = True
    pred, gt = rng.uniform(1.0, 5.0, size=(2, 4, 4))
    logits = rng.normal(size=(3, 4, 4))
    labels = rng.integers(1, 4, size=(4, 4))

    def losses(p: np.ndarray, lg: np.ndarray) -> tuple[float, float, float]:
        return (
            depth_loss(p, gt, mask).item(),
            plane_ce_loss(lg, lg, labels, mask).item(),
            residual_loss(p / 10.0, gt / 10.0, np.ones((4, 4)), mask).item(),
        )

    before = losses(pred, logits)
    pred[~mask] = 1e6
    logits[:, ~mask] = -1e3
    assert losses(pred, logits) == before


def test_starting_a_loss_log_truncates_an_old_run(tmp_path: Path) -> None:
    path = tmp_path / "loss.csv"
    path.write_text("stale\n", encoding="utf-8")

    start_loss_log(path)

    assert path.read_text(encoding="utf-8").splitlines() == [
        "step,L_D,L_P,L_R,total,mean_confidence"
    ]
