from __future__ import annotations

import math

import numpy as np
import pytest

from prdepth import InvalidArgumentError, MetricsReport, evaluate


def test_perfect_prediction() -> None:
    gt = np.random.default_rng(0).uniform(0.5, 10.0, size=(6, 6))
    report = evaluate(gt, gt)
    assert report.rmse == report.mae == report.rel == 0.0
    assert report.irmse == report.imae == 0.0
    assert report.delta1 == report.delta2 == report.delta3 == 100.0
    assert report.n == 36


def test_two_pixel_hand_computation() -> None:
    report = evaluate(np.array([1.0, 2.0]), np.array([2.0, 4.0]))

    assert report.mae == 1.5
    assert report.rmse == pytest.approx(math.sqrt(2.5))
    assert report.rel == 0.5
    assert report.imae == pytest.approx(0.375)
    assert report.irmse == pytest.approx(math.sqrt((0.25 + 0.0625) / 2))
    assert report.delta1 == 0.0
    assert report.delta2 == 0.0
    assert report.delta3 == 0.0


def test_delta_threshold_is_strict() -> None:
    # 1.25 is exact in binary: a ratio of exactly 1.25 fails delta1.
    report = evaluate(np.array([5.0, 4.5]), np.array([4.0, 4.0]))
    assert report.delta1 == 50.0
    assert report.delta2 == 100.0


def test_zero_mask_pixels_are_skipped_by_default() -> None:
    pred = np.array([[1.0, 100.0], [2.0, np.nan]])
    gt = np.array([[1.0, 0.0], [2.0, 0.0]])
    report = evaluate(pred, gt)
    assert report.n == 2
    assert report.mae == 0.0


def test_non_positive_predictions_fail_every_threshold() -> None:
    report = evaluate(np.array([0.0, -1.0, 2.0]), np.array([2.0, 2.0, 2.0]))
    assert report.delta3 == pytest.approx(100.0 / 3.0)
    assert np.isfinite(report.irmse)
    assert report.imae == pytest.approx(2.0 * (1e6 - 0.5) / 3.0)


def test_explicit_mask_must_cover_positive_ground_truth() -> None:
    gt = np.array([1.0, 0.0])
    with pytest.raises(InvalidArgumentError, match="positive"):
        evaluate(np.ones(2), gt, np.array([True, True]))
    with pytest.raises(InvalidArgumentError, match="no pixels"):
        evaluate(np.ones(2), gt, np.array([False, False]))
    with pytest.raises(InvalidArgumentError, match="finite"):
        evaluate(np.array([np.inf, 1.0]), np.ones(2))


def test_inverse_metrics_can_be_shown_per_kilometre() -> None:
    report = evaluate(np.array([1.0, 2.0]), np.array([2.0, 4.0]))

    metres = report.csv_row()
    kilometres = report.csv_row(inverse_unit="km")

    assert len(metres) == len(MetricsReport.CSV_HEADER)
    assert float(kilometres[4]) == pytest.approx(1000.0 * float(metres[4]))
    assert kilometres[0] == metres[0]
    assert kilometres[-1] == "2"
    assert "iMAE [1/km]" in report.format_table(inverse_unit="km")
    assert "375.0000" in report.format_table(inverse_unit="km")


@pytest.mark.parametrize("scale", [4.0, 1000.0, 0.3])
def test_metrics_follow_a_change_of_units(scale: float) -> None:
    rng = np.random.default_rng(4)
    gt = rng.uniform(0.5, 10.0, size=50)
    pred = gt * rng.uniform(0.7, 1.4, size=50)
    base, scaled = evaluate(pred, gt), evaluate(scale * pred, scale * gt)

    assert scaled.rmse == pytest.approx(scale * base.rmse, rel=1e-9)
    assert scaled.mae == pytest.approx(scale * base.mae, rel=1e-9)
    assert scaled.rel == pytest.approx(base.rel, rel=1e-9)
    assert scaled.irmse == pytest.approx(base.irmse / scale, rel=1e-9)
    assert scaled.imae == pytest.approx(base.imae / scale, rel=1e-9)
    assert (scaled.delta1, scaled.delta2, scaled.delta3) == (
        base.delta1,
        base.delta2,
        base.delta3,
    )


def test_scaled_ground_truth_sits_exactly_on_the_delta_boundary() -> None:
    gt = np.random.default_rng(9).uniform(0.5, 10.0, size=200)

    report = evaluate(1.25 * gt, gt)

    assert report.delta1 == 0.0
    assert report.delta2 == 100.0
