from __future__ import annotations

import csv
import logging
import time
from typing import TYPE_CHECKING

import numpy as np
import pytest

import prdepth._cli as cli_module
from prdepth import (
    LossReport,
    NonFiniteError,
    ToyPRNet,
    ToyPRNetConfig,
    decode,
    encode,
    evaluate,
    load_checkpoint,
    make_planes,
    read_pfm,
    read_pgm,
    read_plane_set,
    read_pr_map,
    read_volume,
    write_pfm,
    write_pr_map,
    write_volume,
)
from prdepth._cli import (
    EXIT_DATA,
    EXIT_DIVERGED,
    EXIT_OK,
    EXIT_USAGE,
    SceneEvaluation,
    evaluate_scenes,
    main,
)

if TYPE_CHECKING:
    from collections.abc import Callable
    from pathlib import Path

NET_FLAGS = [
    "--num-planes", "4",
    "--base-channels", "2",
    "--encoder-depth", "2",
    "--filter-radius", "2",
]  # fmt: skip


def _synth(out: Path, *extra: str) -> int:
    return main([
        "synth", "--out", str(out), "--height", "16", "--width", "16",
        "--sparse-count", "40", "--seed", "7", *extra,
    ])  # fmt: skip


def _train(data: Path, checkpoint: Path, steps: int) -> int:
    return main([
        "train", "--data-dir", str(data), "--checkpoint", str(checkpoint),
        "--steps", str(steps), "--learning-rate", "1e-3", *NET_FLAGS,
    ])  # fmt: skip


def _tree(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_synth_writes_one_directory_per_scene(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    assert _synth(tmp_path / "data", "--n-scenes", "2") == EXIT_OK

    names = sorted(p.name for p in (tmp_path / "data" / "scene_0000").iterdir())
    assert names == ["depth.pfm", "rgb.ppm", "sparse.pfm"]
    printed = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in printed] == ["scene_0000", "scene_0001"]
    assert all(line.split()[1].isdigit() for line in printed)


def test_synth_is_byte_identical_under_seed(tmp_path: Path) -> None:
    assert _synth(tmp_path / "a", "--n-scenes", "2") == EXIT_OK
    assert _synth(tmp_path / "b", "--n-scenes", "2") == EXIT_OK
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_synth_respects_the_configured_depth_range(tmp_path: Path) -> None:
    assert (
        _synth(
            tmp_path / "data", "--n-scenes", "100", "--scene-depth-min", "2", "--scene-depth-max", "5"
        )
        == EXIT_OK
    )
    for depth_file in (tmp_path / "data").glob("scene_*/depth.pfm"):
        depth = read_pfm(depth_file)
        assert depth.min() >= np.float32(2.0)
        assert depth.max() <= np.float32(5.0)


def test_config_file_settings_and_flag_precedence(tmp_path: Path) -> None:
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# dataset\nn_scenes = 3\nheight = 16\nwidth = 16\nsparse_count = 40\n", encoding="utf-8")

    code = main(["synth", "--config", str(cfg), "--n-scenes", "1", "--out", str(tmp_path / "d")])

    assert code == EXIT_OK
    assert [p.name for p in (tmp_path / "d").iterdir()] == ["scene_0000"]


def test_sample_keeps_the_requested_count(tmp_path: Path) -> None:
    write_pfm(tmp_path / "depth.pfm", np.full((16, 16), 3.0))
    code = main([
        "sample", "--depth", str(tmp_path / "depth.pfm"), "--sparse-count", "25",
        "--out", str(tmp_path / "sparse.pfm"),
    ])  # fmt: skip
    assert code == EXIT_OK
    assert np.count_nonzero(read_pfm(tmp_path / "sparse.pfm")) == 25


def test_encode_decode_round_trip(tmp_path: Path) -> None:
    depth = np.random.default_rng(0).uniform(0.5, 9.5, size=(12, 10)).astype(np.float32)
    write_pfm(tmp_path / "depth.pfm", depth)
    files = ["--plane", str(tmp_path / "p.pgm"), "--residual", str(tmp_path / "r.pfm")]

    assert main([
        "encode", "--depth", str(tmp_path / "depth.pfm"), *files, "--strategy", "DR",
        "--num-planes", "16", "--out", str(tmp_path / "planes.txt"),
    ]) == EXIT_OK  # fmt: skip
    assert main([
        "decode", *files, "--planes-file", str(tmp_path / "planes.txt"),
        "--out", str(tmp_path / "back.pfm"),
    ]) == EXIT_OK  # fmt: skip

    back = read_pfm(tmp_path / "back.pfm").astype(np.float64)
    x = depth.astype(np.float64)
    assert np.all(np.abs(back - x) <= 1e-6 * np.maximum(1.0, x))


def test_encode_with_absolute_planes_from_flags(tmp_path: Path) -> None:
    write_pfm(tmp_path / "depth.pfm", np.array([[2.0, 7.5], [10.0, 0.0]]))

    code = main([
        "encode", "--depth", str(tmp_path / "depth.pfm"), "--plane", str(tmp_path / "p.pgm"),
        "--residual", str(tmp_path / "r.pfm"), "--strategy", "UA", "--num-planes", "2",
        "--depth-min", "0", "--depth-max", "10", "--out", str(tmp_path / "planes.txt"),
    ])  # fmt: skip

    assert code == EXIT_OK
    assert (tmp_path / "planes.txt").read_text(encoding="utf-8") == "UA 2 0.0 10.0\n"
    pr = read_pr_map(tmp_path / "p.pgm", tmp_path / "r.pfm")
    assert pr.plane.tolist() == [[1, 2], [2, 0]]
    np.testing.assert_allclose(decode(pr, read_plane_set(tmp_path / "planes.txt")), [
        [2.0, 7.5],
        [10.0, 0.0],
    ])  # fmt: skip


def test_encode_logs_disparity_planes(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    write_pfm(tmp_path / "depth.pfm", np.array([[1.0, 2.0], [3.0, 4.0]]))
    with caplog.at_level(logging.INFO, logger="prdepth"):
        code = main([
            "encode", "--depth", str(tmp_path / "depth.pfm"), "--plane", str(tmp_path / "p.pgm"),
            "--residual", str(tmp_path / "r.pfm"), "--strategy", "DR", "--num-planes", "3",
            "--out", str(tmp_path / "planes.txt"),
        ])  # fmt: skip

    assert code == EXIT_OK
    assert "planes: DR 3 1.0 1.6" in caplog.text
    assert np.all(np.diff(read_plane_set(tmp_path / "planes.txt").depths) > 0)


def test_decode_of_relative_planes_needs_an_anchor(tmp_path: Path) -> None:
    pr = encode(np.array([[1.0, 2.0]]), make_planes("UA", 2, d_min=1.0, d_max=2.0))
    write_pr_map(tmp_path / "p.pgm", tmp_path / "r.pfm", pr)
    code = main([
        "decode", "--plane", str(tmp_path / "p.pgm"), "--residual", str(tmp_path / "r.pfm"),
        "--strategy", "UR", "--out", str(tmp_path / "d.pfm"),
    ])  # fmt: skip
    assert code == EXIT_USAGE


def test_filter_writes_a_refined_volume(tmp_path: Path) -> None:
    rng = np.random.default_rng(1)
    volume = rng.normal(size=(3, 8, 8)).astype(np.float32)
    write_volume(tmp_path / "in.vol", volume, [1.0, 2.0, 3.0])
    write_pfm(tmp_path / "guide.pfm", rng.uniform(size=(8, 8)))

    code = main([
        "filter", "--volume", str(tmp_path / "in.vol"), "--guide", str(tmp_path / "guide.pfm"),
        "--filter-radius", "2", "--out", str(tmp_path / "out.vol"),
    ])  # fmt: skip

    assert code == EXIT_OK
    refined, depths = read_volume(tmp_path / "out.vol")
    assert refined.shape == (3, 8, 8)
    assert depths.tolist() == [1.0, 2.0, 3.0]


def test_train_with_zero_steps_saves_the_initial_parameters(tmp_path: Path) -> None:
    assert _synth(tmp_path / "data") == EXIT_OK
    checkpoint = tmp_path / "net.ckpt"

    assert _train(tmp_path / "data", checkpoint, 0) == EXIT_OK

    config = ToyPRNetConfig(num_planes=4, base_channels=2, encoder_depth=2, filter_radius=2)
    saved = load_checkpoint(checkpoint)
    for name, value in ToyPRNet(config).state_dict().items():
        np.testing.assert_array_equal(saved[name], value)
    log = (tmp_path / "net.csv").read_text(encoding="utf-8").splitlines()
    assert log == ["step,L_D,L_P,L_R,total,mean_confidence"]


def test_train_logs_one_row_per_step(tmp_path: Path) -> None:
    assert _synth(tmp_path / "data") == EXIT_OK
    assert _train(tmp_path / "data", tmp_path / "net.ckpt", 3) == EXIT_OK

    with (tmp_path / "net.csv").open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["step"] for row in rows] == ["0", "1", "2"]
    assert all(np.isfinite(float(row["total"])) for row in rows)


def test_divergence_exits_with_code_4(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    def diverge(*_: object, **__: object) -> None:
        msg = "training diverged at step 0: total loss nan"
        raise NonFiniteError(msg)

    monkeypatch.setattr(cli_module, "train", diverge)
    assert _synth(tmp_path / "data") == EXIT_OK

    assert _train(tmp_path / "data", tmp_path / "net.ckpt", 2) == EXIT_DIVERGED
    assert not (tmp_path / "net.ckpt").exists()
    assert (tmp_path / "net.csv").exists()


def test_loss_rows_reach_the_log_as_each_step_finishes(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    log = tmp_path / "net.csv"
    lines_seen: list[int] = []

    def diverge_after_two_steps(
        *_: object, on_step: Callable[[LossReport], None], **__: object
    ) -> None:
        for step in range(2):
            on_step(
                LossReport(
                    step=step, depth=1.0, plane=0.5, residual=0.25, total=1.6, valid_pixel_count=4
                )
            )
            lines_seen.append(len(log.read_text(encoding="utf-8").splitlines()))
        msg = "training diverged at step 2: total loss nan"
        raise NonFiniteError(msg)

    monkeypatch.setattr(cli_module, "train", diverge_after_two_steps)
    assert _synth(tmp_path / "data") == EXIT_OK

    assert _train(tmp_path / "data", tmp_path / "net.ckpt", 5) == EXIT_DIVERGED

    assert lines_seen == [2, 3]
    with log.open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["step"] for row in rows] == ["0", "1"]
    assert float(rows[1]["L_R"]) == 0.25


def test_usage_errors_exit_with_code_2(tmp_path: Path) -> None:
    assert main([]) == EXIT_USAGE
    assert main(["synth"]) == EXIT_USAGE

    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n", encoding="utf-8")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE

    with pytest.raises(SystemExit) as excinfo:
        main(["encode", "--strategy", "XX"])
    assert excinfo.value.code == EXIT_USAGE


def test_data_errors_exit_with_code_3(tmp_path: Path) -> None:
    (tmp_path / "broken.pfm").write_bytes(b"P5\n1 1\n255\n\x00")
    code = main([
        "sample", "--depth", str(tmp_path / "broken.pfm"), "--out", str(tmp_path / "s.pfm"),
    ])  # fmt: skip
    assert code == EXIT_DATA

    assert _train(tmp_path / "missing", tmp_path / "net.ckpt", 1) == EXIT_DATA


def test_infer_writes_depth_plane_and_confidence(tmp_path: Path) -> None:
    assert _synth(tmp_path / "data") == EXIT_OK
    assert _train(tmp_path / "data", tmp_path / "net.ckpt", 0) == EXIT_OK

    code = main([
        "infer", "--scene", str(tmp_path / "data" / "scene_0000"), "--out", str(tmp_path / "pred"),
        "--checkpoint", str(tmp_path / "net.ckpt"), "--volume", str(tmp_path / "logits.vol"),
        *NET_FLAGS,
    ])  # fmt: skip

    assert code == EXIT_OK
    depth = read_pfm(tmp_path / "pred" / "depth.pfm")
    plane = read_pgm(tmp_path / "pred" / "plane.pgm")
    conf = read_pfm(tmp_path / "pred" / "conf.pfm")
    assert depth.shape == plane.shape == conf.shape == (16, 16)
    assert plane.min() >= 1
    assert plane.max() <= 4
    assert np.all((conf >= np.float32(0.25) - 1e-6) & (conf <= 1.0 + 1e-6))
    assert read_volume(tmp_path / "logits.vol")[0].shape == (4, 16, 16)


def test_infer_rejects_a_checkpoint_for_another_network(tmp_path: Path) -> None:
    assert _synth(tmp_path / "data") == EXIT_OK
    assert _train(tmp_path / "data", tmp_path / "net.ckpt", 0) == EXIT_OK

    code = main([
        "infer", "--scene", str(tmp_path / "data" / "scene_0000"), "--out", str(tmp_path / "pred"),
        "--checkpoint", str(tmp_path / "net.ckpt"), "--num-planes", "8", "--base-channels", "2",
        "--encoder-depth", "2", "--filter-radius", "2",
    ])  # fmt: skip

    assert code == EXIT_DATA


def _read_report(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_eval_of_ground_truth_against_itself_is_exact(tmp_path: Path) -> None:
    assert _synth(tmp_path / "data", "--n-scenes", "3") == EXIT_OK
    report = tmp_path / "report.csv"

    code = main([
        "eval", "--data-dir", str(tmp_path / "data"), "--pred-dir", str(tmp_path / "data"),
        "--report", str(report), "--workers", "2",
    ])  # fmt: skip

    assert code == EXIT_OK
    rows = _read_report(report)
    assert [row["scene"] for row in rows] == ["scene_0000", "scene_0001", "scene_0002", "all"]
    for row in rows:
        assert float(row["rmse"]) == 0.0
        assert float(row["delta1"]) == 100.0
    assert rows[-1]["n"] == str(3 * 16 * 16)


def test_eval_matches_hand_computed_metrics(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    write_pfm(tmp_path / "gt" / "scene_0000" / "depth.pfm", np.array([[2.0, 4.0]]))
    write_pfm(tmp_path / "pred" / "scene_0000" / "depth.pfm", np.array([[1.0, 2.0]]))
    report = tmp_path / "report.csv"

    code = main([
        "eval", "--data-dir", str(tmp_path / "gt"), "--pred-dir", str(tmp_path / "pred"),
        "--report", str(report), "--inverse-unit", "km",
    ])  # fmt: skip

    assert code == EXIT_OK
    expected = evaluate(np.array([1.0, 2.0]), np.array([2.0, 4.0]))
    pooled = _read_report(report)[-1]
    assert float(pooled["mae"]) == expected.mae == 1.5
    assert float(pooled["rel"]) == expected.rel
    assert float(pooled["imae"]) == pytest.approx(1000.0 * expected.imae)
    assert "iMAE [1/km]" in capsys.readouterr().out


def test_eval_checks_every_prediction_before_starting(tmp_path: Path) -> None:
    assert _synth(tmp_path / "data", "--n-scenes", "2") == EXIT_OK
    write_pfm(tmp_path / "pred" / "scene_0000" / "depth.pfm", np.ones((16, 16)))

    code = main([
        "eval", "--data-dir", str(tmp_path / "data"), "--pred-dir", str(tmp_path / "pred"),
        "--report", str(tmp_path / "report.csv"),
    ])  # fmt: skip

    assert code == EXIT_DATA
    assert not (tmp_path / "report.csv").exists()


def test_eval_from_a_checkpoint(tmp_path: Path) -> None:
    assert _synth(tmp_path / "data") == EXIT_OK
    assert _train(tmp_path / "data", tmp_path / "net.ckpt", 0) == EXIT_OK

    code = main([
        "eval", "--data-dir", str(tmp_path / "data"), "--checkpoint", str(tmp_path / "net.ckpt"),
        "--report", str(tmp_path / "report.csv"), *NET_FLAGS,
    ])  # fmt: skip

    assert code == EXIT_OK
    pooled = _read_report(tmp_path / "report.csv")[-1]
    assert pooled["scene"] == "all"
    assert np.isfinite(float(pooled["rmse"]))


def _job(name: str, delay: float) -> Callable[[], SceneEvaluation]:
    def run() -> SceneEvaluation:
        time.sleep(delay)
        gt = np.array([2.0])
        return SceneEvaluation(name, evaluate(gt, gt), gt, gt)

    return run


@pytest.mark.asyncio
async def test_parallel_evaluation_keeps_job_order() -> None:
    jobs = [_job(f"s{i}", delay) for i, delay in enumerate([0.05, 0.0, 0.02, 0.0])]

    results = await evaluate_scenes(jobs, workers=3)

    assert [r.name for r in results] == ["s0", "s1", "s2", "s3"]


@pytest.mark.asyncio
async def test_parallel_evaluation_propagates_failures() -> None:
    def broken() -> SceneEvaluation:
        msg = "missing ground truth"
        raise FileNotFoundError(msg)

    with pytest.raises(FileNotFoundError):
        await evaluate_scenes([_job("ok", 0.0), broken], workers=1)
