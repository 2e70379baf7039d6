from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from prdepth import (
    InvalidArgumentError,
    SceneParams,
    list_scenes,
    load_scene,
    sample_sparse,
    synth_scene,
    write_scene,
    write_synthetic_dataset,
)
from prdepth._data import scene_seed

if TYPE_CHECKING:
    from pathlib import Path


def test_scene_without_rectangles_is_a_flat_background() -> None:
    scene = synth_scene(0, 16, 24, SceneParams(n_rects=0, depth_range=(2.0, 6.0)))
    assert scene.shape == (16, 24)
    np.testing.assert_array_equal(scene.depth, 6.0)


def test_scenes_are_deterministic_under_seed() -> None:
    first, second = synth_scene(42, 32, 32), synth_scene(42, 32, 32)
    np.testing.assert_array_equal(first.depth, second.depth)
    np.testing.assert_array_equal(first.rgb, second.rgb)
    assert not np.array_equal(first.depth, synth_scene(43, 32, 32).depth)


@pytest.mark.parametrize("slant", [True, False])
def test_scene_values_stay_in_range(slant: bool) -> None:
    params = SceneParams(n_rects=6, depth_range=(1.5, 9.0), slant=slant)
    for seed in range(100):
        scene = synth_scene(seed, 16, 16, params)
        assert scene.depth.min() >= 1.5
        assert scene.depth.max() <= 9.0
        assert np.all((scene.rgb >= 0.0) & (scene.rgb <= 1.0))


def test_rectangles_sit_in_front_of_the_background() -> None:
    scene = synth_scene(7, 64, 64, SceneParams(n_rects=3, depth_range=(1.0, 8.0)))
    near = scene.depth < 8.0
    assert near.any()
    assert scene.depth[near].max() <= 1.0 + 0.95 * 7.0


def test_scene_rejects_small_images_and_bad_ranges() -> None:
    with pytest.raises(InvalidArgumentError, match="at least 16x16"):
        synth_scene(0, 15, 32)
    with pytest.raises(InvalidArgumentError, match="0 < min < max"):
        SceneParams(depth_range=(3.0, 3.0))
    with pytest.raises(InvalidArgumentError, match="non-negative"):
        SceneParams(n_rects=-1)


def test_sparse_sampling_keeps_exactly_k_pixels() -> None:
    depth = synth_scene(1, 228, 304).depth
    sparse = sample_sparse(depth, 500, seed=3)

    valid = sparse > 0
    assert valid.sum() == 500
    np.testing.assert_array_equal(sparse[valid], depth[valid])
    np.testing.assert_array_equal(sample_sparse(depth, 500, seed=3), sparse)


def test_sampling_every_pixel_returns_the_input() -> None:
    depth = synth_scene(2, 16, 16).depth
    np.testing.assert_array_equal(sample_sparse(depth, depth.size, seed=0), depth)


def test_sampling_more_pixels_than_exist_fails() -> None:
    with pytest.raises(InvalidArgumentError, match="cannot sample"):
        sample_sparse(np.ones((4, 4)), 17, seed=0)


def test_scene_directory_round_trip(tmp_path: Path) -> None:
    scene = synth_scene(5, 16, 20)
    sparse = sample_sparse(scene.depth, 30, seed=5)

    write_scene(tmp_path / "scene_0000", scene, sparse)
    sample = load_scene(tmp_path / "scene_0000")

    assert sample.name == "scene_0000"
    np.testing.assert_allclose(sample.depth, scene.depth, rtol=1e-6)
    np.testing.assert_allclose(sample.sparse, sparse, rtol=1e-6)
    np.testing.assert_allclose(sample.rgb, scene.rgb, atol=0.5 / 255.0 + 1e-12)


def test_synthetic_dataset_layout_and_seeds(tmp_path: Path) -> None:
    written = write_synthetic_dataset(
        tmp_path, 3, seed=11, height=16, width=16, sparse_count=20, n_rects=2
    )

    assert [path.name for path, _ in written] == ["scene_0000", "scene_0001", "scene_0002"]
    assert [s for _, s in written] == [scene_seed(11, i) for i in range(3)]
    assert len({s for _, s in written}) == 3
    assert list_scenes(tmp_path) == [path for path, _ in written]
    for path, _ in written:
        assert sorted(p.name for p in path.iterdir()) == ["depth.pfm", "rgb.ppm", "sparse.pfm"]


def test_list_scenes_reports_missing_data(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        list_scenes(tmp_path / "nope")
    with pytest.raises(InvalidArgumentError, match="no scene_"):
        list_scenes(tmp_path)
