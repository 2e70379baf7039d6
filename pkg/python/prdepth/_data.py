from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from typing_extensions import TypedDict, Unpack

from prdepth._errors import FormatError, InvalidArgumentError
from prdepth._io import read_pfm, read_ppm, write_pfm, write_ppm

if TYPE_CHECKING:
    import numpy.typing as npt

    from prdepth._io import Pathish
    from prdepth._planes import FloatArray

logger = logging.getLogger(__name__)

MIN_SCENE_SIZE = 16
SCENE_DIR_FORMAT = "scene_{:04d}"
RGB_FILE = "rgb.ppm"
DEPTH_FILE = "depth.pfm"
SPARSE_FILE = "sparse.pfm"

# Rectangles sit in the nearer part of the range so the background stays
# strictly behind every one of them.
_RECT_BASE_SPAN = 0.9
_RECT_MAX_SPAN = 0.95
_SLANT_SPAN = 0.05


@dataclass(frozen=True, slots=True)
class SceneParams:
    """Generator knobs for a piecewise-planar synthetic scene."""

    n_rects: int = 4
    depth_range: tuple[float, float] = (1.0, 8.0)
    slant: bool = True

    def __post_init__(self) -> None:
        lo, hi = self.depth_range
        if self.n_rects < 0:
            msg = f"n_rects must be non-negative, got {self.n_rects}"
            raise InvalidArgumentError(msg)
        if not 0 < lo < hi or not np.isfinite(hi):
            msg = f"depth range must satisfy 0 < min < max, got {self.depth_range}"
            raise InvalidArgumentError(msg)


class SceneOptions(TypedDict, total=False):
    n_rects: int
    depth_range: tuple[float, float]
    slant: bool


@dataclass(frozen=True, slots=True, eq=False)
class Scene:
    rgb: FloatArray
    depth: FloatArray
    seed: int
    params: SceneParams = field(default_factory=SceneParams)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.depth.shape[0]), int(self.depth.shape[1]))


@dataclass(frozen=True, slots=True, eq=False)
class SceneSample:
    """A scene as read back from disk, with its sparse measurement."""

    name: str
    rgb: FloatArray
    depth: FloatArray
    sparse: FloatArray


def scene_seed(base_seed: int, index: int) -> int:
    """Seed of scene ``index`` in a dataset generated from ``base_seed``."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def synth_scene(
    seed: int, height: int, width: int, params: SceneParams | None = None
) -> Scene:
    """Render a background plane with nearer, optionally slanted rectangles.

    Each region gets its own albedo, shaded by its depth, so colour edges
    line up with depth edges.
    """
    params = params or SceneParams()
    if height < MIN_SCENE_SIZE or width < MIN_SCENE_SIZE:
        msg = f"scenes must be at least {MIN_SCENE_SIZE}x{MIN_SCENE_SIZE}, got {height}x{width}"
        raise InvalidArgumentError(msg)

    rng = np.random.default_rng(seed)
    lo, hi = params.depth_range
    span = hi - lo

    depth = np.full((height, width), hi, dtype=np.float64)
    albedo = np.empty((3, height, width), dtype=np.float64)
    albedo[:] = rng.uniform(0.2, 1.0, size=3)[:, None, None]

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for _ in range(params.n_rects):
        rh = int(rng.integers(height // 8, height // 2 + 1))
        rw = int(rng.integers(width // 8, width // 2 + 1))
        y0 = int(rng.integers(0, height - rh + 1))
        x0 = int(rng.integers(0, width - rw + 1))
        base = lo + rng.uniform(0.0, _RECT_BASE_SPAN) * span
        if params.slant:
            gy, gx = rng.uniform(-_SLANT_SPAN, _SLANT_SPAN, size=2) * span
        else:
            gy = gx = 0.0
        region = (slice(y0, y0 + rh), slice(x0, x0 + rw))
        plane = base + gy * (ys[region] - y0) / rh + gx * (xs[region] - x0) / rw
        depth[region] = np.clip(plane, lo, lo + _RECT_MAX_SPAN * span)
        albedo[(slice(None), *region)] = rng.uniform(0.2, 1.0, size=3)[:, None, None]

    shade = 1.0 - 0.5 * (depth - lo) / span
    rgb = np.clip(albedo * shade[None], 0.0, 1.0)
    return Scene(rgb=rgb, depth=depth, seed=seed, params=params)


def sample_sparse(depth: npt.ArrayLike, count: int, seed: int) -> FloatArray:
    """Keep ``count`` distinct pixels chosen uniformly at random; zero the rest."""
    values = np.asarray(depth, dtype=np.float64)
    if values.ndim != 2:
        msg = f"depth must be H x W, got {values.shape}"
        raise InvalidArgumentError(msg)
    if not 0 <= count <= values.size:
        msg = f"cannot sample {count} of {values.size} pixels"
        raise InvalidArgumentError(msg)
    rng = np.random.default_rng(seed)
    picked = rng.choice(values.size, size=count, replace=False)
    sparse = np.zeros(values.size, dtype=np.float64)
    sparse[picked] = values.reshape(-1)[picked]
    return sparse.reshape(values.shape)


def rgb_to_bytes(rgb: npt.ArrayLike) -> npt.NDArray[np.uint8]:
    return np.round(np.clip(np.asarray(rgb), 0.0, 1.0) * 255).astype(np.uint8)


def write_scene(scene_dir: Pathish, scene: Scene, sparse: npt.ArrayLike) -> Path:
    out = Path(scene_dir)
    write_ppm(out / RGB_FILE, rgb_to_bytes(scene.rgb))
    write_pfm(out / DEPTH_FILE, scene.depth)
    write_pfm(out / SPARSE_FILE, sparse)
    return out


def load_scene(scene_dir: Pathish) -> SceneSample:
    src = Path(scene_dir)
    rgb, sparse = load_scene_inputs(src)
    depth = read_pfm(src / DEPTH_FILE).astype(np.float64)
    if depth.shape != sparse.shape:
        msg = f"{src}: depth {depth.shape} and sparse {sparse.shape} disagree"
        raise FormatError(msg)
    return SceneSample(name=src.name, rgb=rgb, depth=depth, sparse=sparse)


def load_scene_inputs(scene_dir: Pathish) -> tuple[FloatArray, FloatArray]:
    """``(rgb, sparse)`` of a scene; ground truth is not needed."""
    src = Path(scene_dir)
    rgb = read_ppm(src / RGB_FILE).astype(np.float64) / 255.0
    sparse = read_pfm(src / SPARSE_FILE).astype(np.float64)
    if rgb.shape[1:] != sparse.shape:
        msg = f"{src}: rgb {rgb.shape} and sparse {sparse.shape} disagree"
        raise FormatError(msg)
    return rgb, sparse


def list_scenes(data_dir: Pathish) -> list[Path]:
    root = Path(data_dir)
    if not root.is_dir():
        msg = f"dataset directory not found: {root}"
        raise FileNotFoundError(msg)
    scenes = sorted(p for p in root.glob("scene_*") if p.is_dir())
    if not scenes:
        msg = f"no scene_* directories under {root}"
        raise InvalidArgumentError(msg)
    return scenes


def write_synthetic_dataset(
    out_dir: Pathish,
    n_scenes: int,
    *,
    seed: int,
    height: int,
    width: int,
    sparse_count: int,
    **options: Unpack[SceneOptions],
) -> list[tuple[Path, int]]:
    """Generate ``n_scenes`` scenes and return ``(directory, scene seed)`` pairs."""
    params = SceneParams(**options)
    written: list[tuple[Path, int]] = []
    for index in range(n_scenes):
        sseed = scene_seed(seed, index)
        scene = synth_scene(sseed, height, width, params)
        sparse = sample_sparse(scene.depth, sparse_count, sseed)
        path = write_scene(Path(out_dir) / SCENE_DIR_FORMAT.format(index), scene, sparse)
        logger.info("wrote %s (seed %d)", path, sseed)
        written.append((path, sseed))
    return written
