from __future__ import annotations

import argparse
import asyncio
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, get_args

import numpy as np

from prdepth._config import LogLevel, RunConfig, load_run_config
from prdepth._data import (
    DEPTH_FILE,
    list_scenes,
    load_scene,
    load_scene_inputs,
    sample_sparse,
    write_synthetic_dataset,
)
from prdepth._errors import ConfigError, FormatError, InvalidArgumentError, NonFiniteError
from prdepth._io import (
    format_plane_set,
    load_checkpoint,
    read_pfm,
    read_plane_set,
    read_ppm,
    read_pr_map,
    read_volume,
    save_checkpoint,
    write_pfm,
    write_pgm,
    write_plane_set,
    write_pr_map,
    write_volume,
)
from prdepth._losses import append_loss_row, start_loss_log
from prdepth._metrics import InverseUnit, MetricsReport, evaluate
from prdepth._network import ResidualTarget, ToyPRNet, infer, parameter_count, train
from prdepth._planes import PlaneStrategy, decode, encode, make_planes
from prdepth._volume import guided_filter

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy.typing as npt

    from prdepth._losses import LossReport
    from prdepth._planes import DepthPlaneSet, FloatArray

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

PLANE_FILE = "plane.pgm"
CONFIDENCE_FILE = "conf.pfm"
POOLED_ROW = "all"


def _planes_from(config: RunConfig, anchor: npt.ArrayLike | None) -> DepthPlaneSet:
    if config.planes_file is not None:
        return read_plane_set(config.planes_file)
    if config.strategy in {"UR", "DR"} and anchor is None:
        msg = f"{config.strategy} planes need --planes-file or a --sparse anchor"
        raise ConfigError(msg)
    return make_planes(
        config.strategy,
        config.num_planes,
        d_min=config.depth_min,
        d_max=config.depth_max,
        sparse=anchor,
    )


def cmd_synth(config: RunConfig) -> int:
    out: Path = config.require("out")
    params = config.scene_params()
    written = write_synthetic_dataset(
        out,
        config.n_scenes,
        seed=config.seed,
        height=config.height,
        width=config.width,
        sparse_count=config.sparse_count,
        n_rects=params.n_rects,
        depth_range=params.depth_range,
        slant=params.slant,
    )
    for path, seed in written:
        print(f"{path.name} {seed}")  # ruff:ignore[print]
    return EXIT_OK


def cmd_sample(config: RunConfig) -> int:
    depth = read_pfm(config.require("depth"))
    write_pfm(config.require("out"), sample_sparse(depth, config.sparse_count, config.seed))
    return EXIT_OK


def cmd_encode(config: RunConfig) -> int:
    depth_path: Path = config.require("depth")
    plane_path: Path = config.require("plane")
    residual_path: Path = config.require("residual")
    depth = read_pfm(depth_path)
    anchor = read_pfm(config.sparse) if config.sparse is not None else depth
    planes = _planes_from(config, anchor)
    logger.info("planes: %s", format_plane_set(planes))
    pr = encode(depth, planes)
    write_pr_map(plane_path, residual_path, pr)
    if config.out is not None:
        write_plane_set(config.out, planes)
    logger.info("encoded %s (%d clamped)", depth_path, pr.clamped)
    return EXIT_OK


def cmd_decode(config: RunConfig) -> int:
    pr = read_pr_map(config.require("plane"), config.require("residual"))
    anchor = read_pfm(config.sparse) if config.sparse is not None else None
    planes = _planes_from(config, anchor)
    write_pfm(config.require("out"), decode(pr, planes))
    return EXIT_OK


def _read_guide(path: Path, shape: tuple[int, ...]) -> FloatArray:
    """A D x H x W guide from an RGB image, a grey PFM or a volume."""
    if path.suffix == ".ppm":
        grey = read_ppm(path).astype(np.float64).mean(axis=0) / 255.0
    elif path.suffix == ".pfm":
        image = read_pfm(path).astype(np.float64)
        grey = image if image.ndim == 2 else image.mean(axis=0)
    else:
        return read_volume(path)[0].astype(np.float64)
    if grey.shape != shape[1:]:
        msg = f"guide {grey.shape} does not match volume size {shape[1:]}"
        raise FormatError(msg)
    return np.broadcast_to(grey, shape).copy()


def cmd_filter(config: RunConfig) -> int:
    volume, depths = read_volume(config.require("volume"))
    guide = _read_guide(config.require("guide"), volume.shape)
    refined = guided_filter(
        volume, guide, radius=config.filter_radius, eps=config.filter_eps
    )
    write_volume(config.require("out"), refined, depths)
    return EXIT_OK


def cmd_train(config: RunConfig) -> int:
    data_dir: Path = config.require("data_dir")
    checkpoint: Path = config.require("checkpoint")
    loss_log = config.loss_log or checkpoint.with_suffix(".csv")
    loss_log.parent.mkdir(parents=True, exist_ok=True)
    scenes = [load_scene(path) for path in list_scenes(data_dir)]
    net_config = config.network_config()
    net = ToyPRNet(net_config)
    logger.info("network has %d parameters", parameter_count(net.params))

    start_loss_log(loss_log)
    logged: list[int] = []

    def record(report: LossReport) -> None:
        append_loss_row(loss_log, report)
        logged.append(report.step)

    try:
        train(
            [(s.rgb, s.sparse, s.depth) for s in scenes],
            net_config,
            config.train_options(),
            net=net,
            on_step=record,
        )
    finally:
        logger.info("wrote %s (%d steps)", loss_log, len(logged))
    save_checkpoint(checkpoint, net.state_dict())
    return EXIT_OK


def _load_net(config: RunConfig) -> ToyPRNet:
    return ToyPRNet(config.network_config(), load_checkpoint(config.require("checkpoint")))


def cmd_infer(config: RunConfig) -> int:
    net = _load_net(config)
    out: Path = config.require("out")
    rgb, sparse = load_scene_inputs(config.require("scene"))
    result = infer(rgb, sparse, net)
    write_pfm(out / DEPTH_FILE, result.depth)
    write_pgm(out / PLANE_FILE, result.plane, maxval=65535)
    write_pfm(out / CONFIDENCE_FILE, result.confidence)
    if config.volume is not None:
        write_volume(config.volume, result.refined_logits, result.planes.depths)
    logger.info("wrote predictions to %s", out)
    return EXIT_OK


@dataclass(frozen=True, slots=True, eq=False)
class SceneEvaluation:
    name: str
    report: MetricsReport
    pred: FloatArray
    gt: FloatArray


def _scene_job(
    scene_dir: Path, predict: Callable[[Path], FloatArray]
) -> Callable[[], SceneEvaluation]:
    def run() -> SceneEvaluation:
        gt = read_pfm(scene_dir / DEPTH_FILE).astype(np.float64)
        pred = np.asarray(predict(scene_dir), dtype=np.float64)
        if pred.shape != gt.shape:
            msg = f"{scene_dir.name}: prediction {pred.shape} != ground truth {gt.shape}"
            raise FormatError(msg)
        mask = np.isfinite(gt) & (gt > 0)
        return SceneEvaluation(scene_dir.name, evaluate(pred, gt, mask), pred[mask], gt[mask])

    return run


async def evaluate_scenes(
    jobs: Sequence[Callable[[], SceneEvaluation]], *, workers: int
) -> list[SceneEvaluation]:
    """Run scene evaluations in worker threads; results keep job order."""
    limit = asyncio.Semaphore(workers)

    async def run(job: Callable[[], SceneEvaluation]) -> SceneEvaluation:
        async with limit:
            return await asyncio.to_thread(job)

    return list(await asyncio.gather(*(run(job) for job in jobs)))


def write_eval_report(
    path: Path, results: Sequence[SceneEvaluation], *, inverse_unit: InverseUnit
) -> MetricsReport:
    """One CSV row per scene plus a row pooled over every evaluated pixel."""
    pooled = evaluate(
        np.concatenate([r.pred for r in results]), np.concatenate([r.gt for r in results])
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scene", *MetricsReport.CSV_HEADER))
        for r in results:
            writer.writerow((r.name, *r.report.csv_row(inverse_unit=inverse_unit)))
        writer.writerow((POOLED_ROW, *pooled.csv_row(inverse_unit=inverse_unit)))
    return pooled


def cmd_eval(config: RunConfig) -> int:
    report_path: Path = config.require("report")
    scenes = list_scenes(config.require("data_dir"))
    for scene in scenes:
        if not (scene / DEPTH_FILE).is_file():
            msg = f"missing ground truth {scene / DEPTH_FILE}"
            raise FileNotFoundError(msg)

    predict: Callable[[Path], FloatArray]
    if config.checkpoint is not None:
        net = _load_net(config)

        def from_checkpoint(scene_dir: Path) -> FloatArray:
            rgb, sparse = load_scene_inputs(scene_dir)
            return infer(rgb, sparse, net).depth

        predict = from_checkpoint
    else:
        pred_dir: Path = config.require("pred_dir")
        for scene in scenes:
            if not (pred_dir / scene.name / DEPTH_FILE).is_file():
                msg = f"missing prediction {pred_dir / scene.name / DEPTH_FILE}"
                raise FileNotFoundError(msg)

        def from_files(scene_dir: Path) -> FloatArray:
            return read_pfm(pred_dir / scene_dir.name / DEPTH_FILE).astype(np.float64)

        predict = from_files

    jobs = [_scene_job(scene, predict) for scene in scenes]
    results = asyncio.run(evaluate_scenes(jobs, workers=config.workers))
    pooled = write_eval_report(report_path, results, inverse_unit=config.inverse_unit)
    logger.info("wrote %s (%d scenes)", report_path, len(results))
    print(pooled.format_table(inverse_unit=config.inverse_unit))  # ruff:ignore[print]
    return EXIT_OK


def _add_plane_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=get_args(PlaneStrategy))
    p.add_argument("--num-planes", type=int)
    p.add_argument("--depth-min", type=float, help="first plane for UA/DA planes")
    p.add_argument("--depth-max", type=float, help="last plane for UA/DA planes")
    p.add_argument("--planes-file", type=Path, help="plane set written by encode --out")
    p.add_argument("--sparse", type=Path, help="sparse PFM anchoring UR/DR planes")


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=get_args(PlaneStrategy))
    p.add_argument("--num-planes", type=int)
    p.add_argument("--depth-min", type=float)
    p.add_argument("--depth-max", type=float)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--encoder-depth", type=int)
    p.add_argument("--filter-radius", type=int)
    p.add_argument("--filter-eps", type=float)
    p.add_argument("--plane-weight", type=float, help="weight of the initial-logit CE term")
    p.add_argument("--use-filter", action=argparse.BooleanOptionalAction)
    p.add_argument("--use-confidence", action=argparse.BooleanOptionalAction)
    p.add_argument("--residual-target", choices=get_args(ResidualTarget))
    p.add_argument("--checkpoint", type=Path)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value configuration file")
    common.add_argument("--seed", type=int)

    parser = argparse.ArgumentParser(
        prog="prdepth", description="Plane-residual depth completion toolkit."
    )
    parser.add_argument("--log-level", choices=get_args(LogLevel), default="INFO")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, help="dataset directory")
    p.add_argument("--n-scenes", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-rects", type=int)
    p.add_argument("--scene-depth-min", type=float)
    p.add_argument("--scene-depth-max", type=float)
    p.add_argument("--slant", action=argparse.BooleanOptionalAction)
    p.add_argument("--sparse-count", type=int)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("sample", parents=[common], help="sample sparse depth from a PFM")
    p.add_argument("--depth", type=Path)
    p.add_argument("--sparse-count", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("encode", parents=[common], help="depth PFM to plane/residual maps")
    p.add_argument("--depth", type=Path)
    p.add_argument("--plane", type=Path, help="output 16-bit PGM of plane labels")
    p.add_argument("--residual", type=Path, help="output PFM of residuals")
    p.add_argument("--out", type=Path, help="optional output plane-set file")
    _add_plane_flags(p)
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="plane/residual maps to depth PFM")
    p.add_argument("--plane", type=Path)
    p.add_argument("--residual", type=Path)
    p.add_argument("--out", type=Path)
    _add_plane_flags(p)
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("filter", parents=[common], help="guided-filter a logit volume")
    p.add_argument("--volume", type=Path)
    p.add_argument("--guide", type=Path, help="PPM, grey PFM or volume")
    p.add_argument("--filter-radius", type=int)
    p.add_argument("--filter-eps", type=float)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_filter)

    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--loss-log", type=Path)
    p.add_argument("--steps", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--decay-every", type=int)
    p.add_argument("--decay-factor", type=float)
    p.add_argument("--log-every", type=int)
    _add_network_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="predict depth for one scene")
    p.add_argument("--scene", type=Path)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--volume", type=Path, help="also write the refined logit volume")
    _add_network_flags(p)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="evaluate predictions")
    p.add_argument("--data-dir", type=Path, help="dataset with ground truth")
    p.add_argument("--pred-dir", type=Path, help="predictions in the dataset layout")
    p.add_argument("--report", type=Path)
    p.add_argument("--inverse-unit", choices=get_args(InverseUnit))
    p.add_argument("--workers", type=int)
    _add_network_flags(p)
    p.set_defaults(handler=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    handler: Callable[[RunConfig], int] = args.handler
    overrides = {k: v for k, v in vars(args).items() if k in RunConfig.model_fields}
    try:
        config = load_run_config(args.config, overrides)
        return handler(config)
    except ConfigError as exc:
        logger.error("%s", exc)  # ruff:ignore[error-instead-of-exception]
        return EXIT_USAGE
    except NonFiniteError as exc:
        logger.error("%s", exc)  # ruff:ignore[error-instead-of-exception]
        return EXIT_DIVERGED
    except (FormatError, InvalidArgumentError, OSError) as exc:
        logger.error("%s", exc)  # ruff:ignore[error-instead-of-exception]
        return EXIT_DATA
