"""Toy-scale dual-decoder plane-residual network and its training loop.

Layout (``E = encoder_depth``, ``C = base_channels``)::

    rgb ──conv─┐
    mask ─conv─┼─concat─ enc0 ─ enc1 (/2) ─ ... ─ encE (/2^E)
    res ──conv─┘                                   │
          decoder P: deconv x2, + encoder skip ────┤──> D logits
          decoder R: deconv x2, + decoder P feature ┘──> residual (tanh / 2)
    rgb ─ conv ─ conv ─> guidance (D channels)

The refined logits are the guided-filtered logits (or the logits themselves
with filtering off); depth follows from the refined probabilities and the
residual at the argmax plane.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Self

from prdepth._diffcore import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    concat_channels,
    conv2d,
    deconv2d,
    parameter,
    relu,
    scaled_tanh,
)
from prdepth._errors import InvalidArgumentError, NonFiniteError
from prdepth._losses import (
    DEFAULT_PLANE_WEIGHT,
    LossReport,
    depth_loss,
    plane_ce_loss,
    residual_loss,
    total_loss,
)
from prdepth._planes import (
    DepthPlaneSet,
    PlaneStrategy,
    encode,
    make_planes,
    sparse_to_network_input,
    step_lengths,
)
from prdepth._volume import (
    DEFAULT_FILTER_EPS,
    DEFAULT_FILTER_RADIUS,
    argmax_plane,
    confidence,
    guided_filter_tensor,
    reconstruct_depth_tensor,
    softmax_volume,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping, Sequence

    from prdepth._diffcore import Array, Padding, TensorLike
    from prdepth._planes import FloatArray, LabelArray

logger = logging.getLogger(__name__)

OptimizerName = Literal["sgd", "adam"]
ResidualTarget = Literal["reconstruction", "encoded"]
TrainingExample = tuple[npt.ArrayLike, npt.ArrayLike, npt.ArrayLike]
"""``(rgb 3 x H x W, sparse H x W, ground-truth depth H x W)``."""


class ToyPRNetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_planes: int = Field(default=8, ge=2)
    base_channels: int = Field(default=16, ge=1)
    encoder_depth: int = Field(default=3, ge=1)
    filter_radius: int = Field(default=DEFAULT_FILTER_RADIUS, ge=1)
    filter_eps: float = Field(default=DEFAULT_FILTER_EPS, gt=0)
    plane_weight: float = Field(default=DEFAULT_PLANE_WEIGHT, ge=0)
    use_filter: bool = True
    use_confidence: bool = True
    strategy: PlaneStrategy = "UR"
    depth_min: float | None = None
    depth_max: float | None = None
    residual_target: ResidualTarget = "reconstruction"
    """Supervise the residual against the soft reconstruction or the encoded map."""
    seed: int = 0

    @model_validator(mode="after")
    def _check_anchors(self) -> Self:
        if self.strategy in {"UA", "DA"} and (self.depth_min is None or self.depth_max is None):
            msg = f"{self.strategy} planes need depth_min and depth_max"
            raise ValueError(msg)
        return self

    @property
    def size_multiple(self) -> int:
        return 2**self.encoder_depth

    def planes_for(self, sparse: npt.ArrayLike) -> DepthPlaneSet:
        """Plane set for one image; relative strategies anchor on ``sparse``."""
        return make_planes(
            self.strategy,
            self.num_planes,
            d_min=self.depth_min,
            d_max=self.depth_max,
            sparse=sparse,
        )


class TrainOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(default=500, ge=0)
    learning_rate: float = Field(default=5e-2, ge=0)
    optimizer: OptimizerName = "sgd"
    weight_decay: float = Field(default=0.0, ge=0)
    decay_every: int = Field(default=0, ge=0)
    """Multiply the learning rate by ``decay_factor`` every N steps; 0 disables."""
    decay_factor: float = Field(default=0.2, gt=0, le=1)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(default=1e-8, gt=0)
    log_every: int = Field(default=50, ge=1)

    def learning_rate_at(self, step: int) -> float:
        if self.decay_every == 0:
            return self.learning_rate
        return self.learning_rate * self.decay_factor ** (step // self.decay_every)


def _layer_shapes(config: ToyPRNetConfig) -> dict[str, tuple[int, ...]]:
    c, d, depth = config.base_channels, config.num_planes, config.encoder_depth
    shapes: dict[str, tuple[int, ...]] = {
        "stem_rgb.w": (c, 3, 3, 3),
        "stem_plane.w": (c, d, 3, 3),
        "stem_residual.w": (c, 1, 3, 3),
        "enc0.w": (c, 3 * c, 3, 3),
    }
    for i in range(1, depth + 1):
        shapes[f"enc{i}.w"] = (c * 2**i, c * 2 ** (i - 1), 3, 3)
    for branch in ("dec_p", "dec_r"):
        for i in range(depth, 0, -1):
            # Transposed convolutions store C_in x C_out x k x k.
            shapes[f"{branch}{i}.w"] = (c * 2**i, c * 2 ** (i - 1), 4, 4)
    shapes["head_p.w"] = (d, c, 3, 3)
    shapes["head_r.w"] = (1, c, 3, 3)
    shapes["guide0.w"] = (d, 3, 3, 3)
    shapes["guide1.w"] = (d, d, 3, 3)

    with_bias: dict[str, tuple[int, ...]] = {}
    for name, shape in shapes.items():
        layer = name.removesuffix(".w")
        with_bias[name] = shape
        out_channels = shape[1] if layer.startswith("dec_") else shape[0]
        with_bias[f"{layer}.b"] = (out_channels,)
    return with_bias


def init_params(config: ToyPRNetConfig) -> dict[str, Array]:
    """Xavier-uniform weights and zero biases, drawn from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, Array] = {}
    for name, shape in _layer_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        receptive = shape[2] * shape[3]
        bound = math.sqrt(6.0 / ((shape[0] + shape[1]) * receptive))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def parameter_count(params: Mapping[str, TensorLike]) -> int:
    return sum(as_tensor(v).size for v in params.values())


@dataclass(frozen=True, slots=True)
class ForwardOutputs:
    logits: Tensor
    refined_logits: Tensor
    residual: Tensor
    guidance: Tensor
    depth: Tensor


class ToyPRNet:
    """Parameters plus the forward pass of the dual-decoder network."""

    def __init__(
        self, config: ToyPRNetConfig, params: Mapping[str, npt.ArrayLike] | None = None
    ) -> None:
        self.config = config
        expected = _layer_shapes(config)
        values = init_params(config) if params is None else dict(params)
        missing = expected.keys() - values.keys()
        unexpected = values.keys() - expected.keys()
        if missing or unexpected:
            msg = (
                "parameters do not match the network configuration "
                f"(missing {sorted(missing)}, unexpected {sorted(unexpected)})"
            )
            raise InvalidArgumentError(msg)
        self.params: dict[str, Tensor] = {}
        for name, shape in expected.items():
            value = np.asarray(values[name], dtype=np.float64)
            if value.shape != shape:
                msg = f"parameter {name!r} has shape {value.shape}, expected {shape}"
                raise InvalidArgumentError(msg)
            self.params[name] = parameter(value, name)

    @property
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def _conv(
        self, x: Tensor, layer: str, *, stride: int = 1, padding: Padding = 1
    ) -> Tensor:
        weight, bias = self.params[f"{layer}.w"], self.params[f"{layer}.b"]
        return conv2d(x, weight, bias, stride=stride, padding=padding)

    def _deconv(self, x: Tensor, layer: str) -> Tensor:
        return deconv2d(
            x, self.params[f"{layer}.w"], self.params[f"{layer}.b"], stride=2, padding=1
        )

    def _check_inputs(self, rgb: Tensor, sparse_input: Tensor, planes: DepthPlaneSet) -> None:
        cfg = self.config
        if rgb.ndim != 3 or rgb.shape[0] != 3:
            msg = f"rgb must be 3 x H x W, got {rgb.shape}"
            raise InvalidArgumentError(msg)
        height, width = rgb.shape[1:]
        if sparse_input.shape != (cfg.num_planes + 1, height, width):
            msg = (
                f"sparse input must be {cfg.num_planes + 1} x {height} x {width}, "
                f"got {sparse_input.shape}"
            )
            raise InvalidArgumentError(msg)
        if height % cfg.size_multiple or width % cfg.size_multiple:
            msg = f"image size {height}x{width} is not divisible by {cfg.size_multiple}"
            raise InvalidArgumentError(msg)
        if planes.count != cfg.num_planes:
            msg = f"plane set has {planes.count} planes, network expects {cfg.num_planes}"
            raise InvalidArgumentError(msg)

    def forward(
        self, rgb: TensorLike, sparse_input: TensorLike, planes: DepthPlaneSet
    ) -> ForwardOutputs:
        """Run the network on one image.

        ``sparse_input`` is the D-channel plane mask stacked on the residual
        map, as built by :func:`network_input`.
        """
        cfg = self.config
        image, sparse = as_tensor(rgb), as_tensor(sparse_input)
        self._check_inputs(image, sparse, planes)
        d = cfg.num_planes

        stems = concat_channels([
            relu(self._conv(image, "stem_rgb")),
            relu(self._conv(as_tensor(sparse.data[:d]), "stem_plane")),
            relu(self._conv(as_tensor(sparse.data[d:]), "stem_residual")),
        ])
        skips = [relu(self._conv(stems, "enc0"))]
        for i in range(1, cfg.encoder_depth + 1):
            skips.append(relu(self._conv(skips[-1], f"enc{i}", stride=2, padding=(0, 1))))

        feat_p = feat_r = skips[-1]
        for i in range(cfg.encoder_depth, 0, -1):
            feat_p = relu(self._deconv(feat_p, f"dec_p{i}")) + skips[i - 1]
            feat_r = relu(self._deconv(feat_r, f"dec_r{i}")) + feat_p

        logits = self._conv(feat_p, "head_p")
        residual = scaled_tanh(self._conv(feat_r, "head_r"))
        guidance = self._conv(relu(self._conv(image, "guide0")), "guide1")
        if cfg.use_filter:
            refined = guided_filter_tensor(
                logits, guidance, radius=cfg.filter_radius, eps=cfg.filter_eps
            )
        else:
            refined = logits
        depth = reconstruct_depth_tensor(refined, residual, planes)
        return ForwardOutputs(logits, refined, residual, guidance, depth)


def network_input(sparse: npt.ArrayLike, planes: DepthPlaneSet) -> FloatArray:
    """Stack the plane mask and residual map into one (D+1) x H x W input."""
    plane_mask, residual = sparse_to_network_input(sparse, planes)
    return np.concatenate([plane_mask, residual])


class SGD:
    def __init__(self, params: Sequence[Tensor], *, weight_decay: float = 0.0) -> None:
        self.params = list(params)
        self.weight_decay = weight_decay

    def step(self, lr: float) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            p.data -= lr * (p.grad + self.weight_decay * p.data)


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        *,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self, lr: float) -> None:
        self._t += 1
        b1, b2 = self.betas
        for p, m, v in zip(self.params, self._m, self._v, strict=True):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self._t)
            v_hat = v / (1 - b2**self._t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(options: TrainOptions, params: Sequence[Tensor]) -> SGD | Adam:
    if options.optimizer == "adam":
        return Adam(
            params,
            betas=options.adam_betas,
            eps=options.adam_eps,
            weight_decay=options.weight_decay,
        )
    return SGD(params, weight_decay=options.weight_decay)


@dataclass(frozen=True, slots=True, eq=False)
class _PreparedExample:
    rgb: FloatArray
    sparse_input: FloatArray
    depth: FloatArray
    plane: LabelArray
    residual: FloatArray
    mask: npt.NDArray[np.bool_]
    planes: DepthPlaneSet


def _prepare(
    examples: Iterable[TrainingExample], config: ToyPRNetConfig
) -> list[_PreparedExample]:
    prepared: list[_PreparedExample] = []
    shape: tuple[int, ...] | None = None
    for rgb, sparse, gt in examples:
        gt_depth = np.asarray(gt, dtype=np.float64)
        if shape is None:
            shape = gt_depth.shape
        elif gt_depth.shape != shape:
            msg = f"all training images must share one size, got {shape} and {gt_depth.shape}"
            raise InvalidArgumentError(msg)
        planes = config.planes_for(sparse)
        pr = encode(gt_depth, planes)
        if not pr.valid.any():
            msg = "training example has no valid ground-truth pixels"
            raise InvalidArgumentError(msg)
        prepared.append(
            _PreparedExample(
                rgb=np.asarray(rgb, dtype=np.float64),
                sparse_input=network_input(sparse, planes),
                depth=gt_depth,
                plane=pr.plane,
                residual=pr.residual,
                mask=pr.valid,
                planes=planes,
            )
        )
    if not prepared:
        msg = "training needs at least one example"
        raise InvalidArgumentError(msg)
    return prepared


@dataclass(frozen=True, slots=True, eq=False)
class ResidualSupervision:
    """Target and per-pixel weight of the residual loss, both without gradient."""

    target: FloatArray
    weight: FloatArray


def soft_residual_target(
    probs: npt.ArrayLike, depth: npt.ArrayLike, planes: DepthPlaneSet, valid: npt.ArrayLike
) -> FloatArray:
    """Residual that moves the soft reconstruction of ``probs`` onto ``depth``.

    The gap to the probability-weighted plane depth is measured in steps of
    the argmax plane, then clipped to ``[-0.5, 0.5]``. Invalid pixels get 0.
    """
    values = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(valid, dtype=bool)
    expected = np.tensordot(planes.depths, values, axes=(0, 0))
    gap = np.where(mask, np.asarray(depth, dtype=np.float64) - expected, 0.0)
    steps = step_lengths(planes, argmax_plane(values), gap)
    return np.clip(gap / steps, -0.5, 0.5)


def residual_supervision(
    config: ToyPRNetConfig, refined_logits: npt.ArrayLike, example: _PreparedExample
) -> ResidualSupervision:
    """Residual target and confidence weight from the current refined logits."""
    probs = softmax_volume(refined_logits)
    if config.residual_target == "reconstruction":
        target = soft_residual_target(probs, example.depth, example.planes, example.mask)
    else:
        target = example.residual
    weight = confidence(probs) if config.use_confidence else np.ones(example.depth.shape)
    return ResidualSupervision(target=target, weight=weight)


def training_loss(
    net: ToyPRNet,
    example: _PreparedExample,
    *,
    step: int = 0,
    supervision: ResidualSupervision | None = None,
) -> tuple[Tensor, LossReport]:
    """Total loss of one example; records on the active tape if any.

    ``supervision`` pins the residual target and weight; by default they
    follow this forward pass.
    """
    cfg = net.config
    out = net.forward(example.rgb, example.sparse_input, example.planes)
    if supervision is None:
        supervision = residual_supervision(cfg, out.refined_logits.data, example)
    l_d = depth_loss(out.depth, example.depth, example.mask)
    l_p = plane_ce_loss(
        out.logits, out.refined_logits, example.plane, example.mask, cfg.plane_weight
    )
    l_r = residual_loss(out.residual, supervision.target, supervision.weight, example.mask)
    return total_loss(
        l_d,
        l_p,
        l_r,
        num_planes=cfg.num_planes,
        valid_pixel_count=int(example.mask.sum()),
        mean_confidence=float(supervision.weight[example.mask].mean()),
        step=step,
    )


@dataclass(frozen=True, slots=True, eq=False)
class TrainResult:
    net: ToyPRNet
    reports: list[LossReport]


def train(
    dataset: Sequence[TrainingExample],
    config: ToyPRNetConfig,
    options: TrainOptions | None = None,
    *,
    net: ToyPRNet | None = None,
    on_step: Callable[[LossReport], None] | None = None,
) -> TrainResult:
    """Minimize the total loss, one example per step in dataset order.

    Each report holds the losses evaluated before that step's update.
    Raises :class:`NonFiniteError` as soon as the loss or a gradient stops
    being finite.
    """
    options = options or TrainOptions()
    net = net or ToyPRNet(config)
    examples = _prepare(dataset, config)
    optimizer = make_optimizer(options, net.parameters)
    logger.info(
        "training %d parameters on %d example(s) for %d steps (%s, lr=%g)",
        parameter_count(net.params),
        len(examples),
        options.steps,
        options.optimizer,
        options.learning_rate,
    )

    reports: list[LossReport] = []
    for step in range(options.steps):
        for p in net.parameters:
            p.zero_grad()
        with Tape() as tape:
            loss, report = training_loss(net, examples[step % len(examples)], step=step)
        if not report.is_finite():
            msg = f"training diverged at step {step}: total loss {report.total}"
            raise NonFiniteError(msg)
        backward(tape, loss)
        for p in net.parameters:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                msg = f"training diverged at step {step}: non-finite gradient in {p.name}"
                raise NonFiniteError(msg)
        optimizer.step(options.learning_rate_at(step))

        reports.append(report)
        if on_step is not None:
            on_step(report)
        logger.debug(
            "step %d: L_D=%.6g L_P=%.6g L_R=%.6g total=%.6g",
            step,
            report.depth,
            report.plane,
            report.residual,
            report.total,
        )
        if (step + 1) % options.log_every == 0 or step + 1 == options.steps:
            logger.info("step %d/%d: total loss %.6g", step + 1, options.steps, report.total)
    return TrainResult(net=net, reports=reports)


@dataclass(frozen=True, slots=True, eq=False)
class InferenceResult:
    depth: FloatArray
    plane: LabelArray
    confidence: FloatArray
    refined_logits: FloatArray
    planes: DepthPlaneSet


def infer(
    rgb: npt.ArrayLike,
    sparse: npt.ArrayLike,
    params: ToyPRNet | Mapping[str, npt.ArrayLike],
    config: ToyPRNetConfig | None = None,
) -> InferenceResult:
    """Dense depth, argmax plane map and confidence map for one image."""
    if isinstance(params, ToyPRNet):
        net = params
    else:
        if config is None:
            msg = "a configuration is required to load raw parameters"
            raise InvalidArgumentError(msg)
        net = ToyPRNet(config, params)
    planes = net.config.planes_for(sparse)
    out = net.forward(rgb, network_input(sparse, planes), planes)
    probs = softmax_volume(out.refined_logits.data)
    return InferenceResult(
        depth=out.depth.data,
        plane=argmax_plane(probs),
        confidence=confidence(probs),
        refined_logits=out.refined_logits.data,
        planes=planes,
    )
