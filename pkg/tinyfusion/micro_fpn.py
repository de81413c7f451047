"""A small linear FPN with hand-written forward and backward passes.

Top-down fusion follows the usual FPN wiring, with a fusion factor on the
deeper branch::

    P'_5 = inner_5(C_5)
    P'_i = inner_i(C_i) + alpha_i * upsample2x(P'_{i+1})     i = 4, 3, 2
    P_i  = layer_i(P'_i)                                      i = 2..5
    P_6  = P_5[:, ::2, ::2]

``inner_i`` is a 1x1 projection, ``layer_i`` a 3x3 convolution (stride 1, zero
padding 1). There are no biases and no nonlinearities, so every output is
linear in the inputs and homogeneous in each weight tensor.

Feature maps are ``(channels, height, width)`` float64 arrays. All contractions
go through ``np.einsum`` without path optimisation so results are bitwise
reproducible.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DomainError, ShapeError
from .fusion_factor import FusionFactors

logger = logging.getLogger(__name__)

BACKBONE_LEVELS = (2, 3, 4, 5)
OUTPUT_LEVELS = (2, 3, 4, 5, 6)
INIT_RANGE = 0.1
LOSS_KINDS = ("quadratic", "linear")


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(f"Feature map must be (channels, height, width), got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape


MapLike = Union[FeatureMap, np.ndarray]
Inputs = Union[Mapping[int, MapLike], Sequence[MapLike]]


def _as_array(x: MapLike) -> np.ndarray:
    return x.data if isinstance(x, FeatureMap) else np.asarray(x, dtype=np.float64)


def _inputs_dict(inputs: Inputs) -> Dict[int, np.ndarray]:
    if isinstance(inputs, Mapping):
        missing = [level for level in BACKBONE_LEVELS if level not in inputs]
        if missing:
            raise ShapeError(f"Missing backbone input C{missing[0]}", level=missing[0])
        return {level: _as_array(inputs[level]) for level in BACKBONE_LEVELS}
    inputs = list(inputs)
    if len(inputs) != len(BACKBONE_LEVELS):
        raise ShapeError(f"Expected {len(BACKBONE_LEVELS)} backbone inputs C2..C5, got {len(inputs)}")
    return {level: _as_array(x) for level, x in zip(BACKBONE_LEVELS, inputs)}


@dataclass
class FpnParams:
    inner: Dict[int, np.ndarray]
    layer: Dict[int, np.ndarray]

    def __post_init__(self):
        for level in BACKBONE_LEVELS:
            if level not in self.inner or level not in self.layer:
                raise ShapeError(f"Missing weights for level {level}", level=level)
            inner = np.asarray(self.inner[level], dtype=np.float64)
            layer = np.asarray(self.layer[level], dtype=np.float64)
            if inner.ndim != 2:
                raise ShapeError(f"inner weights of level {level} must be (out, in)", level=level)
            out_ch = inner.shape[0]
            if layer.shape != (out_ch, out_ch, 3, 3):
                raise ShapeError(f"layer weights of level {level} must be {(out_ch, out_ch, 3, 3)},"
                                 f" got {layer.shape}", level=level)
            if not (np.all(np.isfinite(inner)) and np.all(np.isfinite(layer))):
                raise DomainError(f"Non-finite weights at level {level}")
            self.inner[level] = inner
            self.layer[level] = layer
        out_channels = {self.inner[level].shape[0] for level in BACKBONE_LEVELS}
        if len(out_channels) != 1:
            raise ShapeError(f"All levels must share one output width, got {sorted(out_channels)}")

    @classmethod
    def random(cls, in_channels: Union[int, Mapping[int, int]], out_channels: int,
               seed: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> "FpnParams":
        rng = rng if rng is not None else np.random.default_rng(seed)
        if isinstance(in_channels, int):
            in_channels = {level: in_channels for level in BACKBONE_LEVELS}
        inner = {}
        layer = {}
        for level in BACKBONE_LEVELS:
            inner[level] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(out_channels, in_channels[level]))
            layer[level] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(out_channels, out_channels, 3, 3))
        return cls(inner=inner, layer=layer)


@dataclass(frozen=True)
class FpnOutput:
    outputs: Dict[int, np.ndarray]
    fused: Dict[int, np.ndarray]

    def __getitem__(self, level: int) -> np.ndarray:
        return self.outputs[level]

    def feature_maps(self) -> Dict[int, FeatureMap]:
        return {level: FeatureMap(x) for level, x in self.outputs.items()}


@dataclass
class LossSpec:
    """Per-level losses over the pyramid outputs.

    ``quadratic`` is ``w_l * 0.5 * ||P_l - target_l||^2``. ``linear`` is the probe
    ``w_l * <P_l, target_l>``: its gradient at every output is the fixed target
    map, whatever the fusion factors are.
    """
    targets: Dict[int, np.ndarray]
    include: Dict[int, bool]
    weights: Dict[int, float] = field(default_factory=dict)
    kind: str = "quadratic"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise DomainError(f"Unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")
        for level in OUTPUT_LEVELS:
            self.include.setdefault(level, False)
            self.weights.setdefault(level, 1.0)
        if not any(self.include[level] for level in OUTPUT_LEVELS):
            raise DomainError("LossSpec must include at least one level")
        for level in OUTPUT_LEVELS:
            if self.include[level] and level not in self.targets:
                raise ShapeError(f"No target for included level P{level}", level=level)

    @classmethod
    def random(cls, output_shapes: Mapping[int, Tuple[int, ...]],
               levels: Iterable[int] = OUTPUT_LEVELS, seed: Optional[int] = None,
               rng: Optional[np.random.Generator] = None, kind: str = "quadratic") -> "LossSpec":
        rng = rng if rng is not None else np.random.default_rng(seed)
        levels = set(levels)
        targets = {level: rng.standard_normal(output_shapes[level]) for level in OUTPUT_LEVELS}
        return cls(targets=targets, include={level: level in levels for level in OUTPUT_LEVELS}, kind=kind)

    @classmethod
    def from_counts(cls, targets: Mapping[int, np.ndarray], counts: Sequence[int],
                    kind: str = "quadratic") -> "LossSpec":
        """Weight each level by its object count; empty levels drop out."""
        weights = {level: float(n) for level, n in zip(OUTPUT_LEVELS, counts)}
        return cls(targets=dict(targets), include={level: weights[level] > 0 for level in OUTPUT_LEVELS},
                   weights=weights, kind=kind)

    def restricted(self, levels: Iterable[int]) -> "LossSpec":
        levels = set(levels)
        return LossSpec(targets=self.targets,
                        include={level: self.include[level] and level in levels for level in OUTPUT_LEVELS},
                        weights=dict(self.weights), kind=self.kind)

    def output_gradient(self, level: int, output: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self.weights[level] * self.targets[level]
        return self.weights[level] * (output - self.targets[level])


@dataclass(frozen=True)
class ParamGradients:
    inner: Dict[int, np.ndarray]
    layer: Dict[int, np.ndarray]


@dataclass(frozen=True)
class BackwardResult:
    loss: float
    backbone: Dict[int, np.ndarray]
    params: ParamGradients


@dataclass(frozen=True)
class GradientComponents:
    deep: np.ndarray
    shallow: np.ndarray


@dataclass(frozen=True)
class GradientDecomposition:
    components: Dict[int, GradientComponents]
    total: Dict[int, np.ndarray]

    def __getitem__(self, level: int) -> GradientComponents:
        return self.components[level]


# building blocks

def lateral(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("oc,chw->ohw", weights, x)


def lateral_backward_input(weights: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return np.einsum("oc,ohw->chw", weights, grad)


def lateral_backward_weight(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("ohw,chw->oc", grad, x)


def upsample2x(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2x_backward(grad: np.ndarray) -> np.ndarray:
    c, h, w = grad.shape
    return grad.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def conv3x3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((kernel.shape[0], h, w))
    for ky in range(3):
        for kx in range(3):
            out += np.einsum("oc,chw->ohw", kernel[:, :, ky, kx], padded[:, ky:ky + h, kx:kx + w])
    return out


def conv3x3_backward_input(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    _, h, w = grad.shape
    padded = np.zeros((kernel.shape[1], h + 2, w + 2))
    for ky in range(3):
        for kx in range(3):
            padded[:, ky:ky + h, kx:kx + w] += np.einsum("oc,ohw->chw", kernel[:, :, ky, kx], grad)
    return padded[:, 1:-1, 1:-1]


def conv3x3_backward_weight(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    kernel_grad = np.zeros((grad.shape[0], x.shape[0], 3, 3))
    for ky in range(3):
        for kx in range(3):
            kernel_grad[:, :, ky, kx] = np.einsum("ohw,chw->oc", grad, padded[:, ky:ky + h, kx:kx + w])
    return kernel_grad


def subsample2x(x: np.ndarray) -> np.ndarray:
    return x[:, ::2, ::2]


def subsample2x_backward(grad: np.ndarray, shape: Tuple[int, int, int]) -> np.ndarray:
    full = np.zeros(shape)
    full[:, ::2, ::2] = grad
    return full


# shape checks

def check_shapes(inputs: Mapping[int, np.ndarray], params: FpnParams):
    for level in BACKBONE_LEVELS:
        x = inputs[level]
        if x.ndim != 3:
            raise ShapeError(f"C{level} must be (channels, height, width), got {x.shape}", level=level)
        if x.shape[0] != params.inner[level].shape[1]:
            raise ShapeError(f"C{level} has {x.shape[0]} channels, inner weights expect "
                             f"{params.inner[level].shape[1]}", level=level)
        if not np.all(np.isfinite(x)):
            raise DomainError(f"C{level} holds non-finite values")

    base = inputs[BACKBONE_LEVELS[0]]
    if base.shape[1] % 8 or base.shape[2] % 8 or base.shape[1] == 0 or base.shape[2] == 0:
        raise ShapeError(f"C2 spatial size must be a positive multiple of 8, got {base.shape[1:]}", level=2)
    for level in BACKBONE_LEVELS[1:]:
        expected = (inputs[level - 1].shape[1] // 2, inputs[level - 1].shape[2] // 2)
        if inputs[level].shape[1:] != expected:
            raise ShapeError(f"C{level} must be {expected} spatially, got {inputs[level].shape[1:]}",
                             level=level)


# passes

def fpn_forward(inputs: Inputs, params: FpnParams, alphas: FusionFactors) -> FpnOutput:
    c = _inputs_dict(inputs)
    check_shapes(c, params)

    fused = {5: lateral(params.inner[5], c[5])}
    for level in (4, 3, 2):
        fused[level] = (lateral(params.inner[level], c[level])
                        + alphas.for_level(level) * upsample2x(fused[level + 1]))

    outputs = {level: conv3x3(fused[level], params.layer[level]) for level in BACKBONE_LEVELS}
    outputs[6] = subsample2x(outputs[5])
    return FpnOutput(outputs=dict(sorted(outputs.items())), fused=dict(sorted(fused.items())))


def fpn_loss(inputs: Inputs, params: FpnParams, alphas: FusionFactors, loss: LossSpec) -> float:
    out = fpn_forward(inputs, params, alphas)
    return _loss_value(out, loss)


def _loss_value(out: FpnOutput, loss: LossSpec) -> float:
    total = 0.0
    for level in OUTPUT_LEVELS:
        if loss.include[level]:
            if loss.kind == "linear":
                total += loss.weights[level] * float(np.sum(out.outputs[level] * loss.targets[level]))
            else:
                residual = out.outputs[level] - loss.targets[level]
                total += loss.weights[level] * 0.5 * float(np.sum(residual * residual))
    return total


def _backward(c: Dict[int, np.ndarray], params: FpnParams, alphas: FusionFactors,
              loss: LossSpec, out: FpnOutput, levels: Iterable[int]) -> BackwardResult:
    active = {level for level in levels if loss.include[level]}

    grad_out = {}
    for level in OUTPUT_LEVELS:
        if level in active:
            grad_out[level] = loss.output_gradient(level, out.outputs[level])
        else:
            grad_out[level] = np.zeros_like(out.outputs[level])
    grad_out[5] = grad_out[5] + subsample2x_backward(grad_out[6], out.outputs[5].shape)

    layer_grads = {}
    grad_fused = {}
    for level in BACKBONE_LEVELS:
        layer_grads[level] = conv3x3_backward_weight(grad_out[level], out.fused[level])
        grad_fused[level] = conv3x3_backward_input(grad_out[level], params.layer[level])

    # the top-down path runs shallow-to-deep in reverse
    for level in (3, 4, 5):
        grad_fused[level] = (grad_fused[level]
                             + alphas.for_level(level - 1) * upsample2x_backward(grad_fused[level - 1]))

    backbone = {level: lateral_backward_input(params.inner[level], grad_fused[level])
                for level in BACKBONE_LEVELS}
    inner_grads = {level: lateral_backward_weight(grad_fused[level], c[level])
                   for level in BACKBONE_LEVELS}

    restricted = loss.restricted(active) if active else None
    value = _loss_value(out, restricted) if restricted is not None else 0.0
    return BackwardResult(loss=value, backbone=backbone,
                          params=ParamGradients(inner=inner_grads, layer=layer_grads))


def fpn_backward(inputs: Inputs, params: FpnParams, alphas: FusionFactors,
                 loss: LossSpec) -> BackwardResult:
    """Loss value and exact gradients of the total loss.

    Returns raw gradients; a learning-rate step would be ``-eta * grad``.
    """
    c = _inputs_dict(inputs)
    out = fpn_forward(c, params, alphas)
    return _backward(c, params, alphas, loss, out, OUTPUT_LEVELS)


def gradient_decomposition(inputs: Inputs, params: FpnParams, alphas: FusionFactors,
                           loss: LossSpec) -> GradientDecomposition:
    """Split each backbone gradient into the part from its own and deeper outputs
    and the part reaching it through the top-down path from shallower outputs.

    For C_k the deep part comes from the losses on P_k..P_6 and the shallow part
    from the losses on P_2..P_{k-1}; the shallow part carries the factor
    ``alpha_{k-1}`` of the fusion into level k-1.
    """
    c = _inputs_dict(inputs)
    out = fpn_forward(c, params, alphas)
    total = _backward(c, params, alphas, loss, out, OUTPUT_LEVELS).backbone

    components = {}
    for level in BACKBONE_LEVELS:
        deep = _backward(c, params, alphas, loss, out,
                         [lv for lv in OUTPUT_LEVELS if lv >= level]).backbone[level]
        shallow = _backward(c, params, alphas, loss, out,
                            [lv for lv in OUTPUT_LEVELS if lv < level]).backbone[level]
        components[level] = GradientComponents(deep=deep, shallow=shallow)
    return GradientDecomposition(components=components, total=total)


def reparameterize(params: FpnParams, sigma: float) -> FpnParams:
    """Scale inner_i by sigma**(i-2) and layer_i by sigma**-(i-2).

    With all fusion factors at 1 the result computes the same pyramid as the
    original weights with every fusion factor set to sigma.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    inner = {}
    layer = {}
    for level in BACKBONE_LEVELS:
        power = level - BACKBONE_LEVELS[0]
        inner[level] = params.inner[level] * sigma ** power
        layer[level] = params.layer[level] * sigma ** -power
    return FpnParams(inner=inner, layer=layer)


def random_inputs(in_channels: Union[int, Mapping[int, int]], base_size: int,
                  seed: Optional[int] = None,
                  rng: Optional[np.random.Generator] = None) -> Dict[int, np.ndarray]:
    """Standard-normal C2..C5 with C2 at ``base_size`` x ``base_size``."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    if isinstance(in_channels, int):
        in_channels = {level: in_channels for level in BACKBONE_LEVELS}
    return {level: rng.standard_normal((in_channels[level],
                                        base_size >> (level - 2), base_size >> (level - 2)))
            for level in BACKBONE_LEVELS}
