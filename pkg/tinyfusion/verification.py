"""Numerical checks of the micro FPN's algebraic properties.

Every check runs on seeded random instances and returns a ``CheckResult``
holding the worst error it measured and the tolerance it was held to.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .fusion_factor import FusionFactors
from .micro_fpn import (
    BACKBONE_LEVELS,
    OUTPUT_LEVELS,
    FpnOutput,
    FpnParams,
    LossSpec,
    fpn_backward,
    fpn_forward,
    fpn_loss,
    gradient_decomposition,
    random_inputs,
    reparameterize,
)

logger = logging.getLogger(__name__)

Forward = Callable[..., FpnOutput]

DEFAULT_SEED = 0
DEFAULT_INSTANCES = 25
CHANNELS = 4
BASE_SIZE = 16
SIGMAS = (0.25, 0.5, 0.9)
ALPHA_GRID = (0.25, 0.5, 1.0)
FD_STEP = 1e-5

TOL_EQUIVALENCE = 1e-9
TOL_FINITE_DIFFERENCE = 1e-4
TOL_LINEARITY = 1e-9
TOL_DECOMPOSITION = 1e-12
TOL_FORWARD_LINEARITY = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    error: float
    tolerance: float
    seed: int
    instances: int = 1

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data.pop("passed")
        data["status"] = self.status
        return data


@dataclass
class Instance:
    inputs: Dict[int, np.ndarray]
    params: FpnParams
    targets: Dict[int, np.ndarray]

    def loss(self, levels: Iterable[int] = OUTPUT_LEVELS, kind: str = "quadratic") -> LossSpec:
        levels = set(levels)
        return LossSpec(targets=self.targets, include={lv: lv in levels for lv in OUTPUT_LEVELS}, kind=kind)


def make_instance(seed: int, channels: int = CHANNELS, base_size: int = BASE_SIZE) -> Instance:
    rng = np.random.default_rng(seed)
    inputs = random_inputs(channels, base_size, rng=rng)
    params = FpnParams.random(channels, channels, rng=rng)
    shapes = {level: (channels, base_size >> (level - 2), base_size >> (level - 2)) for level in BACKBONE_LEVELS}
    shapes[6] = (channels, -(-shapes[5][1] // 2), -(-shapes[5][2] // 2))
    targets = {level: rng.standard_normal(shapes[level]) for level in OUTPUT_LEVELS}
    return Instance(inputs=inputs, params=params, targets=targets)


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """Max abs difference relative to the largest magnitude in ``expected``."""
    scale = float(np.max(np.abs(expected))) if expected.size else 0.0
    diff = float(np.max(np.abs(actual - expected))) if expected.size else 0.0
    if scale == 0.0:
        return diff
    return diff / scale


def central_difference(fun: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of ``fun`` with respect to ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + h
        f_plus = fun()
        x.flat[i] = original - h
        f_minus = fun()
        x.flat[i] = original
        grad.flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst per-entry error, each entry measured against the tensor's largest magnitude."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_reparameterization(seed: int = DEFAULT_SEED, instances: int = DEFAULT_INSTANCES,
                             sigmas: Sequence[float] = SIGMAS,
                             forward: Forward = fpn_forward) -> CheckResult:
    worst = 0.0
    ones = FusionFactors.uniform(1.0)
    for k in range(instances):
        inst = make_instance(seed + k)
        for sigma in sigmas:
            reparam = forward(inst.inputs, reparameterize(inst.params, sigma), ones)
            scaled_alpha = forward(inst.inputs, inst.params, FusionFactors.uniform(sigma))
            for level in OUTPUT_LEVELS:
                worst = max(worst, relative_error(reparam[level], scaled_alpha[level]))
    return CheckResult("reparameterization_equivalence", worst <= TOL_EQUIVALENCE, worst,
                       TOL_EQUIVALENCE, seed, instances)


def check_finite_differences(seed: int = DEFAULT_SEED, instances: int = 1,
                             alphas: FusionFactors = FusionFactors(0.7, 0.4, 0.9)) -> CheckResult:
    worst = 0.0
    for k in range(instances):
        inst = make_instance(seed + k)
        loss = inst.loss()
        result = fpn_backward(inst.inputs, inst.params, alphas, loss)

        def objective() -> float:
            return fpn_loss(inst.inputs, inst.params, alphas, loss)

        pairs: List[Tuple[np.ndarray, np.ndarray]] = []
        for level in BACKBONE_LEVELS:
            pairs.append((result.backbone[level], inst.inputs[level]))
            pairs.append((result.params.inner[level], inst.params.inner[level]))
            pairs.append((result.params.layer[level], inst.params.layer[level]))
        for analytic, array in pairs:
            numeric = central_difference(objective, array)
            worst = max(worst, gradient_relative_error(analytic, numeric))
    return CheckResult("gradient_finite_difference", worst <= TOL_FINITE_DIFFERENCE, worst,
                       TOL_FINITE_DIFFERENCE, seed, instances)


def shallow_gradient_norms(inst: Instance, alpha_grid: Sequence[float] = ALPHA_GRID,
                           base: FusionFactors = FusionFactors(0.6, 1.0, 0.8),
                           level: int = 4) -> List[Tuple[float, float, float]]:
    """(alpha, ||deep||, ||shallow||) of C_level's gradient as the factor into level-1 varies.

    Uses the linear probe loss, so the error signal at every output stays fixed.
    """
    rows = []
    values = base.as_list()
    for alpha in alpha_grid:
        values[level - 3] = alpha
        decomposition = gradient_decomposition(inst.inputs, inst.params,
                                               FusionFactors.from_list(values), inst.loss(kind="linear"))
        parts = decomposition[level]
        rows.append((alpha, float(np.linalg.norm(parts.deep)), float(np.linalg.norm(parts.shallow))))
    return rows


def check_shallow_linearity(seed: int = DEFAULT_SEED,
                            instances: int = DEFAULT_INSTANCES) -> CheckResult:
    worst = 0.0
    for k in range(instances):
        rows = shallow_gradient_norms(make_instance(seed + k))
        ratios = np.array([shallow / alpha for alpha, _, shallow in rows])
        spread = float((ratios.max() - ratios.min()) / ratios.max()) if ratios.max() > 0 else 0.0
        worst = max(worst, spread)
    return CheckResult("shallow_alpha_linearity", worst <= TOL_LINEARITY, worst,
                       TOL_LINEARITY, seed, instances)


def check_deep_independence(seed: int = DEFAULT_SEED,
                            instances: int = DEFAULT_INSTANCES) -> CheckResult:
    worst = 0.0
    for k in range(instances):
        inst = make_instance(seed + k)
        deep = [gradient_decomposition(inst.inputs, inst.params, FusionFactors(0.6, alpha, 0.8),
                                       inst.loss())[4].deep
                for alpha in ALPHA_GRID]
        for other in deep[1:]:
            worst = max(worst, float(np.max(np.abs(other - deep[0]))))
    return CheckResult("deep_alpha_independence", worst == 0.0, worst, 0.0, seed, instances)


def check_decomposition_sum(seed: int = DEFAULT_SEED,
                            instances: int = DEFAULT_INSTANCES) -> CheckResult:
    worst = 0.0
    for k in range(instances):
        inst = make_instance(seed + k)
        decomposition = gradient_decomposition(inst.inputs, inst.params,
                                               FusionFactors(0.6, 0.5, 0.8), inst.loss())
        for level in BACKBONE_LEVELS:
            parts = decomposition[level]
            worst = max(worst, float(np.max(np.abs(parts.deep + parts.shallow
                                                   - decomposition.total[level]))))
    return CheckResult("decomposition_sum", worst <= TOL_DECOMPOSITION, worst,
                       TOL_DECOMPOSITION, seed, instances)


def check_zero_alpha_decoupling(seed: int = DEFAULT_SEED,
                                instances: int = DEFAULT_INSTANCES) -> CheckResult:
    worst = 0.0
    zeros = FusionFactors.uniform(0.0)
    rng = np.random.default_rng(seed)
    for k in range(instances):
        inst = make_instance(seed + k)
        before = fpn_forward(inst.inputs, inst.params, zeros)
        perturbed = dict(inst.inputs)
        perturbed[5] = inst.inputs[5] + rng.standard_normal(inst.inputs[5].shape)
        after = fpn_forward(perturbed, inst.params, zeros)
        for level in (2, 3, 4):
            worst = max(worst, float(np.max(np.abs(after[level] - before[level]))))
    return CheckResult("alpha_zero_decoupling", worst == 0.0, worst, 0.0, seed, instances)


def check_forward_linearity(seed: int = DEFAULT_SEED, instances: int = DEFAULT_INSTANCES,
                            scale: float = 3.0) -> CheckResult:
    worst = 0.0
    alphas = FusionFactors(0.6, 0.5, 0.8)
    for k in range(instances):
        inst = make_instance(seed + k)
        base = fpn_forward(inst.inputs, inst.params, alphas)
        scaled = fpn_forward({lv: scale * x for lv, x in inst.inputs.items()}, inst.params, alphas)
        for level in OUTPUT_LEVELS:
            worst = max(worst, relative_error(scaled[level], scale * base[level]))
    return CheckResult("forward_linearity", worst <= TOL_FORWARD_LINEARITY, worst,
                       TOL_FORWARD_LINEARITY, seed, instances)


def run_all(seed: int = DEFAULT_SEED, instances: int = DEFAULT_INSTANCES,
            forward: Optional[Forward] = None) -> List[CheckResult]:
    checks = [
        check_reparameterization(seed, instances, forward=forward or fpn_forward),
        check_finite_differences(seed),
        check_shallow_linearity(seed, instances),
        check_deep_independence(seed, instances),
        check_decomposition_sum(seed, instances),
        check_zero_alpha_decoupling(seed, instances),
        check_forward_linearity(seed, instances),
    ]
    for check in checks:
        log = logger.info if check.passed else logger.error
        log(f"{check.name}: {check.status} (error {check.error:.3e}, tolerance {check.tolerance:.0e})")
    return checks
