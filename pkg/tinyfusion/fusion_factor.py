"""Statistic-based fusion factors and brute-force sweep plans."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple, Union

from .assignment import LevelCounts
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

CONVENTIONAL_ALPHA = 1.0
SWEEP_MAX = 1.1
SWEEP_TOLERANCE = 1e-9
SWEEP_DIGITS = 12
SWEEP_MAX_VALUES = 100_000
DISPLAY_DECIMALS = 3


@dataclass(frozen=True)
class FusionFactors:
    """Fusion factors for P3->P2, P4->P3 and P5->P4; P6 has none."""
    alpha_2_3: float
    alpha_3_4: float
    alpha_4_5: float
    fallback: Tuple[bool, bool, bool] = (False, False, False)

    @classmethod
    def uniform(cls, alpha: float) -> "FusionFactors":
        return cls(alpha, alpha, alpha)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "FusionFactors":
        if len(values) != 3:
            raise ValueError(f"Expected 3 fusion factors, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> List[float]:
        return [self.alpha_2_3, self.alpha_3_4, self.alpha_4_5]

    def for_level(self, level: int) -> float:
        """Factor weighting the upsampled P'_{level+1} when fused into level."""
        return {2: self.alpha_2_3, 3: self.alpha_3_4, 4: self.alpha_4_5}[level]

    def rounded(self, decimals: int = DISPLAY_DECIMALS) -> List[float]:
        return [round(a, decimals) for a in self.as_list()]

    def to_dict(self, counts: LevelCounts = None) -> Dict[str, Any]:
        data: Dict[str, Any] = {"alpha": self.as_list(), "fallback": list(self.fallback)}
        if counts is not None:
            data["counts"] = counts.as_list()
        return data


def _ratio(numerator: int, denominator: int, name: str) -> Tuple[float, bool]:
    if denominator == 0:
        logger.warning(f"{name}: empty shallow level, falling back to alpha={CONVENTIONAL_ALPHA}")
        return CONVENTIONAL_ALPHA, True
    return numerator / denominator, False


def compute_factors(c: LevelCounts) -> FusionFactors:
    if len(c.counts) != 5:
        raise ValueError(f"Fusion factors need counts for 5 levels, got {len(c.counts)}")
    n2, n3, n4, n5, n6 = c.counts

    a23, f23 = _ratio(n3, n2, "alpha_2_3")
    a34, f34 = _ratio(n4, n3, "alpha_3_4")
    # P6 has no fusion of its own, so its objects are merged into the deepest factor
    a45, f45 = _ratio(n5 + n6, n4, "alpha_4_5")
    return FusionFactors(a23, a34, a45, fallback=(f23, f34, f45))


@dataclass(frozen=True)
class SweepPlan:
    values: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)

    def factors(self) -> List[FusionFactors]:
        return [FusionFactors.uniform(v) for v in self.values]


def sweep_plan(min_alpha: float, max_alpha: float, step: float) -> SweepPlan:
    for name, value in (("min", min_alpha), ("max", max_alpha), ("step", step)):
        if not math.isfinite(value):
            raise ConfigError(f"Sweep {name} must be finite, got {value}")
    if step <= 0:
        raise ConfigError(f"Sweep step must be positive, got {step}")
    if not (0 <= min_alpha <= max_alpha <= SWEEP_MAX):
        raise ConfigError(
            f"Sweep range must satisfy 0 <= min <= max <= {SWEEP_MAX}, got [{min_alpha}, {max_alpha}]")

    # steps between min and max; the tolerance is in units of step
    last = math.floor((max_alpha - min_alpha) / step + SWEEP_TOLERANCE)
    if last + 1 > SWEEP_MAX_VALUES:
        raise ConfigError(f"Sweep step {step} gives {last + 1} values, more than {SWEEP_MAX_VALUES}")

    # min + k * step, never a running sum
    values = tuple(min(round(min_alpha + k * step, SWEEP_DIGITS), max_alpha) for k in range(last + 1))
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"Sweep step {step} is too fine: values collide after rounding to"
                          f" {SWEEP_DIGITS} digits")
    return SweepPlan(values)


def format_alpha(value: Union[float, int]) -> str:
    return f"{value:.{DISPLAY_DECIMALS}f}"
