"""Pipeline commands behind the ``tinyfusion`` CLI and the reports they write."""
import copy
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from . import __version__, verification
from .assignment import LevelCounter, LevelCounts
from .config import Config
from .dataset_io import Dataset, filter_images, parse_annotations, scale_dataset, size_distribution, validate
from .exceptions import DatasetValidationError
from .fusion_factor import FusionFactors, compute_factors, format_alpha, sweep_plan
from .utils import ensure_directory, read_bytes, write_json_atomic

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class StatsReport:
    dataset: Dict[str, int]
    anchor_config: Dict[str, List[float]]
    level_counts: List[int]
    fusion_factors: Dict[str, Any]
    anchor_totals: List[int] = field(default_factory=list)
    size_distribution: Dict[str, Any] = field(default_factory=dict)
    settings: Dict[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = field(default_factory=_timestamp)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "settings": copy.deepcopy(self.settings),
            "dataset": dict(self.dataset),
            "anchor_config": copy.deepcopy(self.anchor_config),
            "level_counts": list(self.level_counts),
            "anchor_totals": list(self.anchor_totals),
            "fusion_factors": copy.deepcopy(self.fusion_factors),
            "size_distribution": copy.deepcopy(self.size_distribution),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StatsReport":
        return cls(
            dataset=dict(data["dataset"]),
            anchor_config=copy.deepcopy(data["anchor_config"]),
            level_counts=list(data["level_counts"]),
            fusion_factors=copy.deepcopy(data["fusion_factors"]),
            anchor_totals=list(data.get("anchor_totals", [])),
            size_distribution=copy.deepcopy(data.get("size_distribution", {})),
            settings=copy.deepcopy(data.get("settings", {})),
            tool_version=data["tool_version"],
            timestamp=data["timestamp"],
            schema_version=data["schema_version"],
        )

    @property
    def factors(self) -> FusionFactors:
        return FusionFactors(*self.fusion_factors["alpha"],
                             fallback=tuple(self.fusion_factors["fallback"]))

    def summary_lines(self) -> List[str]:
        alpha = [format_alpha(a) for a in self.fusion_factors["alpha"]]
        fallback = self.fusion_factors["fallback"]
        marked = [f"{a} (fallback)" if fb else a for a, fb in zip(alpha, fallback)]
        return [
            f"images: {self.dataset['images']} (excluded {self.dataset['excluded_images']})",
            f"objects: {self.dataset['objects']} (zero-overlap {self.dataset['zero_overlap']})",
            "level counts P2..P6: " + ", ".join(str(n) for n in self.level_counts),
            "alpha (P3->P2, P4->P3, P5->P4): " + ", ".join(marked),
        ]


@dataclass
class VerifyReport:
    seed: int
    checks: List[verification.CheckResult]
    instances: int = verification.DEFAULT_INSTANCES
    gradient_summary: List[Dict[str, float]] = field(default_factory=list)
    tool_version: str = __version__
    timestamp: str = field(default_factory=_timestamp)
    schema_version: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[verification.CheckResult]:
        return [check for check in self.checks if not check.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "seed": self.seed,
            "instances": self.instances,
            "status": "pass" if self.passed else "fail",
            "checks": [check.to_dict() for check in self.checks],
            "gradient_summary": list(self.gradient_summary),
        }


def _load_config(config_path: Optional[PathLike]) -> Config:
    config = Config(config_path) if config_path is not None else Config()
    logger.info(f"Anchor config: {config.anchor_config().to_dict()}")
    return config


def compute_stats(d: Dataset, config: Config, max_objects: Optional[int] = None,
                  image_scale: float = 1.0) -> StatsReport:
    """Validate, filter and count ``d``; the file-free core of ``cmd_stats``."""
    max_objects = max_objects if max_objects is not None else config.max_objects
    anchor_cfg = config.anchor_config()

    report = validate(d)
    if not report.valid:
        raise DatasetValidationError(
            f"Dataset has {len(report.hard)} hard violations; first: {report.hard[0]}",
            record_id=report.hard[0].record_id, findings=report.hard)
    logger.info(f"Validated {len(d.images)} images ({len(report.soft)} soft warnings)")

    if image_scale != 1.0:
        d = scale_dataset(d, image_scale)
        logger.info(f"Rescaled images and boxes by {image_scale}")

    filtered = filter_images(d, max_objects)
    stats = LevelCounter(anchor_cfg, include_zero_overlap=config.include_zero_overlap,
                         workers=config.workers, chunk_size=config.chunk_size).run(filtered)
    factors = compute_factors(stats.counts)

    return StatsReport(
        dataset={
            "images": stats.num_images,
            "objects": stats.num_objects,
            "excluded_images": len(d.images) - len(filtered.images),
            "zero_overlap": stats.zero_overlap,
        },
        anchor_config=anchor_cfg.to_dict(),
        level_counts=stats.counts.as_list(),
        fusion_factors={
            "alpha": factors.as_list(),
            "alpha_rounded": factors.rounded(),
            "fallback": list(factors.fallback),
        },
        anchor_totals=stats.anchor_totals,
        size_distribution=size_distribution(filtered).to_dict(),
        settings={
            "max_objects": max_objects,
            "include_zero_overlap": config.include_zero_overlap,
            "image_scale": image_scale,
        },
    )


def cmd_stats(annotations_path: PathLike, config_path: Optional[PathLike],
              max_objects: Optional[int], out_path: PathLike,
              alpha_out: Optional[PathLike] = None, image_scale: float = 1.0,
              config: Optional[Config] = None) -> StatsReport:
    config = config if config is not None else _load_config(config_path)

    raw = read_bytes(annotations_path)
    if not raw.strip():
        logger.warning(f"Annotation file {annotations_path} is empty; treating it as an empty dataset")
        d = Dataset()
    else:
        d = parse_annotations(raw)
    logger.info(f"Parsed {len(d.images)} images, {len(d.annotations)} annotations")
    if not d.images:
        logger.warning("Dataset has no images; every fusion factor will fall back to 1.0")

    report = compute_stats(d, config, max_objects, image_scale)

    write_json_atomic(out_path, report.to_dict())
    logger.info(f"Wrote stats report to {out_path}")
    if alpha_out is not None:
        counts = LevelCounts(report.level_counts, tuple(report.anchor_config["levels"]))
        write_json_atomic(alpha_out, report.factors.to_dict(counts))
        logger.info(f"Wrote fusion factors to {alpha_out}")

    for line in report.summary_lines():
        print(line)
    return report


def cmd_verify(seed: int, out_path: PathLike,
               instances: int = verification.DEFAULT_INSTANCES) -> VerifyReport:
    checks = verification.run_all(seed, instances)
    summary = [
        {"alpha_3_4": alpha, "deep_norm": deep, "shallow_norm": shallow}
        for alpha, deep, shallow in verification.shallow_gradient_norms(verification.make_instance(seed))
    ]
    report = VerifyReport(seed=seed, checks=checks, instances=instances, gradient_summary=summary)

    write_json_atomic(out_path, report.to_dict())
    logger.info(f"Wrote verify report to {out_path}")

    for check in checks:
        print(f"{check.status.upper():4}  {check.name}  error={check.error:.3e}  tol={check.tolerance:.0e}")
    print(f"overall: {'pass' if report.passed else 'fail'}")
    return report


def sweep_file_name(alpha: float) -> str:
    return f"alpha_{alpha!r}.json"


def cmd_sweep(min_alpha: float, max_alpha: float, step: float,
              base_config: Optional[PathLike], out_dir: PathLike) -> List[Path]:
    plan = sweep_plan(min_alpha, max_alpha, step)
    base = Config.read_file(base_config) if base_config is not None else {}
    directory = ensure_directory(out_dir)

    written = []
    for alpha in plan.values:
        run_config = copy.deepcopy(base)
        run_config["fusion_factor"] = {"alpha": FusionFactors.uniform(alpha).as_list(), "uniform": alpha}
        written.append(write_json_atomic(directory / sweep_file_name(alpha), run_config))

    logger.info(f"Wrote {len(written)} sweep configs to {directory}")
    print(f"{len(written)} configs: " + ", ".join(format_alpha(a) for a in plan.values))
    return written
