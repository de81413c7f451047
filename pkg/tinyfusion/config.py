import copy
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .anchor_pyramid import ANCHOR_FIELDS, AnchorConfig
from .exceptions import ConfigError, ReportIOError


class Config:
    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None

        self._config: Dict[str, Any] = {
            "anchors": AnchorConfig().to_dict(),
            "statistics": {
                "max_objects": 200,
                "include_zero_overlap": False,
                "workers": 1,
                "chunk_size": 4_000_000,
            },
            "logging": {
                "level": "INFO",
                "file": None,
            },
        }

        if self.path is not None:
            self.load()

    @staticmethod
    def read_file(path: Union[str, Path]) -> Dict[str, Any]:
        path = Path(path)
        suffix = path.suffix.lower()
        if suffix not in (".toml", ".json"):
            raise ConfigError(f"Unsupported config format '{suffix}': {path}")
        try:
            if suffix == ".toml":
                with open(path, "rb") as f:
                    loaded = tomllib.load(f)
            else:
                with open(path, "r", encoding="utf-8") as f:
                    loaded = json.load(f)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"Could not parse config file {path}: {e}") from e
        except OSError as e:
            raise ReportIOError(f"Could not read config file {path}: {e}") from e

        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must hold a table/object at the top level")
        return loaded

    def load(self):
        loaded = self.read_file(self.path)

        # anchor fields may sit at the top level instead of under [anchors]
        top_level_anchors = {k: loaded.pop(k) for k in list(loaded) if k in ANCHOR_FIELDS}
        if top_level_anchors:
            loaded.setdefault("anchors", {}).update(top_level_anchors)

        for section, values in loaded.items():
            if isinstance(values, dict) and isinstance(self._config.get(section), dict):
                self._config[section].update(values)
            else:
                self._config[section] = values

        # fail early on a bad anchor or statistics section
        self.anchor_config()
        try:
            max_objects = self.max_objects
            self.workers, self.chunk_size
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid [statistics] section in {self.path}: {e}") from e
        if max_objects < 1:
            raise ConfigError(f"statistics.max_objects must be >= 1, got {max_objects}")

    def save(self, path: Optional[Union[str, Path]] = None):
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ConfigError("No path to save the config to")
        try:
            with open(target, "w", encoding="utf-8") as f:
                json.dump(self._config, f, indent=2, ensure_ascii=False)
        except OSError as e:
            raise ReportIOError(f"Could not save config file {target}: {e}") from e

    def get(self, key: str, default: Any = None) -> Any:
        keys = key.split(".")
        value = self._config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def set(self, key: str, value: Any):
        keys = key.split(".")
        config = self._config

        for k in keys[:-1]:
            if k not in config or not isinstance(config[k], dict):
                config[k] = {}
            config = config[k]

        config[keys[-1]] = value

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._config)

    def anchor_config(self) -> AnchorConfig:
        return AnchorConfig.from_mapping(self.get("anchors", {}))

    @property
    def max_objects(self) -> int:
        return int(self.get("statistics.max_objects", 200))

    @property
    def include_zero_overlap(self) -> bool:
        return bool(self.get("statistics.include_zero_overlap", False))

    @property
    def workers(self) -> int:
        return max(1, int(self.get("statistics.workers", 1)))

    @property
    def chunk_size(self) -> int:
        return max(1, int(self.get("statistics.chunk_size", 4_000_000)))

    @property
    def log_level(self) -> str:
        return str(self.get("logging.level", "INFO")).upper()

    @property
    def log_file(self) -> Optional[str]:
        return self.get("logging.file")
