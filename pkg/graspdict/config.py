"""Training configuration: defaults < key=value config file < flags."""

import dataclasses
import logging
from dataclasses import dataclass, field

from graspdict import InputError

logger = logging.getLogger(__name__)

ARMS = ("fully", "ratio_only", "ae", "ours", "ours_l2", "pseudo_label")
DEFAULT_ARMS = ("fully", "ratio_only", "ae", "ours")


class ConfigError(InputError):
    pass


@dataclass
class TrainConfig:
    k: int = 30
    lambda_dict: float = 100.0
    lambda_r: float = 100.0
    ratio: float = 0.05
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    est_epochs: int = 60
    unlabeled_ratio: float = 1.0
    seed: int = 7
    seeds: tuple = (7, 8, 9)
    hidden: tuple = (1024, 256, 256, 1024, 256, 256, 1024)
    gc_widths: tuple = (64, 128)
    dict_regularizer: str = "interval"
    l2_weight: float = 1e-3
    dict_tolerance: float = 1e-3
    frame_gradient: bool = True
    test_fraction: float = 0.2
    threads: int = 1
    arms: tuple = DEFAULT_ARMS
    data: str = None
    out: str = None
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        for name in ("lambda_dict", "lambda_r", "l2_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"ratio must lie in (0, 1], got {self.ratio}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in [0, 1)")
        for name in ("batch_size", "epochs", "est_epochs", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.unlabeled_ratio <= 0:
            raise ConfigError("unlabeled_ratio must be > 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.dict_tolerance <= 0:
            raise ConfigError("dict_tolerance must be > 0")
        if self.dict_regularizer not in ("interval", "l2"):
            raise ConfigError(
                f"dict_regularizer must be 'interval' or 'l2', "
                f"got '{self.dict_regularizer}'")
        unknown = [arm for arm in self.arms if arm not in ARMS]
        if unknown:
            raise ConfigError(f"Unknown benchmark arms: {', '.join(unknown)}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def override(self, values):
        """Return a copy with every non-None entry of ``values`` applied."""
        changes = {}
        for key, value in values.items():
            if value is None:
                continue
            if key not in _FIELD_TYPES:
                raise ConfigError(f"Unknown configuration key '{key}'")
            changes[key] = _coerce(key, value)
        return self.replace(**changes)

    def to_dict(self):
        echo = dataclasses.asdict(self)
        echo.pop("extra")
        for key, value in echo.items():
            if isinstance(value, tuple):
                echo[key] = list(value)
        return echo

    @classmethod
    def from_file(cls, path, base=None):
        """Read ``key=value`` lines; '#' starts a comment."""
        values = {}
        with open(path, encoding="utf-8") as input_fh:
            for line_number, line in enumerate(input_fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{line_number}: expected key=value")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key.replace("-", "_")] = value
        logger.debug("Read %d settings from %s", len(values), path)
        return (base or cls()).override(values)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)
                if f.name != "extra"}
_INT_TUPLES = ("seeds", "hidden", "gc_widths")


def _coerce(key, value):
    """Convert a config-file string (or a flag value) to the field type."""
    if not isinstance(value, str):
        if key in _INT_TUPLES or key == "arms":
            return tuple(value)
        return value
    try:
        if key in _INT_TUPLES:
            return tuple(int(part) for part in value.replace(",", " ").split())
        if key == "arms":
            return tuple(value.replace(",", " ").split())
        field_type = _FIELD_TYPES[key]
        if field_type is bool:
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return lowered in ("true", "1", "yes")
        if field_type is int:
            return int(value)
        if field_type is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"Invalid value '{value}' for '{key}'")
