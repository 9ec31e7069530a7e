import os
from dataclasses import dataclass, field, replace as dataclass_replace
from typing import Dict, FrozenSet, Mapping, Optional

from dotenv import load_dotenv

load_dotenv()

__version__ = '0.1.0'


class ConfigError(ValueError):
    """Raised when a configuration value is out of range or unparsable."""


def parse_scales(raw: str) -> Dict[str, float]:
    # "air_temperature=1.0,relative_humidity=2.5"
    scales: Dict[str, float] = {}
    for item in filter(None, (part.strip() for part in raw.split(','))):
        name, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f"value scale must look like property=scale, got {item!r}")
        try:
            scales[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"value scale for {name.strip()!r} is not a number: {value!r}")
    return scales


class Config:
    # 基本設定
    SECRET_KEY = os.getenv('SECRET_KEY', os.urandom(24).hex())
    FLASK_ENV = os.getenv('FLASK_ENV', 'development')
    DEBUG = FLASK_ENV == 'development'
    LOG_DIR = os.getenv('LOG_DIR')

    # CORS設定
    CORS_ORIGINS = os.getenv('CORS_ORIGINS', '').split(',')

    # 入力データ
    DATA_DIR = os.getenv('DATA_DIR', 'data')
    NODES_CSV = os.getenv('NODES_CSV', 'nodes.csv')
    SENSORS_CSV = os.getenv('SENSORS_CSV', 'sensors.csv')
    OBSERVATIONS_CSV = os.getenv('OBSERVATIONS_CSV', 'observations.csv')
    RULES_FILE = os.getenv('RULES_FILE', 'rules.txt')

    # 検出パラメータ
    DETECTION_DELTA_M = float(os.getenv('DETECTION_DELTA_M', '300'))
    DETECTION_ETA = int(os.getenv('DETECTION_ETA', '12'))
    DETECTION_BETA = float(os.getenv('DETECTION_BETA', '0.90'))
    DETECTION_GRID_STEP_S = int(os.getenv('DETECTION_GRID_STEP_S', '600'))
    DETECTION_PREDICATES = os.getenv('DETECTION_PREDICATES', 'strong,medium')
    DETECTION_VALUE_SCALES = os.getenv('DETECTION_VALUE_SCALES', '')
    DETECTION_WORKERS = int(os.getenv('DETECTION_WORKERS', '1'))

    # レート制限設定
    RATELIMIT_DEFAULT = "200 per day"
    RATELIMIT_STORAGE_URL = os.getenv('RATELIMIT_STORAGE_URL', 'memory://')
    RATELIMIT_STRATEGY = 'fixed-window'
    RATELIMIT_HEADERS_ENABLED = True


class DevelopmentConfig(Config):
    DEBUG = True
    CORS_ORIGINS = ['http://localhost:3000', 'http://localhost:5000']


class ProductionConfig(Config):
    DEBUG = False
    CORS_ORIGINS = os.getenv('CORS_ORIGINS', '').split(',')


class TestingConfig(Config):
    TESTING = True
    DEBUG = True
    CORS_ORIGINS = ['http://localhost:3000']
    RATELIMIT_ENABLED = False


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


@dataclass(frozen=True)
class DetectionConfig:
    """Parameters of one detection run.

    delta_m: neighborhood distance threshold in meters
    eta: window length in slots (even)
    beta: similarity threshold in (0, 1]
    grid_step_s: sampling interval in seconds
    value_scales: per-property divisor applied to value deltas before angles are taken
    active_predicates: predicate tokens that make two properties corroborate each other
    workers: threads used to build per-property similarity tensors
    """

    delta_m: float = 300.0
    eta: int = 12
    beta: float = 0.90
    grid_step_s: int = 600
    value_scales: Mapping[str, float] = field(default_factory=dict)
    active_predicates: FrozenSet[str] = frozenset({'hasStrongCorrelation', 'hasMediumCorrelation'})
    workers: int = 1

    def __post_init__(self):
        if not self.delta_m > 0:
            raise ConfigError(f"delta must be > 0 meters, got {self.delta_m}")
        if self.eta < 2 or self.eta % 2:
            raise ConfigError(f"eta must be an even integer >= 2, got {self.eta}")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.grid_step_s <= 0:
            raise ConfigError(f"grid step must be > 0 seconds, got {self.grid_step_s}")
        for name, scale in self.value_scales.items():
            if not scale > 0:
                raise ConfigError(f"value scale for {name} must be > 0, got {scale}")
        if not self.active_predicates:
            raise ConfigError("at least one active predicate is required")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        object.__setattr__(self, 'value_scales', dict(self.value_scales))
        object.__setattr__(self, 'active_predicates', frozenset(self.active_predicates))

    def scale_for(self, prop: str) -> float:
        return self.value_scales.get(prop, 1.0)

    def replace(self, **changes) -> 'DetectionConfig':
        """Copy with the given fields overridden; None values are ignored."""
        return dataclass_replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> Dict[str, object]:
        return {
            'delta_m': self.delta_m,
            'eta': self.eta,
            'beta': self.beta,
            'grid_step_s': self.grid_step_s,
            'value_scales': dict(sorted(self.value_scales.items())),
            'active_predicates': sorted(self.active_predicates),
        }

    @classmethod
    def from_object(cls, obj: Optional[type] = None) -> 'DetectionConfig':
        """Build from a Config class (or anything with the DETECTION_* attributes)."""
        from utils.rules import parse_predicate_names

        obj = obj or Config
        return cls(
            delta_m=obj.DETECTION_DELTA_M,
            eta=obj.DETECTION_ETA,
            beta=obj.DETECTION_BETA,
            grid_step_s=obj.DETECTION_GRID_STEP_S,
            value_scales=parse_scales(obj.DETECTION_VALUE_SCALES),
            active_predicates=parse_predicate_names(obj.DETECTION_PREDICATES),
            workers=obj.DETECTION_WORKERS,
        )
