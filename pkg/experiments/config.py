"""
JSON experiment configuration.

Every block has defaults reproducing the desk-ics benchmark (2 classes,
d = 10, n = 4000, K = 8, separation 2.0, ICS with C = 5 and exponent 1), so
`{}` is a valid config. Unknown keys are rejected. Precedence is command-line
flags > file values > defaults.

    {
      "dataset":    {"source": "blobs", "classes": 2, "dims": 10, "separation": 2.0, "n": 4000,
                     "path": null, "num_classes": null},
      "partition":  {"scheme": "ics", "K": 8, "exponent": 1.0, "radius_C": 5.0,
                     "dirichlet_alpha": 1.0, "sample_fraction": 0.5, "test_fraction": 0.2},
      "federation": {"T": 20, "eta": 0.05, "alpha": 1.0, "beta": 1.0, ...},
      "algos": ["fedakd"], "runs": 1, "seed": 0, "seed_stride": 1, "out": "desk-ics",
      "theory":     {"dims": 5, "base_n": 20000, "client_Cs": [0.25, 1.0, 4.0],
                     "client_As": [10000, 10000, 10000], "seeds": 20, "delta_sigma_scale": 0.05},
      "analyze":    {"algo": "fedavg", "rounds": 10, "grid_points": 512, "densities": true}
    }

`federation` takes any FedConfig field except K (from the partition), seed
and algo (chosen per run).
"""
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from django.conf import settings

from data_gen.partition import HELD_OUT_TEST_SCHEMES, Scheme
from fl_engine.config import Algo, Evaluation, FedConfig


class ConfigError(ValueError):
    pass


class DatasetSource:
    BLOBS = 'blobs'
    CSV = 'csv'


@dataclass(frozen=True)
class DatasetConfig:
    source: str = DatasetSource.BLOBS
    classes: int = 2
    dims: int = 10
    separation: float = 2.0
    n: int = 4000
    path: str | None = None
    num_classes: int | None = None

    def __post_init__(self):
        if self.source not in (DatasetSource.BLOBS, DatasetSource.CSV):
            raise ConfigError(f"dataset.source must be 'blobs' or 'csv', got {self.source!r}")
        if self.source == DatasetSource.CSV and not self.path:
            raise ConfigError("dataset.path is required when dataset.source is 'csv'")
        if self.classes < 2 or self.dims < 1 or self.n < 2:
            raise ConfigError("dataset needs classes >= 2, dims >= 1 and n >= 2")
        if self.separation < 0:
            raise ConfigError("dataset.separation must be nonnegative")


@dataclass(frozen=True)
class PartitionConfig:
    scheme: str = Scheme.ICS.value
    K: int = 8
    exponent: float = 1.0
    radius_C: float = 5.0
    dirichlet_alpha: float = 1.0
    sample_fraction: float = 0.5
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.scheme not in Scheme.values:
            raise ConfigError(f"unknown partition.scheme {self.scheme!r}; choose from {', '.join(Scheme.values)}")
        if self.K < 1:
            raise ConfigError("partition.K must be >= 1")
        if self.exponent <= 0 or self.dirichlet_alpha <= 0:
            raise ConfigError("partition.exponent and partition.dirichlet_alpha must be positive")
        if self.radius_C < 0:
            raise ConfigError("partition.radius_C must be nonnegative")
        if not 0 < self.sample_fraction <= 1 or not 0 < self.test_fraction < 1:
            raise ConfigError("partition.sample_fraction must be in (0, 1] and test_fraction in (0, 1)")


@dataclass(frozen=True)
class TheoryConfig:
    dims: int = 5
    base_n: int = 20000
    client_Cs: tuple = (0.25, 1.0, 4.0)
    client_As: tuple = (10000, 10000, 10000)
    seeds: int = 20
    delta_sigma_scale: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, 'client_Cs', tuple(float(c) for c in self.client_Cs))
        object.__setattr__(self, 'client_As', tuple(int(a) for a in self.client_As))
        if len(self.client_Cs) != len(self.client_As) or not self.client_Cs:
            raise ConfigError("theory.client_Cs and theory.client_As must be nonempty and of equal length")
        if any(c < 0 for c in self.client_Cs):
            raise ConfigError("theory.client_Cs must be nonnegative")
        if any(a < 10 * self.dims for a in self.client_As):
            raise ConfigError(f"theory.client_As must be at least 10 * dims = {10 * self.dims}")
        if self.dims < 1 or self.base_n <= self.dims or self.seeds < 1 or self.delta_sigma_scale < 0:
            raise ConfigError("theory needs dims >= 1, base_n > dims, seeds >= 1, delta_sigma_scale >= 0")


@dataclass(frozen=True)
class AnalyzeConfig:
    algo: str = Algo.FEDAVG.value
    rounds: int = 10
    grid_points: int = 512
    densities: bool = True

    def __post_init__(self):
        if self.algo not in Algo.values:
            raise ConfigError(f"unknown analyze.algo {self.algo!r}")
        if self.rounds < 1 or self.grid_points < 2:
            raise ConfigError("analyze.rounds must be >= 1 and grid_points >= 2")


SECTIONS = {
    'dataset': DatasetConfig,
    'partition': PartitionConfig,
    'theory': TheoryConfig,
    'analyze': AnalyzeConfig,
}
RESERVED_FEDERATION_KEYS = {'K', 'seed', 'algo'}


def parse_algos(value):
    """Accept 'a,b' or a list; order is kept and duplicates dropped"""
    names = value.split(',') if isinstance(value, str) else list(value)
    names = [str(n).strip() for n in names if str(n).strip()]
    unknown = [n for n in names if n not in Algo.values]
    if unknown:
        raise ConfigError(f"unknown algo {', '.join(unknown)}; choose from {', '.join(Algo.values)}")
    if not names:
        raise ConfigError("at least one algo is required")
    return tuple(dict.fromkeys(names))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    federation: dict = field(default_factory=dict)
    algos: tuple = (Algo.FEDAKD.value,)
    runs: int = 1
    seed: int = 0
    seed_stride: int = 1
    out: str = 'desk-ics'
    theory: TheoryConfig = field(default_factory=TheoryConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)

    def __post_init__(self):
        object.__setattr__(self, 'algos', parse_algos(self.algos))
        object.__setattr__(self, 'federation', dict(self.federation))
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.seed < 0 or self.seed_stride < 0:
            raise ConfigError("seed and seed_stride must be nonnegative")
        reserved = RESERVED_FEDERATION_KEYS & set(self.federation)
        if reserved:
            raise ConfigError(f"federation may not set {', '.join(sorted(reserved))}")
        for algo in (Algo.STANDALONE.value, *self.algos):
            self.fed_config(algo, self.seed)

    @classmethod
    def from_dict(cls, document):
        if not isinstance(document, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(document, {f.name for f in fields(cls)}, 'config')
        values = dict(document)
        for name, section in SECTIONS.items():
            if name in values:
                block = values[name]
                if not isinstance(block, dict):
                    raise ConfigError(f"{name} must be an object")
                _reject_unknown(block, {f.name for f in fields(section)}, name)
                values[name] = _build(section, block, name)
        return _build(cls, values, 'config')

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            document = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(document)

    def to_dict(self):
        document = asdict(self)
        document['algos'] = list(self.algos)
        document['theory']['client_Cs'] = list(self.theory.client_Cs)
        document['theory']['client_As'] = list(self.theory.client_As)
        return document

    def manifest_dict(self):
        """The settings that determine the outputs; the output location is left out"""
        document = self.to_dict()
        del document['out']
        return document

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, seed=None, out=None, algos=None, analyze_algo=None):
        changes = {}
        if seed is not None:
            changes['seed'] = seed
        if out is not None:
            changes['out'] = out
        if algos is not None:
            changes['algos'] = algos
        if not changes and analyze_algo is None:
            return self
        try:
            if analyze_algo is not None:
                changes['analyze'] = replace(self.analyze, algo=analyze_algo)
            return replace(self, **changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid flags: {exc}") from exc

    def run_seeds(self):
        return [self.seed + r * self.seed_stride for r in range(self.runs)]

    def default_evaluation(self):
        """Pooled accuracy on the held-out global test set for label-skew schemes, local otherwise"""
        if self.partition.scheme in HELD_OUT_TEST_SCHEMES:
            return Evaluation.POOLED.value
        return Evaluation.LOCAL.value

    def fed_config(self, algo, seed):
        values = {'workers': settings.FEDAKD['WORKERS'], 'evaluation': self.default_evaluation(), **self.federation}
        if algo != Algo.AKD_CORRECTAGG:
            # only the correct-count ablation may override size weighting
            values.pop('agg_weighting', None)
        try:
            return FedConfig(K=self.partition.K, algo=algo, seed=seed, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid federation block: {exc}") from exc

    def output_dir(self):
        out = Path(self.out)
        return out if out.is_absolute() else Path(settings.FEDAKD['OUTPUT_ROOT']) / out


def _reject_unknown(block, allowed, where):
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _build(factory, values, where):
    try:
        return factory(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc
