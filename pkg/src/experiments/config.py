"""
Experiment configuration.
Loads a YAML document, layers it over per-benchmark defaults, applies
command-line overrides and validates the result into a frozen tree.
"""

import copy
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

BENCHMARK_IDS = ("car2d-single", "car2d-multi", "elastic-pendulum")
CONTROLLER_ALIASES = {
    "clf": "ClfOnly",
    "clfonly": "ClfOnly",
    "clf-cbf": "ClfCbf",
    "clfcbf": "ClfCbf",
}

CAR_SYSTEM_KEYS = {"benchmark", "sigma", "goal", "initial_state", "obstacles"}
PENDULUM_SYSTEM_KEYS = {"benchmark", "sigma", "goal", "initial_state",
                        "J1", "J2", "Jm", "k", "xi", "theta1_limit"}


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _car_defaults(obstacles) -> Dict[str, Any]:
    return {
        "system": {
            "sigma": 0.05,
            "goal": [4.0, 4.0],
            "initial_state": [0.0, 0.0, 0.0, 0.0],
            "obstacles": obstacles,
        },
        "barrier": {"relative_degree": 2},
        "lyapunov": {"relative_degree": 2, "class_k": 100.0, "decay_rate": 8.0, "decay_saturation": 0.5,
                     "relaxation_decay": 1000.0},
        "qp": {"q_diag": [1000.0, 10.0], "p": 1000.0},
        "simulation": {"horizon": 8.0},
        "ensemble": {"n_trajectories": 20},
    }


def benchmark_defaults(benchmark: str) -> Dict[str, Any]:
    """The full default document for one benchmark."""
    common = {
        "system": {"benchmark": benchmark},
        "controller": {"type": "ClfCbf"},
        "barrier": {"gains": 1.0, "class_k": 1.0},
        "lyapunov": {"gains": 1.0, "class_k": 1.0, "base_relaxation": True,
                     "relaxation_margin": 0.1, "max_doublings": 20,
                     "decay_rate": 0.0, "decay_saturation": None, "relaxation_decay": 0.0},
        "qp": {"u_lower": [-10.0, -10.0], "u_upper": [10.0, 10.0], "max_iter": 50},
        "simulation": {"dt": 0.005},
        "ensemble": {"base_seed": 0, "workers": 1, "stats_window": 1.0},
        "output": {"path": f"results/{benchmark}"},
    }
    if benchmark == "car2d-single":
        specific = _car_defaults([[3.0, 2.5, 0.6]])
    elif benchmark == "car2d-multi":
        specific = _car_defaults([[1.0, 1.0, 0.4], [1.0, 4.0, 0.4], [3.0, 2.5, 0.6]])
    elif benchmark == "elastic-pendulum":
        specific = {
            "system": {
                "sigma": 0.05,
                "goal": [math.pi / 2, 0.0],
                "initial_state": [-math.pi / 2, 0.0, -math.pi / 2, 0.0, 0.0, 0.0, 0.0, 0.0],
                "J1": 1.0, "J2": 0.5, "Jm": 0.1, "k": 50.0, "xi": 0.1,
                "theta1_limit": math.pi,
            },
            "barrier": {"relative_degree": 4},
            "lyapunov": {"relative_degree": 4},
            "qp": {"q_diag": [1.0, 1.0], "p": 1000.0},
            "simulation": {"horizon": 60.0},
            "ensemble": {"n_trajectories": 40},
        }
    else:
        raise ConfigError("system.benchmark", f"unknown benchmark '{benchmark}', expected one of {list(BENCHMARK_IDS)}")
    return _deep_merge(common, specific)


# ---------- typed sections ----------

@dataclass(frozen=True)
class SystemConfig:
    benchmark: str
    sigma: float
    goal: Tuple[float, ...]
    initial_state: Tuple[float, ...]
    obstacles: Tuple[Tuple[float, float, float], ...] = ()
    J1: Optional[float] = None
    J2: Optional[float] = None
    Jm: Optional[float] = None
    k: Optional[float] = None
    xi: Optional[float] = None
    theta1_limit: Optional[float] = None


@dataclass(frozen=True)
class ControllerConfig:
    type: str

    @property
    def enforce_barriers(self) -> bool:
        return self.type == "ClfCbf"


@dataclass(frozen=True)
class BarrierConfig:
    relative_degree: int
    gains: Tuple[float, ...]
    class_k: Tuple[float, ...]


@dataclass(frozen=True)
class LyapunovConfig:
    relative_degree: int
    gains: Tuple[float, ...]
    class_k: Tuple[float, ...]
    base_relaxation: bool
    relaxation_margin: float
    max_doublings: int
    decay_rate: float = 0.0
    decay_saturation: Optional[float] = None
    relaxation_decay: float = 0.0


@dataclass(frozen=True)
class QpConfig:
    q_diag: Tuple[float, ...]
    p: float
    u_lower: Tuple[float, ...]
    u_upper: Tuple[float, ...]
    max_iter: int


@dataclass(frozen=True)
class SimulationConfig:
    dt: float
    horizon: float


@dataclass(frozen=True)
class EnsembleSection:
    n_trajectories: int
    base_seed: int
    workers: int
    stats_window: float


@dataclass(frozen=True)
class OutputConfig:
    path: str


@dataclass(frozen=True)
class EnsembleConfig:
    """Resolved experiment configuration; picklable and hashable."""
    system: SystemConfig
    controller: ControllerConfig
    barrier: BarrierConfig
    lyapunov: LyapunovConfig
    qp: QpConfig
    simulation: SimulationConfig
    ensemble: EnsembleSection
    output: OutputConfig

    @property
    def benchmark(self) -> str:
        return self.system.benchmark

    def to_dict(self) -> Dict[str, Any]:
        """Nested plain-data view, omitting fields that do not apply."""
        doc = _plain(asdict(self))
        doc["system"] = {k: v for k, v in doc["system"].items() if v is not None and v != []}
        return doc

    def metadata(self) -> Dict[str, Any]:
        """Parameters that determine the output data (no worker count or path)."""
        doc = self.to_dict()
        doc["ensemble"].pop("workers")
        doc.pop("output")
        return doc


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ---------- loading ----------

def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_overrides(doc: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    doc = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(dotted, "override must name 'section.field'")
        doc.setdefault(section, {})
        if not isinstance(doc[section], dict):
            raise ConfigError(section, "expected a mapping")
        doc[section][key] = value
    return doc


def read_document(path) -> Dict[str, Any]:
    """Parse a YAML config file into a mapping."""
    path = Path(path)
    try:
        with open(path, "r") as f:
            doc = yaml.safe_load(f)
    except FileNotFoundError:
        logging.error(f"Config file not found: {path}")
        raise ConfigError("config", f"file not found: {path}")
    except yaml.YAMLError as e:
        logging.error(f"Failed to parse {path}: {e}")
        raise ConfigError("config", f"invalid YAML in {path}: {e}")
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config", f"top level of {path} must be a mapping")
    return doc


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> EnsembleConfig:
    """
    Resolve an experiment configuration.

    Args:
        path: YAML file, or None to start from the benchmark defaults
        overrides: Dotted field names mapped to values (None entries ignored),
            e.g. ``{"ensemble.n_trajectories": 20}``

    Returns:
        Validated EnsembleConfig

    Raises:
        ConfigError: naming the offending field
    """
    overrides = dict(overrides or {})
    file_doc = read_document(path) if path is not None else {}

    benchmark = overrides.get("system.benchmark")
    if benchmark is None:
        benchmark = (file_doc.get("system") or {}).get("benchmark")
    if benchmark is None:
        raise ConfigError("system.benchmark", "no benchmark given (use --system or set system.benchmark)")

    doc = _deep_merge(benchmark_defaults(benchmark), file_doc)
    doc = _apply_overrides(doc, overrides)
    config = build_config(doc)
    logging.debug(f"Resolved config for {config.benchmark}: {config.to_dict()}")
    return config


# ---------- validation ----------

class _Section:
    """Reads typed fields out of one document section and rejects leftovers."""

    def __init__(self, doc: Mapping[str, Any], name: str, allowed):
        raw = doc.get(name, {})
        if not isinstance(raw, Mapping):
            raise ConfigError(name, "expected a mapping")
        unknown = sorted(set(raw) - set(allowed))
        if unknown:
            raise ConfigError(f"{name}.{unknown[0]}", "unknown field")
        self.raw = raw
        self.name = name

    def field(self, key: str) -> str:
        return f"{self.name}.{key}"

    def get(self, key: str, default=None):
        return self.raw.get(key, default)

    def number(self, key: str, positive: bool = False, nonnegative: bool = False) -> float:
        value = self.raw.get(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(self.field(key), f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(self.field(key), f"must be finite, got {value}")
        if positive and not value > 0:
            raise ConfigError(self.field(key), f"must be positive, got {value}")
        if nonnegative and value < 0:
            raise ConfigError(self.field(key), f"must be nonnegative, got {value}")
        return value

    def optional_number(self, key: str) -> Optional[float]:
        """A positive number, or None when the field is null or absent."""
        if self.raw.get(key) is None:
            return None
        return self.number(key, positive=True)

    def integer(self, key: str, minimum: int = 0) -> int:
        value = self.raw.get(key)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(self.field(key), f"expected an integer, got {value!r}")
        if value < minimum:
            raise ConfigError(self.field(key), f"must be >= {minimum}, got {value}")
        return value

    def flag(self, key: str) -> bool:
        value = self.raw.get(key)
        if not isinstance(value, bool):
            raise ConfigError(self.field(key), f"expected true/false, got {value!r}")
        return value

    def vector(self, key: str, length: Optional[int] = None, allow_inf: bool = False) -> Tuple[float, ...]:
        value = self.raw.get(key)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(self.field(key), f"expected a list of numbers, got {value!r}")
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(self.field(key), f"expected numbers, got {v!r}")
            if not allow_inf and not math.isfinite(v):
                raise ConfigError(self.field(key), f"entries must be finite, got {v}")
            out.append(float(v))
        if length is not None and len(out) != length:
            raise ConfigError(self.field(key), f"expected {length} entries, got {len(out)}")
        return tuple(out)

    def per_level(self, key: str, count: int) -> Tuple[float, ...]:
        """A scalar broadcast to ``count`` levels, or an explicit list of that length."""
        value = self.raw.get(key)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            values = (float(value),) * count
        else:
            values = self.vector(key, count)
        if any(not v > 0 for v in values):
            raise ConfigError(self.field(key), f"entries must be positive, got {list(values)}")
        return values


def build_config(doc: Mapping[str, Any]) -> EnsembleConfig:
    """Validate a fully merged document."""
    sections = {"system", "controller", "barrier", "lyapunov", "qp", "simulation", "ensemble", "output"}
    unknown = sorted(set(doc) - sections)
    if unknown:
        raise ConfigError(unknown[0], "unknown section")

    benchmark = (doc.get("system") or {}).get("benchmark")
    if benchmark not in BENCHMARK_IDS:
        raise ConfigError("system.benchmark", f"unknown benchmark '{benchmark}', expected one of {list(BENCHMARK_IDS)}")
    is_car = benchmark.startswith("car2d")
    n_x, n_u = (4, 2) if is_car else (8, 2)

    s = _Section(doc, "system", CAR_SYSTEM_KEYS if is_car else PENDULUM_SYSTEM_KEYS)
    extra = {}
    obstacles: Tuple[Tuple[float, float, float], ...] = ()
    if is_car:
        raw = s.get("obstacles")
        if not isinstance(raw, (list, tuple)):
            raise ConfigError("system.obstacles", "expected a list of [x, y, radius]")
        parsed = []
        for i, entry in enumerate(raw):
            if (not isinstance(entry, (list, tuple)) or len(entry) != 3
                    or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in entry)):
                raise ConfigError(f"system.obstacles[{i}]", f"expected [x, y, radius], got {entry!r}")
            if not entry[2] > 0:
                raise ConfigError(f"system.obstacles[{i}]", f"radius must be positive, got {entry[2]}")
            parsed.append(tuple(float(v) for v in entry))
        obstacles = tuple(parsed)
    else:
        for key in ("J1", "J2", "Jm", "k", "theta1_limit"):
            extra[key] = s.number(key, positive=True)
        extra["xi"] = s.number("xi", nonnegative=True)
        if not extra["J1"] > extra["J2"]:
            raise ConfigError("system.J1", f"must exceed J2 ({extra['J2']}), got {extra['J1']}")
    system = SystemConfig(
        benchmark=benchmark,
        sigma=s.number("sigma", nonnegative=True),
        goal=s.vector("goal", 2),
        initial_state=s.vector("initial_state", n_x),
        obstacles=obstacles,
        **extra,
    )

    c = _Section(doc, "controller", {"type"})
    kind = c.get("type")
    kind = CONTROLLER_ALIASES.get(str(kind).lower(), kind)
    if kind not in ("ClfOnly", "ClfCbf"):
        raise ConfigError("controller.type", f"expected clf or clf-cbf, got {c.get('type')!r}")
    controller = ControllerConfig(kind)

    b = _Section(doc, "barrier", {"relative_degree", "gains", "class_k"})
    r_b = b.integer("relative_degree", minimum=1)
    barrier = BarrierConfig(r_b, b.per_level("gains", r_b), b.per_level("class_k", r_b))

    lsec = _Section(doc, "lyapunov", {"relative_degree", "gains", "class_k", "base_relaxation",
                                      "relaxation_margin", "max_doublings", "decay_rate",
                                      "decay_saturation", "relaxation_decay"})
    r_l = lsec.integer("relative_degree", minimum=1)
    lyapunov = LyapunovConfig(
        relative_degree=r_l,
        gains=lsec.per_level("gains", r_l - 1),
        class_k=lsec.per_level("class_k", r_l - 1),
        base_relaxation=lsec.flag("base_relaxation"),
        relaxation_margin=lsec.number("relaxation_margin", positive=True),
        max_doublings=lsec.integer("max_doublings", minimum=0),
        decay_rate=lsec.number("decay_rate", nonnegative=True),
        decay_saturation=lsec.optional_number("decay_saturation"),
        relaxation_decay=lsec.number("relaxation_decay", nonnegative=True),
    )

    q = _Section(doc, "qp", {"q_diag", "p", "u_lower", "u_upper", "max_iter"})
    q_diag = q.vector("q_diag", n_u)
    if any(not v > 0 for v in q_diag):
        raise ConfigError("qp.q_diag", f"Q must be positive definite, got diagonal {list(q_diag)}")
    u_lower = q.vector("u_lower", n_u, allow_inf=True)
    u_upper = q.vector("u_upper", n_u, allow_inf=True)
    if any(lo >= hi for lo, hi in zip(u_lower, u_upper)):
        raise ConfigError("qp.u_lower", f"must be below qp.u_upper componentwise: {list(u_lower)} vs {list(u_upper)}")
    qp = QpConfig(q_diag, q.number("p", positive=True), u_lower, u_upper, q.integer("max_iter", minimum=1))

    sim = _Section(doc, "simulation", {"dt", "horizon"})
    simulation = SimulationConfig(sim.number("dt", positive=True), sim.number("horizon", positive=True))

    e = _Section(doc, "ensemble", {"n_trajectories", "base_seed", "workers", "stats_window"})
    ensemble = EnsembleSection(
        n_trajectories=e.integer("n_trajectories", minimum=1),
        base_seed=e.integer("base_seed", minimum=0),
        workers=e.integer("workers", minimum=1),
        stats_window=e.number("stats_window", nonnegative=True),
    )

    o = _Section(doc, "output", {"path"})
    path = o.get("path")
    if not isinstance(path, str) or not path:
        raise ConfigError("output.path", f"expected a directory path, got {path!r}")

    return EnsembleConfig(system, controller, barrier, lyapunov, qp, simulation, ensemble, OutputConfig(path))
