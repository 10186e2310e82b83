"""Experiment runner: seeded data, grid search on a validation split, traces and summaries."""

from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .activations import ActivationSpec
from .data import (
    CovariateScale,
    GoldSpec,
    NoiseModel,
    generate_synthetic,
    load_csv_regression,
)
from .errors import AgglioError, ConfigError, InvalidArgumentError
from .objective import GraduatedObjective
from .optimizer import GD, NGD, SGD, SVRG, Adam, AgglioConfig, Yogi, agglio_run
from .theory import verify_local_spectrum


class Experiment(str, enum.Enum):
    CONVERGENCE = "convergence"
    VARIANT_ABLATION = "variant_ablation"
    SENSITIVITY = "sensitivity"
    CONSISTENCY = "consistency"
    DIMENSION_SWEEP = "dimension_sweep"
    NOISE_SWEEP = "noise_sweep"
    REAL_DATA = "real_data"
    SPECTRUM_MAP = "spectrum_map"


# x-axis of each sweep experiment
SWEEP_PARAMETER = {
    Experiment.CONSISTENCY: "n",
    Experiment.DIMENSION_SWEEP: "d",
    Experiment.NOISE_SWEEP: "sigma",
}

METHODS = ("agglio-gd", "agglio-sgd", "agglio-svrg", "agglio-adam",
           "gd", "sgd", "adam", "yogi", "ngd")

# grid keys accepted by every method, plus the strategy-specific ones
_COMMON_KEYS = {"eta", "T", "eta_mode", "epoch_length", "batch_size"}
_AGGLIO_KEYS = {"tau0", "beta", "tau_max"}
_ADAPTIVE_KEYS = {"alpha", "beta1", "beta2", "eps"}


def default_grids() -> dict:
    """Hyperparameter grids searched for each method family."""
    agglio = {
        "eta": np.linspace(1, 500, 10).tolist(),
        "tau0": [1e-1, 1e-2, 1e-3, 1e-4],
        "beta": np.linspace(1.01, 2, 5).tolist(),
    }
    adaptive = {
        "alpha": np.linspace(0.01, 0.2, 5).tolist(),
        "beta1": np.linspace(0.01, 0.9, 5).tolist(),
        "beta2": np.linspace(0.01, 0.9, 5).tolist(),
        "eps": [1e-3, 1e-5, 1e-8],
    }
    return {
        "agglio": agglio,
        "adam": adaptive,
        "yogi": {k: list(v) for k, v in adaptive.items()},
        "ngd": {"step": np.linspace(0.01, 10, 20).tolist()},
        "gd": {"eta": list(agglio["eta"])},
        "sgd": {"eta": list(agglio["eta"])},
    }


def _default_grid_for(method: str) -> dict:
    grids = default_grids()
    if method.startswith("agglio-"):
        return grids["agglio"]
    return grids[method]


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DataConfig:
    n: int = 1000
    d: int = 50
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    scale: CovariateScale = CovariateScale.INV_SQRT_D
    R: float = 1.0
    path: Optional[str] = None


@dataclass
class MethodConfig:
    name: str
    grid: dict
    params: dict = field(default_factory=dict)

    def points(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


@dataclass
class SpectrumConfig:
    taus: list = field(default_factory=lambda: [0.05, 0.25, 1.0])
    radii: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    num_samples: int = 20


@dataclass
class ExperimentConfig:
    experiment: Experiment
    data: DataConfig
    seeds: list
    methods: list
    validation_fraction: float = 0.2
    T: int = 500
    threshold: float = 1e-6
    sweep_values: Optional[list] = None
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    output: str = "results"
    threads: int = 1

    def __post_init__(self):
        self.experiment = Experiment(self.experiment)
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ConfigError("validation_fraction must lie in [0, 0.5]")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.experiment is not Experiment.SPECTRUM_MAP and not self.methods:
            raise ConfigError("method list must be non-empty")
        for m in self.methods:
            if m.name not in METHODS:
                raise ConfigError(f"unknown method {m.name!r}; choose from {', '.join(METHODS)}")
            if not m.grid or any(not isinstance(v, list) or not v for v in m.grid.values()):
                raise ConfigError(f"grid for {m.name} must map names to non-empty lists")
            allowed = _COMMON_KEYS | {"step"}
            if m.name.startswith("agglio-"):
                allowed |= _AGGLIO_KEYS
            if m.name.endswith(("adam", "yogi")):
                allowed |= _ADAPTIVE_KEYS
            unknown = (set(m.grid) | set(m.params)) - allowed
            if unknown:
                raise ConfigError(f"unknown hyperparameters for {m.name}: {sorted(unknown)}")
        if self.experiment in SWEEP_PARAMETER and not self.sweep_values:
            raise ConfigError(f"{self.experiment.value} needs sweep values")
        if self.experiment is Experiment.REAL_DATA and not self.data.path:
            raise ConfigError("real_data needs data.path")


def _num(x):
    # yaml reads 1e-6 as a string; accept it anyway
    if isinstance(x, str):
        try:
            return float(x)
        except ValueError:
            return x
    if isinstance(x, list):
        return [_num(v) for v in x]
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    return x


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from parsed YAML/JSON."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = _num(raw)
    known = {"experiment", "data", "seeds", "methods", "validation_fraction", "T",
             "threshold", "sweep", "spectrum", "output", "threads"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        experiment = Experiment(raw.get("experiment", ""))
    except ValueError:
        raise ConfigError(f"unknown experiment {raw.get('experiment')!r}") from None
    try:
        d = dict(raw.get("data", {}))
        noise = NoiseModel(**d.pop("noise", {}))
        data = DataConfig(
            n=int(d.pop("n", 1000)),
            d=int(d.pop("d", 50)),
            activation=ActivationSpec.parse(str(d.pop("activation", "sigmoid"))),
            noise=noise,
            scale=CovariateScale(d.pop("scale", "inv_sqrt_d")),
            R=float(d.pop("R", 1.0)),
            path=d.pop("path", None),
        )
        if d:
            raise ConfigError(f"unknown data keys: {sorted(d)}")
        methods = []
        for entry in raw.get("methods", []):
            if isinstance(entry, str):
                entry = {"name": entry}
            name = entry["name"]
            grid = entry.get("grid", "default")
            if grid == "default":
                grid = _default_grid_for(name) if name in METHODS else {}
            grid = {k: v if isinstance(v, list) else [v] for k, v in grid.items()}
            methods.append(MethodConfig(name, grid, dict(entry.get("params", {}))))
        sweep = raw.get("sweep")
        sweep_values = None
        if sweep is not None:
            sweep_values = sweep["values"] if isinstance(sweep, dict) else list(sweep)
        spectrum = SpectrumConfig(**raw.get("spectrum", {}))
        return ExperimentConfig(
            experiment=experiment,
            data=data,
            seeds=[int(s) for s in raw.get("seeds", [0])],
            methods=methods,
            validation_fraction=float(raw.get("validation_fraction", 0.2)),
            T=int(raw.get("T", 500 if noise.sigma == 0 else 2000)),
            threshold=float(raw.get("threshold", 1e-6)),
            sweep_values=sweep_values,
            spectrum=spectrum,
            output=str(raw.get("output", "results")),
            threads=int(raw.get("threads", 1)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# results


@dataclass
class ResultRow:
    experiment: str
    method: str
    hyperparameters: dict
    seed: int
    x: Optional[float] = None
    final_recovery_error: Optional[float] = None
    final_loss: Optional[float] = None
    validation_loss: Optional[float] = None
    time_to_threshold: Optional[float] = None
    trace_path: Optional[str] = None
    status: str = "ok"
    selected: bool = False
    extra: dict = field(default_factory=dict)

    WALL_CLOCK = ("time_to_threshold",)

    def deterministic(self) -> dict:
        out = asdict(self)
        for key in self.WALL_CLOCK:
            out.pop(key)
        return out


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.status != "ok"]

    def deterministic(self) -> list:
        return [r.deterministic() for r in self.rows]

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.rows], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        return cls([ResultRow(**rec) for rec in json.loads(text)])

    def selected(self) -> list:
        return [r for r in self.rows if r.selected]


SUMMARY_COLUMNS = ("experiment", "method", "hyperparameters", "seed", "x",
                   "final_recovery_error", "final_loss", "validation_loss",
                   "time_to_threshold", "trace_path", "status", "selected")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _tidy_rows(table: ResultTable) -> list:
    groups: dict = {}
    for r in table.rows:
        if not r.selected:
            continue
        groups.setdefault((r.x, r.method), []).append(r)
    out = []
    for (x, method), rows in groups.items():
        errs = [r.final_recovery_error for r in rows if r.final_recovery_error is not None]
        losses = [r.final_loss for r in rows if r.final_loss is not None]
        out.append({
            "x": x,
            "method": method,
            "seeds": len(rows),
            "median_recovery_error": float(np.median(errs)) if errs else None,
            "median_final_loss": float(np.median(losses)) if losses else None,
        })
    return out


def emit_summary(table: ResultTable, fmt: str = "csv", out_dir=".") -> Path:
    """Write ``summary.csv``/``summary.json``; sweep tables also get a tidy ``tidy.csv``."""
    if not table.rows:
        raise InvalidArgumentError("cannot summarize an empty table")
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise InvalidArgumentError("format must be csv or json")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / "summary.json"
        path.write_text(table.to_json())
    else:
        path = out_dir / "summary.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_COLUMNS)
            for r in table.rows:
                writer.writerow([_cell(getattr(r, c)) for c in SUMMARY_COLUMNS])
    if any(r.x is not None for r in table.rows):
        tidy = _tidy_rows(table)
        with (out_dir / "tidy.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["x", "method", "seeds", "median_recovery_error",
                                                    "median_final_loss"])
            writer.writeheader()
            for rec in tidy:
                writer.writerow({k: _cell(v) for k, v in rec.items()})
    return path


# ---------------------------------------------------------------------------
# running


def build_run_config(method: str, point: dict, params: dict, T: int) -> AgglioConfig:
    """Translate a method name and one grid point into an :class:`AgglioConfig`."""
    hp = {**params, **point}
    eta = hp.pop("eta", hp.pop("alpha", hp.pop("step", 1.0)))
    batch = hp.pop("batch_size", 50)
    adaptive = {k: hp.pop(k) for k in ("beta1", "beta2", "eps") if k in hp}
    family = method.removeprefix("agglio-")
    if family == "gd":
        strategy = GD()
    elif family == "sgd":
        strategy = SGD(batch_size=int(batch))
    elif family == "svrg":
        strategy = SVRG(batch_size=int(batch))
    elif family == "ngd":
        strategy = NGD(batch_size=int(batch))
    elif family == "adam":
        strategy = Adam(batch_size=int(batch), **adaptive)
    elif family == "yogi":
        strategy = Yogi(batch_size=int(batch), **adaptive)
    else:
        raise ConfigError(f"unknown method {method!r}")
    kwargs = dict(eta=float(eta), strategy=strategy, T=int(hp.pop("T", T)))
    if "eta_mode" in hp:
        kwargs["eta_mode"] = hp.pop("eta_mode")
    if "epoch_length" in hp:
        el = hp.pop("epoch_length")
        kwargs["epoch_length"] = el if isinstance(el, str) else int(el)
    if method.startswith("agglio-"):
        kwargs.update(tau0=float(hp.pop("tau0", 0.01)), tau_max=float(hp.pop("tau_max", 1.0)))
        beta = hp.pop("beta", 1.2)
        kwargs["beta"] = beta if isinstance(beta, str) else float(beta)
    else:
        kwargs.update(tau0=1.0, tau_max=1.0)
    try:
        return AgglioConfig(**kwargs)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _dataset_for(config: ExperimentConfig, seed: int, x):
    dc = config.data
    if config.experiment is Experiment.REAL_DATA:
        return load_csv_regression(dc.path, dc.activation)
    n, d, noise = dc.n, dc.d, dc.noise
    param = SWEEP_PARAMETER.get(config.experiment)
    if param == "n":
        n = int(x)
    elif param == "d":
        d = int(x)
    elif param == "sigma":
        noise = NoiseModel(noise.regime, noise.distribution, float(x))
    return generate_synthetic(n, GoldSpec(d, dc.R), dc.activation, noise, dc.scale, seed)


def _slug(value) -> str:
    return str(value).replace(".", "p").replace("-", "m")


def _run_cell(config, method, index, point, seed, x, train, val, trace_dir) -> ResultRow:
    row = ResultRow(config.experiment.value, method.name, dict(point), seed,
                    None if x is None else float(x))
    try:
        run_cfg = build_run_config(method.name, point, method.params, config.T)
        trace = agglio_run(train, train.activation, run_cfg, seed)
    except AgglioError as exc:
        row.status = f"failed: {type(exc).__name__}: {exc}"
        return row
    name = f"{method.name}_g{index}_s{seed}" + ("" if x is None else f"_x{_slug(x)}") + ".csv"
    row.trace_path = str(trace.to_csv(trace_dir / name))
    row.final_loss = trace.final_loss
    row.final_recovery_error = trace.final_error if train.w_star is not None else None
    column = "recovery_error" if train.w_star is not None else "loss_full"
    row.time_to_threshold = trace.time_to(config.threshold, column)
    if val is not None:
        row.validation_loss = GraduatedObjective(val, val.activation, 1.0).loss(trace.w_final)
    return row


def _select(rows: list):
    """Mark, per (method, seed, x), the grid point with the lowest validation loss."""
    best: dict = {}
    for i, r in enumerate(rows):
        if r.status != "ok":
            continue
        score = r.validation_loss if r.validation_loss is not None else r.final_loss
        if score is None or not math.isfinite(score):
            continue
        key = (r.method, r.seed, r.x)
        if key not in best or score < best[key][0]:
            best[key] = (score, i)
    for _, i in best.values():
        rows[i].selected = True


def _sensitivity_points(method: MethodConfig) -> list:
    # one-at-a-time: vary each parameter over its list, others held at the first value
    base = {k: v[0] for k, v in method.grid.items()}
    points, seen = [], set()
    for key, values in method.grid.items():
        for v in values:
            p = dict(base, **{key: v})
            tag = json.dumps(p, sort_keys=True)
            if tag not in seen:
                seen.add(tag)
                points.append(p)
    return points


def _run_spectrum(config: ExperimentConfig, out_dir: Path) -> ResultTable:
    table = ResultTable()
    heat = []
    dc = config.data
    for seed in config.seeds:
        ds = generate_synthetic(dc.n, GoldSpec(dc.d, dc.R), dc.activation, dc.noise, dc.scale, seed)
        for tau in config.spectrum.taus:
            for r in config.spectrum.radii:
                rep = verify_local_spectrum(ds, dc.activation, float(tau), ds.w_star, float(r),
                                            config.spectrum.num_samples, seed)
                extra = {"lambda_min": rep.lambda_min, "lambda_max": rep.lambda_max}
                table.rows.append(ResultRow(config.experiment.value, "spectrum",
                                            {"tau": float(tau), "r": float(r)}, seed, extra=extra))
                heat.append((seed, tau, r, rep.lambda_min, rep.lambda_max))
    with (out_dir / "spectrum_heatmap.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "tau", "r", "lambda_min", "lambda_max"])
        writer.writerows([[s, repr(float(t)), repr(float(r)), repr(a), repr(b)] for s, t, r, a, b in heat])
    return table


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Run every (method, grid point, seed) cell and return the assembled table.

    Rows appear in config order regardless of ``threads``. Failed cells are
    recorded with a ``failed: ...`` status instead of aborting the run.
    """
    out_dir = Path(config.output)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        trace_dir = out_dir / "traces"
        trace_dir.mkdir(exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc
    if config.experiment is Experiment.SPECTRUM_MAP:
        return _run_spectrum(config, out_dir)

    xs = config.sweep_values if config.experiment in SWEEP_PARAMETER else [None]
    jobs = []
    for x in xs:
        for seed in config.seeds:
            data = _dataset_for(config, seed, x)
            train, val = data.split(config.validation_fraction, seed)
            for method in config.methods:
                if config.experiment is Experiment.SENSITIVITY:
                    points = _sensitivity_points(method)
                else:
                    points = method.points()
                for index, point in enumerate(points):
                    jobs.append((config, method, index, point, seed, x, train, val, trace_dir))
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            rows = list(pool.map(lambda job: _run_cell(*job), jobs))
    else:
        rows = [_run_cell(*job) for job in jobs]
    _select(rows)
    return ResultTable(rows)
