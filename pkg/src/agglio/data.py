"""Synthetic GLM data, label noise, and CSV ingestion."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .activations import (
    SIGMOID_CLAMP,
    SILU_MIN,
    ActivationSpec,
    Kind,
    activate,
)
from .errors import IngestionError, InvalidArgumentError

# Stream tags for the counter-based generator; each factor of a run draws
# from its own stream so sweeps can vary one factor without reshuffling others.
STREAMS = {"covariates": 1, "gold": 2, "noise": 3, "init": 4, "split": 5, "sampling": 6, "spectrum": 7}

CSV_TARGET_WINDOW = (0.05, 0.95)


def stream(seed: int, tag: str) -> np.random.Generator:
    """Independent Philox stream derived from ``(seed, tag)``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(STREAMS[tag],))
    return np.random.Generator(np.random.Philox(ss))


class Regime(str, enum.Enum):
    NOISELESS = "noiseless"
    PRE = "pre_activation"
    POST = "post_activation"


class Distribution(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BOUNDED_UNIFORM = "bounded_uniform"


class CovariateScale(str, enum.Enum):
    UNIT = "unit"
    INV_SQRT_D = "inv_sqrt_d"


@dataclass(frozen=True)
class NoiseModel:
    """Label noise: ``sigma`` is the std-dev (Gaussian) or half-width (uniform)."""

    regime: Regime = Regime.NOISELESS
    distribution: Distribution = Distribution.GAUSSIAN
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        if self.sigma < 0:
            raise InvalidArgumentError("noise scale must be non-negative")
        if self.regime is Regime.NOISELESS and self.sigma != 0:
            raise InvalidArgumentError("noiseless model must have zero noise scale")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.regime is Regime.NOISELESS:
            return np.zeros(n)
        if self.distribution is Distribution.GAUSSIAN:
            return rng.normal(0.0, self.sigma, size=n)
        return rng.uniform(-self.sigma, self.sigma, size=n)

    def to_dict(self):
        return {"regime": self.regime.value, "distribution": self.distribution.value, "sigma": self.sigma}


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class GoldSpec:
    """How to obtain the gold model; ``values`` selects a fixed vector."""

    d: int
    R: float = 1.0
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.d < 1:
            raise InvalidArgumentError("dimension must be positive")
        if self.R <= 0:
            raise InvalidArgumentError("norm bound R must be positive")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(x) for x in self.values))
            if len(self.values) != self.d:
                raise InvalidArgumentError("fixed gold vector must have length d")

    @classmethod
    def fixed(cls, values: Sequence[float], R: float = 1.0) -> "GoldSpec":
        return cls(d=len(values), R=R, values=tuple(values))


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    activation: ActivationSpec
    w_star: Optional[np.ndarray] = None
    noise: NoiseModel = NOISELESS
    scale: CovariateScale = CovariateScale.UNIT
    R: Optional[float] = None
    seed: Optional[int] = None
    clamp_count: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidArgumentError("covariates must be a non-empty n x d matrix")
        if y.shape != (X.shape[0],):
            raise InvalidArgumentError("labels must have one entry per covariate row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidArgumentError("dataset entries must be finite")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.w_star is not None:
            w = np.array(self.w_star, dtype=np.float64)
            if w.shape != (X.shape[1],):
                raise InvalidArgumentError("gold model must have length d")
            w.flags.writeable = False
            object.__setattr__(self, "w_star", w)
        object.__setattr__(self, "scale", CovariateScale(self.scale))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx], self.y[idx], self.activation, self.w_star, self.noise,
            self.scale, self.R, self.seed, 0, dict(self.meta),
        )

    def split(self, fraction: float, seed: int):
        """Seeded disjoint split into ``(train, validation)``."""
        if not 0.0 <= fraction <= 0.5:
            raise InvalidArgumentError("validation fraction must lie in [0, 0.5]")
        n_val = int(round(fraction * self.n))
        if n_val == 0:
            return self, None
        perm = stream(seed, "split").permutation(self.n)
        return self.subset(np.sort(perm[n_val:])), self.subset(np.sort(perm[:n_val]))

    def export(self, path) -> tuple[Path, Path]:
        """Write ``<path>.csv`` (covariates then label) and ``<path>.json`` metadata."""
        path = Path(path)
        csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
        header = [f"x{j}" for j in range(self.d)] + ["y"]
        np.savetxt(csv_path, np.column_stack([self.X, self.y]), delimiter=",",
                   header=",".join(header), comments="", fmt="%.17g")
        sidecar = {
            "n": self.n,
            "d": self.d,
            "activation": str(self.activation),
            "gold_model": None if self.w_star is None else self.w_star.tolist(),
            "R": self.R,
            "noise": self.noise.to_dict(),
            "covariate_scale": self.scale.value,
            "seed": self.seed,
            "clamp_count": self.clamp_count,
        }
        json_path.write_text(json.dumps(sidecar, indent=2))
        return csv_path, json_path


def _clamp_to_range(activation: ActivationSpec, y: np.ndarray):
    kind = activation.kind
    if kind is Kind.SIGMOID:
        lo, hi = SIGMOID_CLAMP, 1 - SIGMOID_CLAMP
    elif kind is Kind.SOFTPLUS:
        lo, hi = SIGMOID_CLAMP, np.inf
    elif kind is Kind.LEAKY_SOFTPLUS and activation.k == 0.0:
        lo, hi = SIGMOID_CLAMP - np.log(2.0), np.inf
    elif kind is Kind.SILU:
        lo, hi = SILU_MIN, np.inf
    else:
        return y, 0
    out = np.clip(y, lo, hi)
    return out, int(np.count_nonzero(out != y))


def generate_synthetic(
    n: int,
    gold: GoldSpec,
    activation: ActivationSpec,
    noise: NoiseModel = NOISELESS,
    scale: CovariateScale = CovariateScale.INV_SQRT_D,
    seed: int = 0,
) -> Dataset:
    """Draw a synthetic GLM dataset; deterministic for a fixed seed.

    Covariates are standard normal (optionally divided by sqrt(d)), and labels
    follow the noise regime: ``phi(<x, w*>)``, ``phi(<x, w*> + eps)`` or
    ``phi(<x, w*>) + eps``. Post-activation labels that leave the activation's
    range are clamped and counted.
    """
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    d = gold.d
    scale = CovariateScale(scale)
    X = stream(seed, "covariates").standard_normal((n, d))
    if scale is CovariateScale.INV_SQRT_D:
        X /= np.sqrt(d)
    if gold.values is not None:
        w_star = np.array(gold.values)
    else:
        w_star = stream(seed, "gold").standard_normal(d)
    R = max(float(np.linalg.norm(w_star)), gold.R)
    eps = noise.sample(stream(seed, "noise"), n)
    z = X @ w_star
    clamps = 0
    if noise.regime is Regime.PRE:
        y = activate(activation, 1.0, z + eps)
    else:
        y = activate(activation, 1.0, z) + eps
        if noise.regime is Regime.POST:
            y, clamps = _clamp_to_range(activation, y)
    return Dataset(X, y, activation, w_star, noise, scale, R, seed, clamps,
                   {"noise_raw": eps})


def load_csv_regression(path, activation: ActivationSpec) -> Dataset:
    """Read a numeric CSV whose last column is the regression target.

    Covariate columns are standardized; targets are min-max mapped into
    ``[0.05, 0.95]`` and passed through the activation to become labels.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path} is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) < 2:
        raise IngestionError("need at least one covariate column and one target column")
    if not body:
        raise IngestionError("no data rows after the header")
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise IngestionError(f"row {i} has {len(row)} cells, expected {len(header)}", row=i)
        for j, cell in enumerate(row):
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise IngestionError(
                    f"non-numeric cell {cell!r} at row {i}, column {j} ({header[j]})", row=i, column=j
                ) from None
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise IngestionError(f"non-finite cell at row {bad[0] + 2}, column {bad[1]}",
                             row=int(bad[0]) + 2, column=int(bad[1]))
    X, t = data[:, :-1], data[:, -1]
    std = X.std(axis=0)
    flat = np.flatnonzero(std == 0)
    if flat.size:
        j = int(flat[0])
        raise IngestionError(f"covariate column {j} ({header[j]}) has zero variance", column=j)
    X = (X - X.mean(axis=0)) / std
    lo, hi = CSV_TARGET_WINDOW
    span = t.max() - t.min()
    if span == 0:
        raise IngestionError("target column is constant", column=len(header) - 1)
    t_norm = lo + (hi - lo) * (t - t.min()) / span
    y = activate(activation, 1.0, t_norm)
    return Dataset(X, y, activation, None, NOISELESS, CovariateScale.UNIT, None, None, 0,
                   {"normalized_targets": t_norm, "columns": header, "source": str(path)})
