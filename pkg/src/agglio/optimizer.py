"""The graduated outer loop with pluggable descent strategies.

One outer step works at a fixed temperature ``tau_t``: it runs ``I_t`` inner
steps of the chosen strategy on ``L_{tau_t}`` (one full-gradient step for the
plain GD variant) and then raises the temperature to
``min(beta * tau_t, tau_max)``. Running with ``tau0 = tau_max = 1`` gives the
ungraduated baselines.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .activations import ActivationSpec, Kind
from .data import Dataset, stream
from .errors import DivergenceError, InvalidArgumentError
from .objective import GraduatedObjective
from .theory import (
    effective_geometry,
    elsc_constants,
    gd_schedule,
    sgd_schedule,
    sigmoid_gd_schedule,
)

TRACE_COLUMNS = ("t", "inner_iter", "tau", "loss_tau", "loss_full", "recovery_error",
                 "grad_norm", "elapsed_s")

# ---------------------------------------------------------------------------
# step strategies


@dataclass(frozen=True)
class GD:
    batch_size: Optional[int] = None
    name = "gd"


@dataclass(frozen=True)
class SGD:
    batch_size: int = 1
    name = "sgd"


@dataclass(frozen=True)
class SVRG:
    """Variance-reduced SGD; the anchor is refreshed at every temperature level."""

    batch_size: int = 1
    epoch_len: Optional[int] = None
    name = "svrg"


@dataclass(frozen=True)
class NGD:
    batch_size: Optional[int] = None
    name = "ngd"


@dataclass(frozen=True)
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: Optional[int] = None
    m: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    v: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    steps: int = 0
    name = "adam"


@dataclass(frozen=True)
class Yogi(Adam):
    name = "yogi"


StepStrategy = Union[GD, SGD, SVRG, NGD, Adam, Yogi]


def make_strategy(name: str, **params) -> StepStrategy:
    classes = {"gd": GD, "sgd": SGD, "svrg": SVRG, "ngd": NGD, "adam": Adam, "yogi": Yogi}
    try:
        cls = classes[name.lower()]
    except KeyError:
        raise InvalidArgumentError(f"unknown step strategy {name!r}") from None
    return cls(**params)


def apply_step(strategy: StepStrategy, w, g, eta: float):
    """One descent step; returns the new model and the updated strategy state."""
    if not eta > 0:
        raise InvalidArgumentError(f"step length must be positive, got {eta}")
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape:
        raise InvalidArgumentError("model and gradient dimensions differ")
    if isinstance(strategy, Adam):
        b1, b2 = strategy.beta1, strategy.beta2
        m = np.zeros_like(w) if strategy.m is None else strategy.m
        v = np.zeros_like(w) if strategy.v is None else strategy.v
        t = strategy.steps + 1
        g2 = g * g
        m = b1 * m + (1 - b1) * g
        if isinstance(strategy, Yogi):
            v = v - (1 - b2) * np.sign(v - g2) * g2
        else:
            v = b2 * v + (1 - b2) * g2
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        w_new = w - eta * m_hat / (np.sqrt(v_hat) + strategy.eps)
        return w_new, replace(strategy, m=m, v=v, steps=t)
    if isinstance(strategy, NGD):
        norm = np.linalg.norm(g)
        if norm == 0:
            return w.copy(), strategy
        return w - eta * g / norm, strategy
    return w - eta * g, strategy


# ---------------------------------------------------------------------------
# configuration


ETA_MODES = ("fixed", "gd_bound", "sgd_bound", "tau_scaled")


@dataclass
class StopRule:
    target_error: Optional[float] = None
    target_loss: Optional[float] = None
    max_seconds: Optional[float] = None


@dataclass
class AgglioConfig:
    """Hyperparameters of one graduated run.

    ``eta_mode`` picks the step length: ``fixed`` uses ``eta``; ``gd_bound``
    and ``sgd_bound`` derive it from the strong convexity/smoothness constants;
    ``tau_scaled`` uses ``eta / tau_t**2``, the temperature dependence of the
    sigmoid closed-form step. ``beta`` may be a number or ``"gd_bound"``, and
    ``epoch_length`` a count, ``"sgd_bound"`` or ``None`` (one step for
    full-batch strategies, one pass over the data otherwise).
    ``init`` is ``"zero"``, ``"scaled_normal"`` (10 N(0, I)/sqrt(d)), ``"bounded"``
    (uniform on the sphere of radius ``R``) or an explicit vector.
    """

    tau0: float = 0.01
    beta: Union[float, str] = 1.2
    eta: float = 1.0
    eta_mode: str = "fixed"
    tau_max: float = 1.0
    T: int = 500
    epoch_length: Union[int, str, None] = None
    max_epoch_length: int = 100_000
    strategy: StepStrategy = field(default_factory=GD)
    init: Union[str, np.ndarray, list] = "scaled_normal"
    R: Optional[float] = None
    delta: float = 0.1
    stop: StopRule = field(default_factory=StopRule)
    divergence_factor: float = 1e6
    record_every: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.tau0 <= self.tau_max <= 1:
            raise InvalidArgumentError("need 0 < tau0 <= tau_max <= 1")
        if not (self.beta == "gd_bound" or (isinstance(self.beta, (int, float)) and self.beta > 1)):
            raise InvalidArgumentError("beta must exceed 1 or be 'gd_bound'")
        if self.eta_mode not in ETA_MODES:
            raise InvalidArgumentError(f"eta_mode must be one of {ETA_MODES}")
        if self.eta_mode in ("fixed", "tau_scaled") and not self.eta > 0:
            raise InvalidArgumentError("step length must be positive")
        if self.T < 1:
            raise InvalidArgumentError("T must be at least 1")
        el = self.epoch_length
        if not (el is None or el == "sgd_bound" or (isinstance(el, int) and el >= 1)):
            raise InvalidArgumentError("epoch_length must be a positive count, 'sgd_bound' or None")


# ---------------------------------------------------------------------------
# trace


@dataclass
class Trace:
    records: list = field(default_factory=list)
    w_final: Optional[np.ndarray] = None
    events: list = field(default_factory=list)
    stopped: str = "budget"

    def column(self, name: str) -> np.ndarray:
        return np.array([rec[name] for rec in self.records], dtype=float)

    @property
    def taus(self) -> np.ndarray:
        return self.column("tau")

    @property
    def final_error(self) -> float:
        return self.records[-1]["recovery_error"]

    @property
    def final_loss(self) -> float:
        return self.records[-1]["loss_full"]

    def time_to(self, threshold: float, column: str = "recovery_error") -> Optional[float]:
        """Elapsed seconds at the first record whose ``column`` is at most ``threshold``."""
        for rec in self.records:
            if rec[column] is not None and rec[column] <= threshold:
                return rec["elapsed_s"]
        return None

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for rec in self.records:
                writer.writerow(["" if rec[c] is None else repr(rec[c]) for c in TRACE_COLUMNS])
        return path


# ---------------------------------------------------------------------------
# schedules


def _resolve_R(dataset: Dataset, config: AgglioConfig) -> float:
    if config.R is not None:
        return float(config.R)
    if dataset.R is not None:
        return float(dataset.R)
    return 1.0


def estimate_gradient_noise(objective: GraduatedObjective, w, batch_size: int,
                            rng: np.random.Generator, num: int = 100) -> float:
    """Mean squared deviation of ``num`` random minibatch gradients from the full gradient."""
    full = objective.gradient(w)
    total = 0.0
    for _ in range(num):
        batch = rng.choice(objective.n, size=batch_size, replace=False)
        diff = objective.stochastic_gradient(w, batch) - full
        total += float(diff @ diff)
    return total / num


def derive_schedule(dataset: Dataset, spec: ActivationSpec, config: AgglioConfig, w_t,
                    tau_t: float, r_t: float, objective: GraduatedObjective | None = None,
                    rng: np.random.Generator | None = None):
    """Concrete ``(eta_t, beta_t, I_t)`` for the outer step at temperature ``tau_t``.

    ``r_t`` is the radius (in model space) of the ball assumed to contain the
    gold model around the current iterate.
    """
    R = _resolve_R(dataset, config)
    R_eff, r_eff, curv = effective_geometry(dataset, R, r_t)
    strategy = config.strategy
    full_batch = getattr(strategy, "batch_size", None) is None
    beta = config.beta
    eta = config.eta

    if config.eta_mode == "gd_bound" or beta == "gd_bound":
        if spec.kind is Kind.SIGMOID:
            eta1, beta1 = sigmoid_gd_schedule(tau_t, max(R_eff, 1e-12))
        else:
            eta1, beta1 = gd_schedule(elsc_constants(spec, tau_t, r_eff, R_eff))
        if config.eta_mode == "gd_bound":
            eta = eta1 / curv
        if beta == "gd_bound":
            beta = beta1
    elif config.eta_mode == "tau_scaled":
        eta = config.eta / tau_t**2

    if config.epoch_length is None:
        if isinstance(strategy, SVRG) and strategy.epoch_len:
            I = strategy.epoch_len
        else:
            I = 1 if full_batch else max(1, math.ceil(dataset.n / strategy.batch_size))
    elif config.epoch_length == "sgd_bound" or config.eta_mode == "sgd_bound":
        I = None
    else:
        I = int(config.epoch_length)

    if config.eta_mode == "sgd_bound" or config.epoch_length == "sgd_bound":
        if objective is None:
            objective = GraduatedObjective(dataset, spec, tau_t)
        if rng is None:
            rng = stream(0, "sampling")
        noise = dataset.noise
        bounds = elsc_constants(spec, tau_t, r_eff, R_eff, noise.sigma, noise.regime, dataset.d)
        b = bounds
        scaled = type(b)(b.lam * curv, b.Lam * curv, r_t, b.tau, R, b.m_r, b.sigma, b.regime)
        batch = 1 if full_batch else strategy.batch_size
        s2 = max(estimate_gradient_noise(objective, w_t, batch, rng), 1e-300)
        B = max(objective.loss(w_t), 1e-300)
        beta_f = float(beta) if beta != "gd_bound" else math.exp(b.lam / b.Lam)
        eta4, I4 = sgd_schedule(scaled, s2, B, r_t, beta_f, config.T, config.delta)
        if config.eta_mode == "sgd_bound":
            eta = eta4
        if config.epoch_length == "sgd_bound" or I is None:
            I = I4
    return float(eta), float(beta), int(I)


# ---------------------------------------------------------------------------
# main loop


def initial_model(config: AgglioConfig, d: int, R: float, seed: int) -> np.ndarray:
    init = config.init
    if isinstance(init, str):
        rng = stream(seed, "init")
        if init == "zero":
            return np.zeros(d)
        if init == "scaled_normal":
            return 10.0 * rng.standard_normal(d) / math.sqrt(d)
        if init == "bounded":
            g = rng.standard_normal(d)
            return R * g / np.linalg.norm(g)
        raise InvalidArgumentError(f"unknown init {init!r}")
    w0 = np.array(init, dtype=np.float64)
    if w0.shape != (d,):
        raise InvalidArgumentError("explicit init must have length d")
    return w0


class _BatchSampler:
    """Minibatches drawn without replacement from a fresh permutation per pass."""

    def __init__(self, n: int, size: int, rng: np.random.Generator):
        if not 1 <= size <= n:
            raise InvalidArgumentError(f"batch size must lie in [1, {n}]")
        self.n, self.size, self.rng = n, size, rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._perm[self._pos:self._pos + self.size]
        self._pos += self.size
        return batch


def agglio_run(dataset: Dataset, spec: ActivationSpec | None, config: AgglioConfig,
               seed: int = 0) -> Trace:
    """Run graduated descent and return the full trace.

    Raises :class:`DivergenceError` if the iterate becomes non-finite or the
    loss grows past ``divergence_factor`` times its initial value.
    """
    spec = spec or dataset.activation
    R = _resolve_R(dataset, config)
    w = initial_model(config, dataset.d, R, seed)
    base = GraduatedObjective(dataset, spec, 1.0)
    strategy = config.strategy
    batch_size = getattr(strategy, "batch_size", None)
    sampler = None if batch_size is None else _BatchSampler(dataset.n, batch_size, stream(seed, "sampling"))
    schedule_rng = stream(seed + 1, "sampling")
    w_star = dataset.w_star
    trace = Trace()
    if base.clamp_count:
        trace.events.append({"t": 0, "event": "label_clamp", "count": base.clamp_count})

    start = time.perf_counter()
    tau = float(config.tau0)
    r = 2.0 * R
    every = config.record_every

    def record(t, i, obj, g):
        trace.records.append({
            "t": t,
            "inner_iter": i,
            "tau": obj.tau,
            "loss_tau": obj.loss(w),
            "loss_full": base.loss(w),
            "recovery_error": None if w_star is None else float(np.linalg.norm(w - w_star)),
            "grad_norm": float(np.linalg.norm(g)),
            "elapsed_s": time.perf_counter() - start,
        })

    obj = base.at(tau)
    record(0, 0, obj, obj.gradient(w))
    loss0 = max(trace.records[0]["loss_full"], 1e-300)
    stop = config.stop

    for t in range(config.T):
        obj = base.at(tau)
        eta, beta, n_inner = derive_schedule(dataset, spec, config, w, tau, r, obj, schedule_rng)
        if n_inner > config.max_epoch_length:
            trace.events.append({"t": t, "event": "epoch_length_capped", "requested": n_inner})
            n_inner = config.max_epoch_length
        if isinstance(strategy, SVRG):
            anchor = w.copy()
            mu = obj.gradient(anchor)
        for i in range(n_inner):
            if sampler is None:
                g = obj.gradient(w)
            else:
                batch = sampler.next()
                g = obj.stochastic_gradient(w, batch)
                if isinstance(strategy, SVRG):
                    g = g - obj.stochastic_gradient(anchor, batch) + mu
            w, strategy = apply_step(strategy, w, g, eta)
            if not np.all(np.isfinite(w)):
                raise DivergenceError(f"non-finite model at outer step {t}, inner step {i}", step=(t, i))
            if every and (i + 1) % every == 0 and i + 1 < n_inner:
                record(t + 1, i + 1, obj, g)
        record(t + 1, n_inner, obj, obj.gradient(w))
        last = trace.records[-1]
        if not math.isfinite(last["loss_full"]) or last["loss_full"] > config.divergence_factor * loss0:
            raise DivergenceError(f"loss diverged at outer step {t}", step=(t, n_inner))
        if stop.target_error is not None and last["recovery_error"] is not None \
                and last["recovery_error"] <= stop.target_error:
            trace.stopped = "target_error"
            break
        if stop.target_loss is not None and last["loss_full"] <= stop.target_loss:
            trace.stopped = "target_loss"
            break
        if stop.max_seconds is not None and last["elapsed_s"] >= stop.max_seconds:
            trace.stopped = "max_seconds"
            break
        new_tau = min(beta * tau, config.tau_max)
        if new_tau == config.tau_max and tau < config.tau_max:
            trace.events.append({"t": t + 1, "event": "tau_cap_reached", "tau": new_tau})
        tau = new_tau
        r = r / beta
    trace.w_final = w
    return trace
