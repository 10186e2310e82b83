"""Strong convexity/smoothness constants, temperature rules and step schedules.

The sigmoid constants follow the exact expectation bounds (with their
explicit sqrt(2/pi), 1/8 and 1/10 factors); softplus-type lower bounds use the
e^-4 Jensen bound. All of them assume standard normal covariates; data
drawn with 1/sqrt(d) scaling is handled by the caller through
:func:`effective_geometry`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .activations import ActivationSpec, Kind
from .data import CovariateScale, Dataset, Distribution, Regime, stream
from .errors import (
    DimensionError,
    ElscFailureError,
    InvalidArgumentError,
    TooLargeError,
    UnsupportedConstantsError,
)
from .objective import GraduatedObjective

SQRT_2_OVER_PI = math.sqrt(2 / math.pi)
SQRT_PI_OVER_2 = math.sqrt(math.pi / 2)
MAX_SPECTRUM_DIM = 100


@dataclass(frozen=True)
class ElscBounds:
    lam: float
    Lam: float
    r: float
    tau: float
    R: float
    m_r: float
    sigma: float = 0.0
    regime: Regime = Regime.NOISELESS

    @property
    def elsc_holds(self) -> bool:
        return self.lam > 0


def elsc_constants(spec: ActivationSpec, tau: float, r: float, R: float,
                   sigma: float = 0.0, regime: Regime = Regime.NOISELESS,
                   d: int | None = None) -> ElscBounds:
    """Strong convexity (``lam``) and smoothness (``Lam``) constants on ``B(w*, r)``.

    A non-positive ``lam`` is returned as-is: it means ELSC cannot be
    certified at this temperature. ``d`` is needed for post-activation noise
    only, where the bounds are stated for 1/sqrt(d)-scaled covariates.
    """
    if not 0 < tau <= 1:
        raise InvalidArgumentError(f"temperature must lie in (0, 1], got {tau}")
    if r <= 0 or R <= 0 or sigma < 0:
        raise InvalidArgumentError("need r > 0, R > 0 and sigma >= 0")
    regime = Regime(regime)
    if regime is Regime.NOISELESS:
        sigma = 0.0
    m = R + r
    kind = spec.kind
    if kind is Kind.SILU:
        raise UnsupportedConstantsError("no ELSC/ELSS constants are known for SiLU")

    if kind is Kind.SIGMOID:
        if regime is Regime.POST:
            if d is None or d < 1:
                raise InvalidArgumentError("post-activation constants need the dimension d")
            rd = math.sqrt(d)
            noise = 3.3 * tau * sigma * SQRT_PI_OVER_2
            pre = SQRT_2_OVER_PI * tau * tau / d
            lam = pre * (math.exp(-3 * tau * m / rd) / 8 - tau * r / (10 * rd) - noise)
            Lam = pre * (math.exp(-tau * m / (10 * rd)) + tau * r / (10 * rd) + noise)
        else:
            noise = 3 * tau * sigma / 10 * SQRT_PI_OVER_2
            pre = SQRT_2_OVER_PI * tau * tau
            lam = pre * (math.exp(-3 * tau * m) / 8 - tau * r / 10 - noise)
            Lam = pre * (math.exp(-tau * m / 10) + tau * r / 10 + noise)
    else:
        if regime is not Regime.NOISELESS:
            raise UnsupportedConstantsError("noisy-label constants are only derived for sigmoid")
        mult = 1 + spec.k**2 if kind is Kind.LEAKY_SOFTPLUS else 1.0
        c = tau * m
        lam = 2 * (math.exp(-4) * mult / (1 + math.exp(c * c / 2)) ** 2 - tau * r / math.sqrt(2 * math.pi))
        Lam = mult / (1 + math.exp(c * c)) ** 2 + tau * r
    return ElscBounds(lam, Lam, r, tau, R, m, sigma, regime)


def safe_temperature(spec: ActivationSpec, r: float, R: float) -> float:
    """Largest temperature certified to keep ``L_tau`` strongly convex on ``B(w*, r)``."""
    if r <= 0:
        raise InvalidArgumentError("radius must be positive")
    R = max(R, 1.0)
    if spec.kind is Kind.SIGMOID:
        return min(math.exp(-R) / (3 * r), 1.0)

    def lam(t):
        return elsc_constants(spec, t, r, R).lam

    if lam(1.0) > 0:
        return 1.0
    lo, hi = 0.0, 1.0
    # lam is decreasing in tau with lam(0+) > 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if lam(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def temperature_cap(regime: Regime, distribution: Distribution, sigma: float,
                    R: float, d: int = 1) -> float:
    """Largest temperature allowed under label noise of scale ``sigma``."""
    regime = Regime(regime)
    Distribution(distribution)
    if sigma < 0:
        raise InvalidArgumentError("noise scale must be non-negative")
    if sigma == 0 or regime is Regime.NOISELESS:
        return 1.0
    if regime is Regime.PRE:
        elsc = 5 * math.exp(-3 * R) / 36 * SQRT_2_OVER_PI / sigma
        elss = 5 * math.exp(-R / 10) / 3 * SQRT_2_OVER_PI / sigma
    else:
        if d < 1:
            raise InvalidArgumentError("dimension must be positive")
        rd = math.sqrt(d)
        elsc = math.exp(-3 * R / rd) / 26 * SQRT_2_OVER_PI / sigma
        elss = math.exp(-R / (10 * rd)) / 3 * SQRT_2_OVER_PI / sigma
    return min(1.0, elsc, elss)


def gd_schedule(bounds: ElscBounds) -> tuple[float, float]:
    """Step length ``1 / Lam`` and temperature increment ``exp(lam / Lam)``."""
    if bounds.lam <= 0:
        raise ElscFailureError(
            f"strong convexity fails at tau={bounds.tau:g} (lam={bounds.lam:.3g}); lower the temperature",
            lam=bounds.lam, tau=bounds.tau,
        )
    return 1.0 / bounds.Lam, math.exp(bounds.lam / bounds.Lam)


def sigmoid_gd_schedule(tau: float, R: float) -> tuple[float, float]:
    """Closed-form sigmoid step ``1 / (tau^2 (1 + R))`` and increment ``exp(e^-R / (1 + R))``."""
    return 1.0 / (tau * tau * (1 + R)), math.exp(math.exp(-R) / (1 + R))


def sgd_schedule(bounds: ElscBounds, s2: float, B: float, r_t: float, beta: float,
                 T: int, delta: float) -> tuple[float, int]:
    """Per-epoch SGD step length and epoch length with failure probability ``delta``."""
    lam, Lam = bounds.lam, bounds.Lam
    if lam <= 0:
        raise ElscFailureError("strong convexity fails; lower the temperature", lam=lam, tau=bounds.tau)
    if s2 <= 0 or B <= 0 or beta <= 1 or T < 1 or not 0 < delta < 1 or r_t <= 0:
        raise InvalidArgumentError("need s2 > 0, B > 0, beta > 1, T >= 1, 0 < delta < 1, r_t > 0")
    eta = min(r_t**2 * lam**2 / (2 * beta**2 * Lam * s2), 1.0 / Lam)
    inner = 1 + math.log(2 * B * lam / (eta * Lam * s2)) / (eta * lam)
    I = 2 * math.log(T / delta) * inner**2
    return eta, max(1, math.ceil(I))


def effective_geometry(dataset: Dataset, R: float, r: float) -> tuple[float, float, float]:
    """Map ``(R, r)`` onto the standard-normal-covariate problem the constants assume.

    With covariates divided by sqrt(d) the objective in ``w`` equals the
    unscaled objective in ``w / sqrt(d)``, so norms shrink by sqrt(d) and the
    curvature by d. Returns ``(R_eff, r_eff, curvature_scale)``.
    """
    if dataset.scale is CovariateScale.INV_SQRT_D:
        rd = math.sqrt(dataset.d)
        return R / rd, r / rd, 1.0 / dataset.d
    return R, r, 1.0


@dataclass
class SpectrumReport:
    samples: int
    lambda_min: float
    lambda_max: float
    records: list = field(default_factory=list)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_index", "lambda_min", "lambda_max", "radius"])
            for rec in self.records:
                writer.writerow([rec["index"], repr(rec["lambda_min"]), repr(rec["lambda_max"]),
                                 repr(rec["radius"])])
        return path


def sample_ball(rng: np.random.Generator, center: np.ndarray, r: float, num: int) -> np.ndarray:
    """``num`` points uniformly distributed in the Euclidean ball ``B(center, r)``."""
    d = center.shape[0]
    g = rng.standard_normal((num, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radii = r * rng.uniform(size=num) ** (1.0 / d)
    return center + g * radii[:, None]


def verify_local_spectrum(dataset: Dataset, spec: ActivationSpec, tau: float,
                          center, r: float, num_samples: int, seed: int = 0,
                          include_center: bool = False) -> SpectrumReport:
    """Extreme Hessian eigenvalues of ``L_tau`` over points sampled in ``B(center, r)``.

    With ``include_center`` the first sample is the center itself.
    """
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (dataset.d,):
        raise DimensionError("center must have length d")
    if dataset.d > MAX_SPECTRUM_DIM:
        raise TooLargeError(f"spectrum verification limited to d <= {MAX_SPECTRUM_DIM}")
    if num_samples < 1 or r < 0:
        raise InvalidArgumentError("need num_samples >= 1 and r >= 0")
    obj = GraduatedObjective(dataset, spec, tau)
    rng = stream(seed, "spectrum")
    n_random = num_samples - 1 if include_center else num_samples
    points = sample_ball(rng, center, r, n_random) if n_random else np.empty((0, dataset.d))
    if include_center:
        points = np.vstack([center, points])
    records = []
    for i, w in enumerate(points):
        eig = np.linalg.eigvalsh(obj.hessian(w))
        records.append({
            "index": i,
            "w": w.tolist(),
            "lambda_min": float(eig[0]),
            "lambda_max": float(eig[-1]),
            "radius": float(np.linalg.norm(w - center)),
        })
    return SpectrumReport(
        samples=len(records),
        lambda_min=min(rec["lambda_min"] for rec in records),
        lambda_max=max(rec["lambda_max"] for rec in records),
        records=records,
    )
