"""Temperature-graduated activation functions.

Every activation ``phi`` is graduated as ``phi_tau(v) = phi(tau * v) / tau``;
the sigmoid keeps its canonical range and skips the ``1 / tau`` factor.
All functions accept scalars or numpy arrays and preserve floating dtypes
(including ``np.longdouble``), which the finite-difference tests rely on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError, InvalidArgumentError

SIGMOID_CLAMP = 1e-9

# argmin of v * sigmoid(v): root of 1 + v * (1 - sigmoid(v)) = 0
SILU_ARGMIN = -1.2784645427610738
SILU_MIN = SILU_ARGMIN * float(expit(SILU_ARGMIN))

_ROOT_TOL = 1e-12
_ROOT_MAX_ITER = 200


class Kind(str, enum.Enum):
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    LEAKY_SOFTPLUS = "leaky_softplus"
    SILU = "silu"


@dataclass(frozen=True)
class ActivationSpec:
    """Which activation to use; ``k`` is the leakiness of the leaky softplus."""

    kind: Kind = Kind.SIGMOID
    k: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not (0.0 <= self.k <= 1.0):
            raise InvalidArgumentError(f"leakiness k must lie in [0, 1], got {self.k}")
        if self.kind is not Kind.LEAKY_SOFTPLUS and self.k != 0.0:
            object.__setattr__(self, "k", 0.0)

    @classmethod
    def parse(cls, text: str) -> "ActivationSpec":
        """Parse ``sigmoid``, ``softplus``, ``silu`` or ``leaky_softplus:0.3``."""
        name, _, k = text.strip().lower().partition(":")
        name = name.replace("-", "_")
        if name == "leaky_softplus":
            return cls(Kind.LEAKY_SOFTPLUS, float(k) if k else 0.5)
        return cls(Kind(name))

    def __str__(self):
        if self.kind is Kind.LEAKY_SOFTPLUS:
            return f"leaky_softplus:{self.k:g}"
        return self.kind.value


SIGMOID = ActivationSpec(Kind.SIGMOID)
SOFTPLUS = ActivationSpec(Kind.SOFTPLUS)
SILU = ActivationSpec(Kind.SILU)


def leaky_softplus(k: float) -> ActivationSpec:
    return ActivationSpec(Kind.LEAKY_SOFTPLUS, k)


def _as_float(x):
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def _check(tau, v):
    if not (np.isfinite(tau) and 0.0 < tau <= 1.0):
        raise InvalidArgumentError(f"temperature must lie in (0, 1], got {tau}")
    v = _as_float(v)
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("pre-activation values must be finite")
    return v


def _softplus(z):
    return np.logaddexp(0, z)


def _sig_var(z):
    # sigma(z) * (1 - sigma(z)) without cancellation in the tails
    return expit(z) * expit(-z)


def _ret(out, v):
    return out[()] if np.ndim(v) == 0 else out


def activate(spec: ActivationSpec, tau: float, v):
    """Evaluate the graduated activation ``phi_tau(v)``."""
    v = _check(tau, v)
    z = tau * v
    kind = spec.kind
    if kind is Kind.SIGMOID:
        out = expit(z)
    elif kind is Kind.SOFTPLUS:
        out = _softplus(z) / tau
    elif kind is Kind.LEAKY_SOFTPLUS:
        if spec.k == 1.0:
            out = v.copy()
        else:
            out = (_softplus(z) - _softplus(-spec.k * z)) / tau
    else:
        out = v * expit(z)
    return _ret(out, v)


def activate_deriv(spec: ActivationSpec, tau: float, v):
    """First derivative of ``phi_tau`` with respect to ``v``."""
    v = _check(tau, v)
    z = tau * v
    kind = spec.kind
    if kind is Kind.SIGMOID:
        out = tau * _sig_var(z)
    elif kind is Kind.SOFTPLUS:
        out = expit(z)
    elif kind is Kind.LEAKY_SOFTPLUS:
        out = expit(z) + spec.k * expit(-spec.k * z)
    else:
        s = expit(z)
        out = s + z * _sig_var(z)
    return _ret(out, v)


def activate_second_deriv(spec: ActivationSpec, tau: float, v):
    """Second derivative of ``phi_tau`` with respect to ``v``."""
    v = _check(tau, v)
    z = tau * v
    kind = spec.kind
    if kind is Kind.SIGMOID:
        out = tau * tau * _sig_var(z) * (expit(-z) - expit(z))
    elif kind is Kind.SOFTPLUS:
        out = tau * _sig_var(z)
    elif kind is Kind.LEAKY_SOFTPLUS:
        k = spec.k
        out = tau * (_sig_var(z) - k * k * _sig_var(k * z))
    else:
        out = tau * _sig_var(z) * (2.0 + z * (expit(-z) - expit(z)))
    return _ret(out, v)


def _monotone_solve(f, df, y, lo, hi):
    """Solve ``f(v) = y`` elementwise for increasing ``f`` by bracketed Newton.

    ``lo`` may be ``-inf``/``hi`` may be ``inf``; brackets are expanded by
    doubling until they straddle the target.
    """
    y = np.asarray(y, dtype=np.float64)
    tol = _ROOT_TOL * np.maximum(1.0, np.abs(y))
    a = np.where(np.isfinite(lo), lo, -1.0) * np.ones_like(y)
    b = np.where(np.isfinite(hi), hi, 1.0) * np.ones_like(y)
    if not np.isfinite(lo):
        step = np.ones_like(y)
        for _ in range(_ROOT_MAX_ITER):
            bad = f(a) > y
            if not bad.any():
                break
            a = np.where(bad, a - step, a)
            step = np.where(bad, 2 * step, step)
    if not np.isfinite(hi):
        step = np.ones_like(y)
        for _ in range(_ROOT_MAX_ITER):
            bad = f(b) < y
            if not bad.any():
                break
            b = np.where(bad, b + step, b)
            step = np.where(bad, 2 * step, step)
    v = 0.5 * (a + b)
    for _ in range(_ROOT_MAX_ITER):
        fv = f(v) - y
        done = np.abs(fv) <= tol
        if done.all():
            break
        a = np.where(fv < 0, v, a)
        b = np.where(fv > 0, v, b)
        slope = df(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = v - fv / slope
        ok = np.isfinite(newton) & (newton > a) & (newton < b)
        v = np.where(done, v, np.where(ok, newton, 0.5 * (a + b)))
    return v


def invert(spec: ActivationSpec, y, return_clamped: bool = False):
    """Invert the ungraduated activation ``phi_1``.

    Sigmoid labels in ``[0, 1]`` but outside ``[1e-9, 1 - 1e-9]`` are clamped
    into that window first. With ``return_clamped`` the boolean clamp mask is
    returned alongside the pre-activations.
    """
    y = _as_float(y)
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("labels must be finite")
    clamped = np.zeros(y.shape, dtype=bool)
    kind = spec.kind
    if kind is Kind.SIGMOID:
        if np.any((y < 0) | (y > 1)):
            raise DomainError("sigmoid labels must lie in [0, 1]", bound=(0.0, 1.0))
        clamped = (y < SIGMOID_CLAMP) | (y > 1 - SIGMOID_CLAMP)
        yc = np.clip(y, SIGMOID_CLAMP, 1 - SIGMOID_CLAMP)
        out = np.log(yc) - np.log1p(-yc)
    elif kind is Kind.SOFTPLUS or (kind is Kind.LEAKY_SOFTPLUS and spec.k == 0.0):
        shift = np.log(2.0) if kind is Kind.LEAKY_SOFTPLUS else 0.0
        yy = y + shift
        if np.any(yy <= 0):
            raise DomainError("label below the range of softplus", bound=-shift)
        out = yy + np.log(-np.expm1(-yy))
    elif kind is Kind.LEAKY_SOFTPLUS:
        if spec.k == 1.0:
            out = y.astype(np.float64, copy=True)
        else:
            out = _monotone_solve(
                lambda v: activate(spec, 1.0, v),
                lambda v: activate_deriv(spec, 1.0, v),
                np.atleast_1d(y), -np.inf, np.inf,
            ).reshape(y.shape)
    else:
        if np.any(y < SILU_MIN - 1e-15):
            raise DomainError(f"SiLU labels must be at least {SILU_MIN:.6f}", bound=SILU_MIN)
        out = _monotone_solve(
            lambda v: activate(spec, 1.0, v),
            lambda v: activate_deriv(spec, 1.0, v),
            np.atleast_1d(np.maximum(y, SILU_MIN)), SILU_ARGMIN, np.inf,
        ).reshape(y.shape)
    out = _ret(np.asarray(out), y)
    if return_clamped:
        return out, _ret(clamped, y)
    return out


def graduate_label(spec: ActivationSpec, tau: float, y):
    """Graduated label ``phi_tau(phi^{-1}(y))``; returns ``y`` unchanged at ``tau = 1``."""
    if tau == 1.0:
        y = _as_float(y)
        invert(spec, y)  # domain check only
        if spec.kind is Kind.SIGMOID:
            y = np.clip(y, SIGMOID_CLAMP, 1 - SIGMOID_CLAMP)
        return _ret(np.array(y, copy=True), y)
    return activate(spec, tau, invert(spec, y))
