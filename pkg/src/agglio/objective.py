"""The graduated squared-loss objective and its derivatives."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .activations import (
    SIGMOID_CLAMP,
    ActivationSpec,
    Kind,
    activate,
    activate_deriv,
    activate_second_deriv,
    invert,
)
from .data import Dataset
from .errors import DimensionError, InvalidArgumentError, TooLargeError

MAX_DENSE_HESSIAN_DIM = 500


class GraduatedObjective:
    """``L_tau(w) = mean_i (y^tau_i - phi_tau(<x_i, w>))^2`` on a dataset.

    Label inversion is done once and shared between temperatures through
    :meth:`at`, so moving to a new temperature only re-activates the cached
    pre-activations.
    """

    def __init__(self, dataset: Dataset, activation: ActivationSpec | None = None,
                 tau: float = 1.0, _preact=None):
        if not 0.0 < tau <= 1.0:
            raise InvalidArgumentError(f"temperature must lie in (0, 1], got {tau}")
        self.dataset = dataset
        self.activation = activation or dataset.activation
        self.tau = float(tau)
        if _preact is None:
            _preact, clamped = invert(self.activation, dataset.y, return_clamped=True)
            self.clamp_count = int(np.count_nonzero(clamped))
        else:
            self.clamp_count = 0
        self._preact = _preact
        if self.tau == 1.0:
            labels = np.array(dataset.y)
            if self.activation.kind is Kind.SIGMOID:
                labels = np.clip(labels, SIGMOID_CLAMP, 1 - SIGMOID_CLAMP)
        else:
            labels = activate(self.activation, self.tau, _preact)
        labels.flags.writeable = False
        self.labels = labels

    def at(self, tau: float) -> "GraduatedObjective":
        """The same objective at another temperature."""
        if tau == self.tau:
            return self
        return GraduatedObjective(self.dataset, self.activation, tau, self._preact)

    @property
    def X(self):
        return self.dataset.X

    @property
    def n(self):
        return self.dataset.n

    @property
    def d(self):
        return self.dataset.d

    def _check_w(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.d,):
            raise DimensionError(f"model has shape {w.shape}, expected ({self.d},)")
        return w

    def _rows(self, batch):
        if batch is None:
            return self.X, self.labels
        idx = np.asarray(batch)
        if idx.size == 0:
            raise InvalidArgumentError("batch must be non-empty")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError("batch index out of range")
        return self.X[idx], self.labels[idx]

    def residuals(self, w):
        w = self._check_w(w)
        return activate(self.activation, self.tau, self.X @ w) - self.labels

    def loss(self, w) -> float:
        r = self.residuals(w)
        return float(np.mean(r * r))

    def _grad(self, w, batch):
        X, labels = self._rows(batch)
        z = X @ w
        r = activate(self.activation, self.tau, z) - labels
        return (2.0 / len(labels)) * (X.T @ (r * activate_deriv(self.activation, self.tau, z)))

    def gradient(self, w) -> np.ndarray:
        return self._grad(self._check_w(w), None)

    def stochastic_gradient(self, w, batch) -> np.ndarray:
        """Gradient of the mean loss over the rows in ``batch``."""
        return self._grad(self._check_w(w), batch)

    def hessian_weights(self, w) -> np.ndarray:
        """Per-point weights ``s_i`` with ``hessian = mean_i s_i x_i x_i^T``."""
        w = self._check_w(w)
        return self._weights(self.X @ w, self.labels)

    def _weights(self, z, y):
        tau, spec = self.tau, self.activation
        kind = spec.kind
        if kind is Kind.SIGMOID:
            s = expit(tau * z)
            g = s * expit(-tau * z)
            return 2 * tau**2 * (g * g + (s - y) * (1 - 2 * s) * g)
        if kind is Kind.SOFTPLUS:
            s = expit(tau * z)
            rho = activate(spec, tau, z)
            return 2 * (s * s + tau * (rho - y) * s * expit(-tau * z))
        if kind is Kind.LEAKY_SOFTPLUS:
            k = spec.k
            s, sk = expit(tau * z), expit(k * tau * z)
            rho = activate(spec, tau, z)
            first = s + k * (1 - sk)
            curv = s * expit(-tau * z) - k * k * sk * expit(-k * tau * z)
            return 2 * (first * first + tau * (rho - y) * curv)
        return generic_hessian_weights(spec, tau, z, y)

    def hessian_weight(self, w, i: int) -> float:
        if not 0 <= i < self.n:
            raise IndexError(f"index {i} out of range for n={self.n}")
        w = self._check_w(w)
        return float(self._weights(np.atleast_1d(self.X[i] @ w), self.labels[i:i + 1])[0])

    def hessian(self, w) -> np.ndarray:
        if self.d > MAX_DENSE_HESSIAN_DIM:
            raise TooLargeError(
                f"dense Hessian limited to d <= {MAX_DENSE_HESSIAN_DIM} (got d={self.d})"
            )
        s = self.hessian_weights(w)
        H = (self.X.T * s) @ self.X / self.n
        return 0.5 * (H + H.T)


def generic_hessian_weights(spec: ActivationSpec, tau: float, z, y):
    """Chain-rule weights ``2 (phi'^2 + (phi - y) phi'')`` for any activation."""
    d1 = activate_deriv(spec, tau, z)
    return 2 * (d1 * d1 + (activate(spec, tau, z) - y) * activate_second_deriv(spec, tau, z))
