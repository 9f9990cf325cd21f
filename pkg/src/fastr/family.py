"""Outcome families: response functions, negative log-likelihoods, and
their analytic gradients with respect to the linear predictor and the
auxiliary scale parameter.

Gaussian carries a scale sigma and Beta a precision phi, both trained on
the log scale so the optimizer stays unconstrained. Bernoulli and
Poisson have no auxiliary parameter.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import digamma, gammaln

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "bernoulli", "poisson", "beta")

# exp() clip threshold for the Poisson response; clipping is reported so
# diverging predictors do not pass silently
_EXP_CLIP = 30.0
_MEAN_EPS = 1e-12


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    # sign-split keeps exp() arguments nonpositive
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(eta: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, eta)


class Family:
    """One outcome distribution; construct via :func:`get_family`."""

    kind: str
    has_aux: bool

    def init_aux(self) -> float:
        """Initial value of the log-scale auxiliary parameter."""
        return 0.0

    def mean(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def validate_outcome(self, y: np.ndarray) -> None:
        """Raise DataError (naming the first bad row) for unsupported outcomes."""
        raise NotImplementedError

    def nll(self, y: np.ndarray, eta: np.ndarray, aux: float = 0.0) -> float:
        """Mean negative log density over the observations."""
        raise NotImplementedError

    def nll_grad(self, y: np.ndarray, eta: np.ndarray, aux: float = 0.0
                 ) -> tuple[np.ndarray, float]:
        """Analytic gradients of the negative log-likelihood.

        Returns the per-observation gradient with respect to ``eta``
        (so entry ``m`` differentiates observation ``m``'s own nll term)
        and the scalar gradient of the mean nll with respect to the
        auxiliary log-scale parameter.
        """
        raise NotImplementedError


class Gaussian(Family):
    kind = "gaussian"
    has_aux = True

    def mean(self, eta):
        return np.asarray(eta, dtype=np.float64)

    def validate_outcome(self, y):
        bad = np.nonzero(~np.isfinite(y))[0]
        if bad.size:
            raise DataError(f"non-finite gaussian outcome at row {bad[0]}")

    def nll(self, y, eta, aux=0.0):
        sigma2 = np.exp(2.0 * aux)
        r = y - eta
        return float(np.mean(0.5 * np.log(2.0 * np.pi) + aux + 0.5 * r * r / sigma2))

    def nll_grad(self, y, eta, aux=0.0):
        sigma2 = np.exp(2.0 * aux)
        r = eta - y
        d_aux = float(np.mean(1.0 - r * r / sigma2))
        return r / sigma2, d_aux


class Bernoulli(Family):
    kind = "bernoulli"
    has_aux = False

    def mean(self, eta):
        return np.clip(_sigmoid(np.asarray(eta, dtype=np.float64)),
                       _MEAN_EPS, 1.0 - _MEAN_EPS)

    def validate_outcome(self, y):
        bad = np.nonzero(~np.isin(y, (0.0, 1.0)))[0]
        if bad.size:
            raise DataError(
                f"bernoulli outcome must be 0 or 1, got {y[bad[0]]} at row {bad[0]}"
            )

    def nll(self, y, eta, aux=0.0):
        return float(np.mean(_softplus(eta) - y * eta))

    def nll_grad(self, y, eta, aux=0.0):
        return _sigmoid(eta) - y, 0.0


class Poisson(Family):
    kind = "poisson"
    has_aux = False

    def mean(self, eta):
        eta = np.asarray(eta, dtype=np.float64)
        clipped = int(np.sum(np.abs(eta) > _EXP_CLIP))
        if clipped:
            log.warning("poisson response clipped at |eta|=%g for %d values",
                        _EXP_CLIP, clipped)
        return np.exp(np.clip(eta, -_EXP_CLIP, _EXP_CLIP))

    def validate_outcome(self, y):
        bad = np.nonzero((y < 0) | (y != np.floor(y)) | ~np.isfinite(y))[0]
        if bad.size:
            raise DataError(
                f"poisson outcome must be a nonnegative integer, got "
                f"{y[bad[0]]} at row {bad[0]}"
            )

    def nll(self, y, eta, aux=0.0):
        ec = np.clip(eta, -_EXP_CLIP, _EXP_CLIP)
        return float(np.mean(np.exp(ec) - y * ec + gammaln(y + 1.0)))

    def nll_grad(self, y, eta, aux=0.0):
        ec = np.clip(eta, -_EXP_CLIP, _EXP_CLIP)
        inside = (np.abs(eta) < _EXP_CLIP).astype(np.float64)
        return (np.exp(ec) - y) * inside, 0.0


class Beta(Family):
    """Beta outcomes in mean/precision form: alpha = mu*phi, beta = (1-mu)*phi."""

    kind = "beta"
    has_aux = True

    def mean(self, eta):
        return np.clip(_sigmoid(np.asarray(eta, dtype=np.float64)),
                       _MEAN_EPS, 1.0 - _MEAN_EPS)

    def validate_outcome(self, y):
        bad = np.nonzero((y <= 0.0) | (y >= 1.0) | ~np.isfinite(y))[0]
        if bad.size:
            raise DataError(
                f"beta outcome must lie strictly in (0, 1), got {y[bad[0]]} "
                f"at row {bad[0]}"
            )

    def nll(self, y, eta, aux=0.0):
        phi = np.exp(aux)
        mu = self.mean(eta)
        a = mu * phi
        b = (1.0 - mu) * phi
        ll = (gammaln(phi) - gammaln(a) - gammaln(b)
              + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y))
        return float(-np.mean(ll))

    def nll_grad(self, y, eta, aux=0.0):
        phi = np.exp(aux)
        mu = self.mean(eta)
        a = mu * phi
        b = (1.0 - mu) * phi
        logit_y = np.log(y) - np.log1p(-y)
        d_mu = phi * (digamma(a) - digamma(b) - logit_y)
        d_eta = d_mu * mu * (1.0 - mu)
        d_phi = (-digamma(phi) + mu * digamma(a) + (1.0 - mu) * digamma(b)
                 - mu * np.log(y) - (1.0 - mu) * np.log1p(-y))
        d_aux = float(np.mean(d_phi) * phi)
        return d_eta, d_aux


_REGISTRY = {f.kind: f for f in (Gaussian(), Bernoulli(), Poisson(), Beta())}


def get_family(kind: str) -> Family:
    try:
        return _REGISTRY[kind]
    except KeyError:
        raise ConfigError(
            f"unknown family {kind!r}; choose one of {', '.join(FAMILIES)}"
        ) from None
