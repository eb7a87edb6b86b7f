"""The Normal-Inverse-Gamma evidential layer.

A prediction is a set of NIG hyperparameters (gamma, nu, alpha, beta) per
output element. Marginalizing the Gaussian likelihood over the NIG prior
gives a Student-t predictive distribution, from which point predictions,
an aleatoric/epistemic split, and predictive intervals all follow in
closed form. Training minimizes the marginal negative log-likelihood plus
two regularizers; the gradients here are analytic.

Every function accepts either scalar hyperparameters (EvidentialParams)
or whole grids (EvidentialField) and broadcasts elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import StudentTDist, digamma, log_gamma, student_t_quantile

__all__ = [
    "EvidentialParams",
    "EvidentialField",
    "UncertaintySummary",
    "RawInterval",
    "LossWeights",
    "predict_mean",
    "aleatoric",
    "epistemic",
    "uncertainty_summary",
    "predictive_dist",
    "raw_interval",
    "nll_loss",
    "reg_loss",
    "u_loss",
    "total_loss",
    "loss_terms",
    "loss_gradients",
]


def _validate_channels(gamma, nu, alpha, beta):
    if np.any(np.asarray(nu) <= 0.0):
        raise ValueError("nu must be > 0")
    if np.any(np.asarray(alpha) <= 1.0):
        raise ValueError("alpha must be > 1")
    if np.any(np.asarray(beta) <= 0.0):
        raise ValueError("beta must be > 0")
    g = np.asarray(gamma)
    if np.any(g < -1.0) or np.any(g > 1.0):
        raise ValueError("gamma must lie in [-1, 1]")


@dataclass(frozen=True)
class EvidentialParams:
    """NIG hyperparameters for a single output element."""

    gamma: float
    nu: float
    alpha: float
    beta: float

    def __post_init__(self):
        _validate_channels(self.gamma, self.nu, self.alpha, self.beta)


@dataclass(frozen=True)
class EvidentialField:
    """NIG hyperparameters over an output grid, one channel per symbol.

    Channels are float64 arrays of identical shape (row-major grids).
    """

    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        shapes = {
            np.shape(self.gamma),
            np.shape(self.nu),
            np.shape(self.alpha),
            np.shape(self.beta),
        }
        if len(shapes) != 1:
            raise ValueError("field channels must share one shape")
        _validate_channels(self.gamma, self.nu, self.alpha, self.beta)

    @property
    def shape(self):
        return np.shape(self.gamma)

    @property
    def size(self):
        return int(np.size(self.gamma))

    def element(self, index) -> EvidentialParams:
        return EvidentialParams(
            gamma=float(self.gamma[index]),
            nu=float(self.nu[index]),
            alpha=float(self.alpha[index]),
            beta=float(self.beta[index]),
        )


@dataclass(frozen=True)
class UncertaintySummary:
    """Point prediction with its aleatoric/epistemic decomposition."""

    prediction: object
    aleatoric: object
    epistemic: object


@dataclass(frozen=True)
class RawInterval:
    """Uncalibrated predictive interval at confidence 1 - delta."""

    lo: object
    hi: object
    confidence: float

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError("interval requires lo <= hi")

    @property
    def width(self):
        return np.asarray(self.hi) - np.asarray(self.lo)


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights for the evidence and uncertainty regularizers."""

    lambda_reg: float = 0.01
    xi_reg: float = 0.05

    def __post_init__(self):
        for name, v in (("lambda_reg", self.lambda_reg), ("xi_reg", self.xi_reg)):
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0")


def predict_mean(m):
    """Point prediction: the expected Gaussian mean, which is gamma."""
    return m.gamma


def aleatoric(m):
    """Expected data variance E[sigma^2] = beta / (alpha - 1)."""
    return m.beta / (np.asarray(m.alpha) - 1.0)


def epistemic(m):
    """Variance of the mean Var[mu] = beta / (nu (alpha - 1)).

    Computed as aleatoric / nu so the decomposition identity holds to
    the last bit, not just algebraically.
    """
    return aleatoric(m) / np.asarray(m.nu)


def uncertainty_summary(m) -> UncertaintySummary:
    return UncertaintySummary(
        prediction=predict_mean(m),
        aleatoric=aleatoric(m),
        epistemic=epistemic(m),
    )


def predictive_dist(m) -> StudentTDist:
    """Marginal predictive distribution: Student-t with df = 2 alpha.

    The scale parameter is beta (1 + nu) / (nu alpha); the returned
    object carries its square root.
    """
    nu = np.asarray(m.nu, dtype=np.float64)
    alpha = np.asarray(m.alpha, dtype=np.float64)
    beta = np.asarray(m.beta, dtype=np.float64)
    scale2 = beta * (1.0 + nu) / (nu * alpha)
    return StudentTDist(loc=m.gamma, scale=np.sqrt(scale2), df=2.0 * alpha)


def raw_interval(m, delta) -> RawInterval:
    """Equal-tailed predictive interval at confidence 1 - delta.

    Bounds are gamma +/- t_{2 alpha, 1 - delta/2} * sqrt(beta (1+nu) / (nu alpha)).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    dist = predictive_dist(m)
    t = student_t_quantile(dist.df, 1.0 - delta / 2.0)
    half = t * np.asarray(dist.scale)
    gamma = np.asarray(m.gamma, dtype=np.float64)
    return RawInterval(lo=gamma - half, hi=gamma + half, confidence=1.0 - delta)


def _channels(m, y):
    gamma = np.asarray(m.gamma, dtype=np.float64)
    nu = np.asarray(m.nu, dtype=np.float64)
    alpha = np.asarray(m.alpha, dtype=np.float64)
    beta = np.asarray(m.beta, dtype=np.float64)
    return gamma, nu, alpha, beta, np.asarray(y, dtype=np.float64)


def nll_loss(m, y):
    """Negative log marginal likelihood of y (log-domain throughout)."""
    gamma, nu, alpha, beta, y = _channels(m, y)
    r = y - gamma
    omega = 2.0 * beta * (1.0 + nu)
    return (
        (alpha + 0.5) * np.log(nu * r * r + omega)
        + 0.5 * np.log(np.pi / nu)
        - alpha * np.log(omega)
        + log_gamma(alpha)
        - log_gamma(alpha + 0.5)
    )


def reg_loss(m, y):
    """Evidence penalty |y - gamma| (2 nu + alpha) on confident misses."""
    gamma, nu, alpha, _, y = _channels(m, y)
    return np.abs(y - gamma) * (2.0 * nu + alpha)


def u_loss(m, y):
    """Squared error scaled by the inverse total uncertainty.

    The multiplier nu (alpha - 1) / (beta (nu + 1)) is exactly
    1 / (aleatoric + epistemic), which keeps the evidence from
    contracting to zero.
    """
    gamma, nu, alpha, beta, y = _channels(m, y)
    r = y - gamma
    return r * r * nu * (alpha - 1.0) / (beta * (nu + 1.0))


def total_loss(m, y, w: LossWeights):
    """Combined objective: NLL + lambda * reg + xi * u, elementwise."""
    return nll_loss(m, y) + w.lambda_reg * reg_loss(m, y) + w.xi_reg * u_loss(m, y)


def loss_terms(m, y):
    """The three loss components, unweighted, as (nll, reg, u)."""
    return nll_loss(m, y), reg_loss(m, y), u_loss(m, y)


def loss_gradients(m, y, w: LossWeights):
    """Analytic d(total_loss)/d(gamma, nu, alpha, beta).

    Stacked on a trailing axis of size 4, so a scalar input yields a
    4-vector and a field yields shape grid + (4,).
    """
    gamma, nu, alpha, beta, y = _channels(m, y)
    r = y - gamma
    omega = 2.0 * beta * (1.0 + nu)
    a_full = nu * r * r + omega

    d_gamma = -2.0 * nu * r * (alpha + 0.5) / a_full
    d_nu = (
        (alpha + 0.5) * (r * r + 2.0 * beta) / a_full
        - 0.5 / nu
        - alpha / (1.0 + nu)
    )
    d_alpha = np.log(a_full) - np.log(omega) + digamma(alpha) - digamma(alpha + 0.5)
    d_beta = 2.0 * (1.0 + nu) * (alpha + 0.5) / a_full - alpha / beta

    if w.lambda_reg != 0.0:
        sign = np.sign(r)
        d_gamma = d_gamma + w.lambda_reg * (-sign * (2.0 * nu + alpha))
        d_nu = d_nu + w.lambda_reg * 2.0 * np.abs(r)
        d_alpha = d_alpha + w.lambda_reg * np.abs(r)

    if w.xi_reg != 0.0:
        d_gamma = d_gamma + w.xi_reg * (-2.0 * r * nu * (alpha - 1.0) / (beta * (nu + 1.0)))
        d_nu = d_nu + w.xi_reg * r * r * (alpha - 1.0) / (beta * (nu + 1.0) ** 2)
        d_alpha = d_alpha + w.xi_reg * r * r * nu / (beta * (nu + 1.0))
        d_beta = d_beta + w.xi_reg * (-r * r * nu * (alpha - 1.0) / (beta * beta * (nu + 1.0)))

    return np.stack(
        [np.asarray(d_gamma), np.asarray(d_nu), np.asarray(d_alpha), np.asarray(d_beta)],
        axis=-1,
    )
