"""Diagonal Gaussians and Bernoulli heads on top of the autodiff engine.

All log-densities are per-sample: a batch of n vectors with d independent
coordinates yields a length-n tensor, summed over the d coordinates.
Zero-width blocks (d = 0) are valid and contribute exactly zero, which is
what lets a latent block be ablated without special cases downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    div,
    log,
    mul,
    neg,
    reduce,
    scale,
    shift,
    softplus,
    sqrt,
    square,
    sub,
)

__all__ = [
    "LOG_2PI",
    "DiagGaussian",
    "BernoulliHead",
    "rsample",
    "gaussian_log_prob",
    "bernoulli_log_prob",
    "kl_to_standard_normal",
]

LOG_2PI = math.log(2.0 * math.pi)


def _as_constant(value, name: str) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


@dataclass
class DiagGaussian:
    """Gaussian with diagonal covariance: mean and per-coordinate variance,
    both of shape (n, d)."""

    mu: Tensor
    sigma2: Tensor

    def __post_init__(self):
        if self.mu.data.ndim != 2 or self.sigma2.data.ndim != 2:
            raise ValueError(
                f"DiagGaussian needs 2-D params, got {self.mu.data.shape} "
                f"and {self.sigma2.data.shape}"
            )
        if self.mu.data.shape != self.sigma2.data.shape:
            raise ValueError(
                f"DiagGaussian: mu shape {self.mu.data.shape} != "
                f"sigma2 shape {self.sigma2.data.shape}"
            )
        s = self.sigma2.data
        if s.size and s.min() <= 0.0:
            raise ValueError("DiagGaussian: every variance entry must be positive")

    @property
    def batch(self) -> int:
        return self.mu.data.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.data.shape[1]


@dataclass
class BernoulliHead:
    """Bernoulli variables parameterised by logits of shape (n, d)."""

    logits: Tensor

    def __post_init__(self):
        if self.logits.data.ndim != 2:
            raise ValueError(f"BernoulliHead needs 2-D logits, got {self.logits.data.shape}")

    @property
    def batch(self) -> int:
        return self.logits.data.shape[0]

    @property
    def dim(self) -> int:
        return self.logits.data.shape[1]


def rsample(d: DiagGaussian, noise) -> Tensor:
    """Reparameterised draw mu + sqrt(sigma2) * noise.

    ``noise`` is standard-normal input of the same shape as mu; gradients
    flow to mu and sigma2 but never into the noise.
    """
    eps = _as_constant(noise, "noise")
    if eps.data.shape != d.mu.data.shape:
        raise ValueError(
            f"rsample: noise shape {eps.data.shape} != param shape {d.mu.data.shape}"
        )
    return add(d.mu, mul(sqrt(d.sigma2), eps))


def gaussian_log_prob(d: DiagGaussian, x) -> Tensor:
    """Per-sample log density, summed over coordinates.

    log N(x | mu, sigma2) = -1/2 * sum_j [ (x-mu)^2/sigma2 + log sigma2 + log 2pi ]
    """
    xt = _as_constant(x, "x")
    if xt.data.shape != d.mu.data.shape:
        raise ValueError(
            f"gaussian_log_prob: x shape {xt.data.shape} != param shape {d.mu.data.shape}"
        )
    quad = div(square(sub(xt, d.mu)), d.sigma2)
    per_coord = shift(add(quad, log(d.sigma2)), LOG_2PI)
    return scale(reduce("sum", per_coord, axis=1), -0.5)


def bernoulli_log_prob(head: BernoulliHead, target) -> Tensor:
    """Per-sample Bernoulli log likelihood, summed over coordinates.

    Uses the overflow-free identities log sigmoid(z) = -softplus(-z) and
    log(1 - sigmoid(z)) = -softplus(z), so the result is finite for any
    finite logit.
    """
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != head.logits.data.shape:
        raise ValueError(
            f"bernoulli_log_prob: target shape {t.shape} != logits shape "
            f"{head.logits.data.shape}"
        )
    if t.size and not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("bernoulli_log_prob: targets must be 0 or 1")
    t_on = Tensor(t)
    t_off = Tensor(1.0 - t)
    nll = add(mul(t_on, softplus(neg(head.logits))), mul(t_off, softplus(head.logits)))
    return neg(reduce("sum", nll, axis=1))


def kl_to_standard_normal(d: DiagGaussian) -> Tensor:
    """Closed-form KL(N(mu, sigma2) || N(0, I)) per sample.

    KL = 1/2 * sum_j (mu^2 + sigma2 - 1 - log sigma2), which is zero
    exactly when mu = 0 and sigma2 = 1.
    """
    per_coord = sub(shift(add(square(d.mu), d.sigma2), -1.0), log(d.sigma2))
    return scale(reduce("sum", per_coord, axis=1), 0.5)
