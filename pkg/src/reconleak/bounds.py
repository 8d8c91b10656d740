"""Reconstruction-leakage bounds derived from an RDP curve.

Given the Renyi guarantee d_alpha of a training run and a prior success
probability p0 for guessing a secret without the model, these functions bound
how much the released model can raise that probability:

    l(alpha, p0) = d_alpha (alpha-1)/alpha + log(1/p0)/alpha      (leakage)
    h(alpha, p0) = d_alpha + log(1/p0)/(alpha-1)                  (weaker form)
    L(p0)  = min over alpha of l(alpha, p0)
    L2(b)  = the same minimum in bits as a function of secret bits b
    log2 p1 < -b + L2(b)                                          (posterior)

l < h strictly at every finite grid point, which is what makes the leakage
form the informative one.  All inputs are natural-log probabilities; bits
appear only in outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .accountant import RdpCurve

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class SecretPrior:
    """A secret's prior guessing probability, kept in natural-log space."""

    log_p0: float

    def __post_init__(self) -> None:
        if not self.log_p0 <= 0.0:
            raise ValueError(f"log prior must be <= 0, got {self.log_p0}")

    @property
    def bits(self) -> float:
        """Secrecy bits b = log2(1/p0)."""
        return -self.log_p0 / _LN2

    @classmethod
    def from_bits(cls, bits: float) -> "SecretPrior":
        if bits < 0.0:
            raise ValueError(f"secrecy bits must be >= 0, got {bits}")
        return cls(log_p0=-bits * _LN2)


@dataclass(frozen=True)
class LeakageReport:
    """Grid-minimized leakage bounds for one curve and one prior."""

    log_p0: float
    L_nats: float
    L2_bits: float
    h_min_nats: float
    best_alpha_l: float | None
    best_alpha_h: float | None
    log2_posterior_bound: float
    all_infinite: bool

    def to_json_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return "inf" if math.isinf(v) else v

        return {
            "log_p0": self.log_p0,
            "L_nats": enc(self.L_nats),
            "L2_bits": enc(self.L2_bits),
            "h_min_nats": enc(self.h_min_nats),
            "best_alpha_l": self.best_alpha_l,
            "best_alpha_h": self.best_alpha_h,
            "log2_posterior_bound": enc(self.log2_posterior_bound),
            "all_infinite": self.all_infinite,
        }


def secrecy_bits(p: float) -> float:
    """Secrecy bits log2(1/p) of an event with probability p."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"probability must be in (0, 1], got {p}")
    return -math.log2(p)


def l_bound(d_alpha: float, alpha: float, log_p0: float) -> float:
    """Leakage bound l(alpha, p0) = d_alpha (alpha-1)/alpha + log(1/p0)/alpha."""
    _check_bound_args(d_alpha, alpha, log_p0)
    if math.isinf(d_alpha):
        return math.inf
    return d_alpha * (alpha - 1.0) / alpha + (-log_p0) / alpha


def h_bound(d_alpha: float, alpha: float, log_p0: float) -> float:
    """Weaker bound h(alpha, p0) = d_alpha + log(1/p0)/(alpha-1)."""
    _check_bound_args(d_alpha, alpha, log_p0)
    if math.isinf(d_alpha):
        return math.inf
    return d_alpha + (-log_p0) / (alpha - 1.0)


def _check_bound_args(d_alpha: float, alpha: float, log_p0: float) -> None:
    if alpha <= 1.0:
        raise ValueError(f"order must be > 1, got {alpha}")
    if d_alpha < 0.0:
        raise ValueError(f"divergence must be >= 0, got {d_alpha}")
    if log_p0 > 0.0:
        raise ValueError(f"log prior must be <= 0, got {log_p0}")


def min_leakage(curve: RdpCurve, log_p0: float) -> LeakageReport:
    """Minimize l and h over the curve's order grid for a given prior.

    Ties break to the smallest order.  If every curve entry is +inf, the
    report carries +inf bounds and the all_infinite flag.
    """
    if log_p0 > 0.0:
        raise ValueError(f"log prior must be <= 0, got {log_p0}")
    alphas = curve.orders
    d = curve.d_alpha
    with np.errstate(invalid="ignore"):
        l_vals = np.where(
            np.isinf(d), math.inf, d * (alphas - 1.0) / alphas + (-log_p0) / alphas
        )
        h_vals = np.where(np.isinf(d), math.inf, d + (-log_p0) / (alphas - 1.0))
    finite = np.isfinite(l_vals)
    if not np.any(finite):
        return LeakageReport(
            log_p0=log_p0,
            L_nats=math.inf,
            L2_bits=math.inf,
            h_min_nats=math.inf,
            best_alpha_l=None,
            best_alpha_h=None,
            log2_posterior_bound=math.inf,
            all_infinite=True,
        )
    i_l = int(np.argmin(l_vals))
    i_h = int(np.argmin(h_vals))
    L_nats = float(l_vals[i_l])
    bits = -log_p0 / _LN2
    return LeakageReport(
        log_p0=log_p0,
        L_nats=L_nats,
        L2_bits=L_nats / _LN2,
        h_min_nats=float(h_vals[i_h]),
        best_alpha_l=float(alphas[i_l]),
        best_alpha_h=float(alphas[i_h]),
        log2_posterior_bound=-bits + L_nats / _LN2,
        all_infinite=False,
    )


def leakage_bits(curve: RdpCurve, b: float) -> float:
    """L2(b): the minimized leakage in bits for a secret of b bits.

    L2(b) = min over the grid of d_alpha (alpha-1)/(alpha ln 2) + b/alpha.
    Non-decreasing and concave in b; L2(b) - b is non-increasing.
    """
    if b < 0.0:
        raise ValueError(f"secrecy bits must be >= 0, got {b}")
    alphas = curve.orders
    d = curve.d_alpha
    with np.errstate(invalid="ignore"):
        vals = np.where(
            np.isinf(d), math.inf, d * (alphas - 1.0) / (alphas * _LN2) + b / alphas
        )
    return float(np.min(vals))


def min_h_bits(curve: RdpCurve, b: float) -> float:
    """min over the grid of h(alpha, p0) in bits, for a secret of b bits."""
    if b < 0.0:
        raise ValueError(f"secrecy bits must be >= 0, got {b}")
    return min_leakage(curve, -b * _LN2).h_min_nats / _LN2


def posterior_bound(curve: RdpCurve, b: float) -> float:
    """Upper bound on log2 p1: the posterior guessing probability after release.

    Equals -b + L2(b); non-increasing in b.
    """
    return -b + leakage_bits(curve, b)
