"""Renyi-DP accounting for the subsampled Gaussian mechanism.

The per-step guarantee is the Renyi divergence of order alpha between the
two outputs of one noisy-SGD step on adjacent datasets:

    Q = N(0, sigma^2)  vs.  P = (1 - q) N(0, sigma^2) + q N(1, sigma^2),

where q is the Poisson sampling rate and sigma the noise multiplier in units
of the clipping norm.  d_alpha is the larger of the two directed divergences.
Curves over a grid of orders compose additively in the number of steps and
convert to (epsilon, delta)-DP via epsilon = d_alpha + log(1/delta)/(alpha-1).

All moment accumulation happens in natural-log space.  To keep relative
precision when divergences are tiny, the moment E_Q[(P/Q)^e] is always
computed as 1 + (moment - 1), with the "- 1" part evaluated directly:
the zeroth- and first-order contributions cancel analytically (integer
orders) or are split at the likelihood-ratio crossing into one-signed
pieces (quadrature), so no large terms are subtracted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Composite Gauss-Legendre rule: 24 nodes per panel, panel width 0.5 in the
# standardized coordinate y = x / sigma.  Spectral accuracy per panel; panels
# far from the integrand's modes are exponentially suppressed, so their larger
# relative error never reaches the total.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_PANEL_WIDTH = 0.5
_TAIL_WIDTH = 40.0


def default_order_grid() -> np.ndarray:
    """Default Renyi order grid: {1.01, 1.05, 1.1, ..., 1.9} plus {2, ..., 63}."""
    fractional = np.concatenate(([1.01, 1.05], np.round(np.arange(1.1, 2.0, 0.1), 10)))
    return np.concatenate((fractional, np.arange(2.0, 64.0)))


@dataclass(frozen=True)
class MechanismParams:
    """Parameters of a subsampled Gaussian mechanism run."""

    q: float
    sigma: float
    steps: int
    clip: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"sampling rate q must be in [0, 1], got {self.q}")
        if self.sigma < 0.0:
            raise ValueError(f"noise multiplier must be >= 0, got {self.sigma}")
        if self.steps < 0:
            raise ValueError(f"step count must be >= 0, got {self.steps}")
        if self.clip <= 0.0:
            raise ValueError(f"clipping norm must be > 0, got {self.clip}")


@dataclass(frozen=True)
class RdpCurve:
    """Renyi divergence d_alpha over a grid of orders.

    Entries may be +inf (e.g. sigma = 0 with q > 0); they are never NaN.
    d_alpha is non-decreasing in alpha for curves produced by this module.
    """

    orders: np.ndarray
    d_alpha: np.ndarray
    params: MechanismParams | None = None

    def __post_init__(self) -> None:
        orders = np.asarray(self.orders, dtype=float)
        d_alpha = np.asarray(self.d_alpha, dtype=float)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "d_alpha", d_alpha)
        if orders.ndim != 1 or orders.size == 0:
            raise ValueError("order grid must be a non-empty 1-D array")
        if orders.shape != d_alpha.shape:
            raise ValueError("orders and d_alpha must have matching shapes")
        if np.any(orders <= 1.0):
            raise ValueError("every order must be > 1")
        if np.any(np.diff(orders) <= 0.0):
            raise ValueError("orders must be strictly increasing")
        if np.any(np.isnan(d_alpha)):
            raise ValueError("d_alpha contains NaN")
        if np.any(d_alpha < 0.0):
            raise ValueError("d_alpha must be non-negative")

    def to_json_dict(self) -> dict:
        """Serialize to a plain dict; +inf becomes the string "inf"."""
        d_alpha = [("inf" if math.isinf(d) else d) for d in self.d_alpha]
        params = None
        if self.params is not None:
            params = {
                "q": self.params.q,
                "sigma": self.params.sigma,
                "steps": self.params.steps,
                "clip": self.params.clip,
            }
        return {"orders": list(self.orders), "d_alpha": d_alpha, "params": params}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, data: dict) -> "RdpCurve":
        d_alpha = [math.inf if v == "inf" else float(v) for v in data["d_alpha"]]
        params = None
        if data.get("params") is not None:
            p = data["params"]
            params = MechanismParams(
                q=p["q"], sigma=p["sigma"], steps=p["steps"], clip=p.get("clip", 1.0)
            )
        return cls(
            orders=np.asarray(data["orders"], dtype=float),
            d_alpha=np.asarray(d_alpha, dtype=float),
            params=params,
        )

    @classmethod
    def from_json(cls, text: str) -> "RdpCurve":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class EpsilonResult:
    """Result of an RDP-to-DP conversion over an order grid."""

    epsilon: float
    best_alpha: float | None
    all_infinite: bool


def gaussian_rdp(sigma: float, alpha: float) -> float:
    """Renyi divergence of order alpha between N(0, sigma^2) and N(1, sigma^2).

    Closed form alpha / (2 sigma^2); the q = 1 case of the subsampled
    mechanism.  Returns +inf for sigma = 0.
    """
    if alpha <= 1.0:
        raise ValueError(f"order must be > 1, got {alpha}")
    if sigma < 0.0:
        raise ValueError(f"noise multiplier must be >= 0, got {sigma}")
    denominator = 2.0 * sigma * sigma
    if denominator == 0.0:  # sigma = 0, or sigma^2 underflows
        return math.inf
    return alpha / denominator


def _log_abs_expm1(s: np.ndarray) -> np.ndarray:
    """log|expm1(s)| elementwise, stable for both tiny and huge |s|."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    big = s > 0.7
    neg = s <= 0.0
    mid = ~(big | neg)
    with np.errstate(divide="ignore"):
        # s > 0.7: expm1(s) = e^s (1 - e^-s)
        out[big] = s[big] + np.log1p(-np.exp(-s[big]))
        out[mid] = np.log(np.expm1(s[mid]))
        # s <= 0: |expm1(s)| = 1 - e^s
        out[neg] = np.log(-np.expm1(s[neg]))
    return out


def _integer_moment_log_a1(q: float, sigma: float, alpha: int) -> float:
    """log(E_Q[(P/Q)^alpha] - 1) for integer alpha >= 2 via the binomial sum.

    The j = 0, 1 terms of the binomial expansion sum to 1 exactly once each
    exponential factor e^{(j^2-j)/(2 sigma^2)} is replaced by 1 + expm1(...),
    leaving only non-negative j >= 2 terms.
    """
    j = np.arange(2, alpha + 1, dtype=float)
    log_binom = gammaln(alpha + 1.0) - gammaln(j + 1.0) - gammaln(alpha - j + 1.0)
    log_terms = (
        log_binom
        + (alpha - j) * math.log1p(-q)
        + j * math.log(q)
        + _log_abs_expm1((j * j - j) / (2.0 * sigma * sigma))
    )
    return float(logsumexp(log_terms))


def _quad_moment_log_a1(q: float, sigma: float, exponent: float) -> float:
    """log(E_Q[(P/Q)^e] - 1) by composite Gauss-Legendre quadrature.

    Integrates phi(y) |R(y)^e - 1| in the standardized coordinate y = x/sigma,
    where R = (1-q) + q e^{y/sigma - 1/(2 sigma^2)} is the likelihood ratio.
    R crosses 1 exactly at y0 = 1/(2 sigma), so splitting there yields two
    one-signed pieces whose logs are finite; the signed difference is the
    moment minus one.
    """
    y0 = 1.0 / (2.0 * sigma)
    ymax = abs(exponent) / sigma + _TAIL_WIDTH
    edges = np.arange(-ymax, ymax + _PANEL_WIDTH, _PANEL_WIDTH)
    edges = np.unique(np.concatenate((edges, [y0, -ymax, ymax])))
    edges = edges[(edges >= -ymax) & (edges <= ymax)]

    mids = 0.5 * (edges[1:] + edges[:-1])
    halves = 0.5 * (edges[1:] - edges[:-1])
    y = mids[:, None] + halves[:, None] * _GL_NODES[None, :]
    log_w = np.log(halves)[:, None] + np.log(_GL_WEIGHTS)[None, :]

    t = y / sigma - 1.0 / (2.0 * sigma * sigma)
    # log R = log(1 + q (e^t - 1)).  The direct log1p(q expm1(t)) form keeps
    # full relative precision where R is near 1 (log-sum-exp of the mixture
    # terms cancels there); fall back to log-sum-exp only where q e^t would
    # overflow, which is far from the crossing.
    log_q = math.log(q)
    log_r = np.empty_like(t)
    direct = t + log_q < 700.0
    log_r[direct] = np.log1p(q * np.expm1(t[direct]))
    log_r[~direct] = np.logaddexp(math.log1p(-q), log_q + t[~direct])
    s = exponent * log_r
    log_integrand = -0.5 * y * y - _LOG_SQRT_2PI + _log_abs_expm1(s)

    # R^e > 1 on the side of y0 where sign(e) matches sign(y - y0).
    above = y > y0
    pos_mask = above if exponent > 0.0 else ~above
    with np.errstate(invalid="ignore"):
        log_pos = float(logsumexp(np.where(pos_mask, log_integrand + log_w, -math.inf)))
        log_neg = float(logsumexp(np.where(pos_mask, -math.inf, log_integrand + log_w)))
    if log_neg >= log_pos:
        # True moment - 1 is below floating-point resolution.
        return -math.inf
    return log_pos + math.log1p(-math.exp(log_neg - log_pos))


def sgm_rdp_step(q: float, sigma: float, alpha: float) -> float:
    """Per-step Renyi divergence d_alpha of the subsampled Gaussian mechanism.

    Returns the larger of the two directed divergences between N(0, sigma^2)
    and (1-q) N(0, sigma^2) + q N(1, sigma^2).  q = 0 gives 0; q = 1 reduces
    to the plain Gaussian closed form; sigma = 0 gives +inf for q > 0.

    Integer orders use an exact stable binomial sum for the forward
    direction; fractional orders and the reverse direction use log-space
    quadrature.

    Raises:
        ValueError: if q is outside [0, 1], sigma < 0, alpha <= 1, or the
            result is NaN (overflow is reported, never silently saturated).
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"sampling rate q must be in [0, 1], got {q}")
    if sigma < 0.0:
        raise ValueError(f"noise multiplier must be >= 0, got {sigma}")
    if alpha <= 1.0:
        raise ValueError(f"order must be > 1, got {alpha}")
    if q == 0.0:
        return 0.0
    if sigma == 0.0:
        return math.inf
    if q == 1.0:
        return gaussian_rdp(sigma, alpha)

    if float(alpha).is_integer():
        log_a1_fwd = _integer_moment_log_a1(q, sigma, int(alpha))
    else:
        log_a1_fwd = _quad_moment_log_a1(q, sigma, alpha)
    log_a1_rev = _quad_moment_log_a1(q, sigma, 1.0 - alpha)

    log_a1 = max(log_a1_fwd, log_a1_rev)
    d = np.logaddexp(0.0, log_a1) / (alpha - 1.0)
    if math.isnan(d):
        raise ValueError(
            f"divergence overflowed to NaN at q={q}, sigma={sigma}, alpha={alpha}"
        )
    return float(d)


def sgm_rdp_curve(
    q: float,
    sigma: float,
    orders: np.ndarray | None = None,
    clip: float = 1.0,
) -> RdpCurve:
    """Per-step RDP curve of the subsampled Gaussian mechanism over a grid."""
    if orders is None:
        orders = default_order_grid()
    orders = np.asarray(orders, dtype=float)
    d_alpha = np.array([sgm_rdp_step(q, sigma, a) for a in orders])
    params = MechanismParams(q=q, sigma=sigma, steps=1, clip=clip)
    return RdpCurve(orders=orders, d_alpha=d_alpha, params=params)


def compose(curve: RdpCurve, steps: int) -> RdpCurve:
    """Compose a per-step curve over `steps` identical steps (additively).

    steps = 0 yields the all-zero curve (even where the per-step entry is
    +inf); for steps >= 1, +inf entries stay +inf.
    """
    if steps < 0:
        raise ValueError(f"step count must be >= 0, got {steps}")
    if steps == 0:
        d_alpha = np.zeros_like(curve.d_alpha)
    else:
        d_alpha = curve.d_alpha * float(steps)
    params = curve.params
    if params is not None:
        params = MechanismParams(
            q=params.q, sigma=params.sigma, steps=params.steps * steps, clip=params.clip
        )
    return RdpCurve(orders=curve.orders.copy(), d_alpha=d_alpha, params=params)


def rdp_to_dp_epsilon(curve: RdpCurve, delta: float) -> EpsilonResult:
    """Convert an RDP curve to (epsilon, delta)-DP.

    epsilon = min over the grid of d_alpha + log(1/delta)/(alpha - 1); ties
    break to the smallest order.  If every entry is +inf the result is +inf
    with the all_infinite flag set.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    eps = curve.d_alpha + math.log(1.0 / delta) / (curve.orders - 1.0)
    finite = np.isfinite(eps)
    if not np.any(finite):
        return EpsilonResult(epsilon=math.inf, best_alpha=None, all_infinite=True)
    best = int(np.argmin(np.where(finite, eps, math.inf)))
    return EpsilonResult(
        epsilon=float(eps[best]), best_alpha=float(curve.orders[best]), all_infinite=False
    )
