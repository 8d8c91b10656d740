"""Independent reference implementations used to validate the package.

Everything here is deliberately written against raw scipy/mpmath/numpy
primitives, sharing no code with the package under test: adaptive QUADPACK
quadrature for the subsampled-Gaussian Renyi divergence, an arbitrary-precision
cross-check of that oracle, central finite differences for gradients, and
exhaustive enumeration of decoding-policy sequence probabilities.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad


def _log_abs_expm1_scalar(s: float) -> float:
    """log|expm1(s)| for a scalar, stable across magnitudes."""
    if s == 0.0:
        return -math.inf
    if s > 0.7:
        return s + math.log1p(-math.exp(-s))
    if s > 0.0:
        return math.log(math.expm1(s))
    return math.log(-math.expm1(s))


def _log_integrand(x: float, q: float, sigma: float, exponent: float) -> float:
    """log of phi_sigma(x) * |R(x)^e - 1| with R the mixture likelihood ratio."""
    t = (2.0 * x - 1.0) / (2.0 * sigma * sigma)
    if q == 1.0:
        log_r = t
    elif t + math.log(q) < 700.0:
        # Cancellation-free where R is near 1.
        log_r = math.log1p(q * math.expm1(t))
    else:
        log_r = np.logaddexp(math.log1p(-q), math.log(q) + t)
    s = exponent * log_r
    log_phi = -x * x / (2.0 * sigma * sigma) - math.log(sigma) - 0.5 * math.log(2.0 * math.pi)
    return log_phi + _log_abs_expm1_scalar(float(s))


def _log_piece(a: float, b: float, q: float, sigma: float, exponent: float) -> float:
    """log of the integral of the (non-negative) integrand over [a, b].

    Shifts by the sampled maximum of the log-integrand so QUADPACK works in a
    well-scaled linear space, then restores the shift.
    """
    grid = np.linspace(a, b, 4097)
    log_vals = np.array([_log_integrand(x, q, sigma, exponent) for x in grid])
    shift = float(np.max(log_vals))
    if shift == -math.inf:
        return -math.inf
    hints = [x for x in (0.0, 0.5, 1.0, exponent) if a < x < b]
    value, _abserr, *_ = quad(
        lambda x: math.exp(_log_integrand(x, q, sigma, exponent) - shift),
        a,
        b,
        points=hints or None,
        limit=400,
        epsabs=1e-300,
        epsrel=1e-12,
        full_output=1,
    )
    if value <= 0.0:
        return -math.inf
    return shift + math.log(value)


def _oracle_directed_rdp(q: float, sigma: float, alpha: float, exponent: float) -> float:
    """One directed Renyi divergence via adaptive quadrature of the moment.

    The moment E_Q[R^e] is computed as 1 + (positive piece - negative piece),
    split at x = 0.5 where R crosses 1, so the tiny-divergence regime keeps
    full relative precision.
    """
    lo = 0.5 - 36.0 * sigma
    hi = max(0.5 + 36.0 * sigma, exponent + 36.0 * sigma)
    log_below = _log_piece(lo, 0.5, q, sigma, exponent)
    log_above = _log_piece(0.5, hi, q, sigma, exponent)
    # R^e - 1 is positive above 0.5 for e > 0, below 0.5 for e < 0.
    log_pos, log_neg = (log_above, log_below) if exponent > 0 else (log_below, log_above)
    if log_neg >= log_pos:
        return 0.0
    log_a1 = log_pos + math.log1p(-math.exp(log_neg - log_pos))
    return float(np.logaddexp(0.0, log_a1) / (alpha - 1.0))


def oracle_sgm_rdp(q: float, sigma: float, alpha: float) -> float:
    """Reference d_alpha for the subsampled Gaussian mechanism.

    Max of the two directed divergences between N(0, sigma^2) and
    (1-q) N(0, sigma^2) + q N(1, sigma^2), each via QUADPACK.
    """
    if q == 0.0:
        return 0.0
    fwd = _oracle_directed_rdp(q, sigma, alpha, alpha)
    rev = _oracle_directed_rdp(q, sigma, alpha, 1.0 - alpha)
    return max(fwd, rev)


def oracle_sgm_rdp_mp(q: float, sigma: float, alpha: float, dps: int = 50) -> float:
    """Arbitrary-precision cross-check of oracle_sgm_rdp (mpmath, dps digits).

    Integrates the moment-minus-one integrand phi * (R^e - 1) directly with
    tanh-sinh quadrature (expm1 keeps it cancellation-free near the R = 1
    crossing at x = 0.5, which is also a split point), then takes the
    directed max.
    """
    import mpmath as mp

    with mp.workdps(dps):
        sig = mp.mpf(sigma)
        qq = mp.mpf(q)

        def moment_minus_one(e: mp.mpf) -> mp.mpf:
            def f(x):
                t = (2 * x - 1) / (2 * sig**2)
                r = (1 - qq) + qq * mp.e**t
                phi = mp.e ** (-(x**2) / (2 * sig**2)) / (sig * mp.sqrt(2 * mp.pi))
                return phi * mp.expm1(e * mp.log(r))

            lo = mp.mpf(0.5) - 50 * sig
            hi = max(mp.mpf(0.5) + 50 * sig, mp.mpf(e) + 50 * sig)
            pts = sorted({lo, mp.mpf(0), mp.mpf(0.5), mp.mpf(1), mp.mpf(e), hi})
            pts = [p for p in pts if lo <= p <= hi]
            return mp.quad(f, pts, maxdegree=12)

        a = mp.mpf(alpha)
        fwd = mp.log1p(moment_minus_one(a)) / (a - 1)
        rev = mp.log1p(moment_minus_one(1 - a)) / (a - 1)
        return float(max(fwd, rev))


def finite_difference_gradient(loss_fn, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar loss over an array."""
    grad = np.zeros_like(theta, dtype=float)
    it = np.nditer(theta, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        bumped = theta.copy()
        bumped[idx] += step
        up = loss_fn(bumped)
        bumped[idx] -= 2.0 * step
        down = loss_fn(bumped)
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def enumerate_policy_probs(
    log_probs_by_context: dict[tuple[int, ...], np.ndarray],
    k: int,
    betas: list[float],
    length: int,
    vocab: int,
) -> dict[tuple[int, ...], float]:
    """Exhaustive per-sequence probabilities under top-k/temperature decoding.

    Independent re-derivation: for each context, keep every token whose raw
    probability ties or beats the k-th largest, raise kept probabilities to
    1/beta, renormalize, and chain the products over all vocab^length
    sequences.
    """
    from itertools import product

    def step_probs(context: tuple[int, ...], beta: float) -> np.ndarray:
        log_p = np.asarray(log_probs_by_context[context], dtype=float)
        order = np.argsort(-log_p, kind="stable")
        threshold = log_p[order[min(k, vocab) - 1]]
        kept = log_p >= threshold
        out = np.zeros(vocab)
        scaled = np.exp(log_p[kept] / beta - np.max(log_p[kept] / beta))
        out[kept] = scaled / scaled.sum()
        return out

    result: dict[tuple[int, ...], float] = {}
    for seq in product(range(vocab), repeat=length):
        p = 1.0
        for i in range(length):
            p *= step_probs(tuple(seq[:i]), betas[i])[seq[i]]
        result[seq] = p
    return result
