"""Exact binomial confidence bounds and Gaussian tail utilities.

Every certification guarantee in this package rests on the primitives in
this module, so each one is exact or conservative rather than asymptotic:
one-sided Clopper-Pearson limits are obtained by direct inversion of the
regularized incomplete Beta function, and the Gaussian quantile uses a
double-precision rational approximation (Wichura's algorithm AS 241).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = [
    "ConvergenceError",
    "lower_conf_bound",
    "upper_conf_bound",
    "lower_conf_bound_batch",
    "gaussian_quantile",
    "gaussian_cdf",
    "certified_radius",
    "binomial_pmf",
]

# Absolute tolerance for the Clopper-Pearson inversion.
CP_TOL = 1e-12
_MAX_ITER = 200
# Bisection steps for the vectorized inversion: interval width 2^-64 << CP_TOL.
_BATCH_ITER = 64


class ConvergenceError(RuntimeError):
    """A numerical inversion failed to reach its tolerance."""


def _validate_observation(successes: int, trials: int) -> None:
    if not float(successes).is_integer() or not float(trials).is_integer():
        raise ValueError("successes and trials must be integers")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise ValueError("need 0 <= successes <= trials")
    if trials > 2**63 - 1:
        raise ValueError("trials exceeds 64-bit integer range")


def _validate_confidence(confidence: float) -> None:
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie strictly in (0, 1)")


def _invert_reg_beta(a: float, b: float, target: float) -> float:
    """Solve I_x(a, b) = target for x, to absolute tolerance CP_TOL.

    Bracketed bisection on [0, 1] refined with Newton steps; the Newton
    update uses the Beta log-density so it stays finite for large shape
    parameters. Newton proposals outside the current bracket are rejected
    in favor of bisection, which guarantees convergence.
    """
    lo, hi = 0.0, 1.0
    x = min(max(a / (a + b), 1e-12), 1.0 - 1e-12)
    log_norm = special.betaln(a, b)
    for _ in range(_MAX_ITER):
        f = float(special.betainc(a, b, x)) - target
        if f == 0.0:
            return x
        if f > 0.0:
            hi = x
        else:
            lo = x
        if hi - lo <= CP_TOL:
            return 0.5 * (lo + hi)
        step = None
        if 0.0 < x < 1.0:
            log_pdf = (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - log_norm
            if log_pdf > -700.0:
                cand = x - f * math.exp(-log_pdf)
                if lo < cand < hi:
                    step = cand
        x = step if step is not None else 0.5 * (lo + hi)
    raise ConvergenceError(
        f"incomplete Beta inversion did not converge (a={a}, b={b}, target={target})"
    )


def lower_conf_bound(successes: int, trials: int, confidence: float) -> float:
    """One-sided Clopper-Pearson lower confidence limit.

    Returns the largest p_lo such that a Binomial(trials, p_lo) variable
    produces at least `successes` successes with probability <= 1-confidence.
    Equals the (1-confidence) quantile of Beta(successes, trials-successes+1),
    and 0 when successes = 0.

    Parameters
    ----------
    successes : int
        Observed success count.
    trials : int
        Number of Bernoulli trials, >= 1.
    confidence : float
        One-sided coverage level, strictly between 0 and 1.
    """
    _validate_observation(successes, trials)
    _validate_confidence(confidence)
    successes = int(successes)
    trials = int(trials)
    if successes == 0:
        return 0.0
    return _invert_reg_beta(float(successes), float(trials - successes + 1), 1.0 - confidence)


def upper_conf_bound(successes: int, trials: int, confidence: float) -> float:
    """One-sided Clopper-Pearson upper confidence limit.

    Equals the `confidence` quantile of Beta(successes+1, trials-successes),
    and 1 when successes = trials.
    """
    _validate_observation(successes, trials)
    _validate_confidence(confidence)
    successes = int(successes)
    trials = int(trials)
    if successes == trials:
        return 1.0
    return _invert_reg_beta(float(successes + 1), float(trials - successes), confidence)


def lower_conf_bound_batch(successes, trials: int, confidence: float) -> np.ndarray:
    """Vectorized `lower_conf_bound` over an array of success counts.

    Pure bisection (64 steps) on the regularized incomplete Beta function;
    agrees with the scalar path to well below CP_TOL. Used where a bound is
    needed for every count value at once, e.g. the certified-radius pmf.
    """
    _validate_confidence(confidence)
    ks = np.asarray(successes, dtype=np.int64)
    if ks.ndim != 1:
        raise ValueError("successes must be one-dimensional")
    if trials < 1 or ks.min() < 0 or ks.max() > trials:
        raise ValueError("need 0 <= successes <= trials, trials >= 1")
    target = 1.0 - confidence
    a = ks.astype(np.float64)
    b = (trials - ks + 1).astype(np.float64)
    lo = np.zeros(ks.shape)
    hi = np.ones(ks.shape)
    positive = ks > 0
    for _ in range(_BATCH_ITER):
        mid = 0.5 * (lo + hi)
        above = special.betainc(a, b, mid) >= target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    out = 0.5 * (lo + hi)
    out[~positive] = 0.0
    return out


# Coefficients of Wichura's AS 241 rational approximations (PPND16 variant),
# ascending order. Central region |p - 0.5| <= 0.425 uses _A/_B, the tail
# regions use _C/_D for r <= 5 and _E/_F beyond, with r = sqrt(-log(min(p,1-p))).
_A = (
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_C = (
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_D = (
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly(coeffs, x):
    # Horner evaluation of an ascending coefficient tuple.
    acc = np.full_like(x, coeffs[-1], dtype=np.float64)
    for c in reversed(coeffs[:-1]):
        acc = acc * x + c
    return acc


def _ppnd16(p: np.ndarray) -> np.ndarray:
    q = p - 0.5
    out = np.empty_like(q)
    central = np.abs(q) <= 0.425
    if central.any():
        r = 0.180625 - q[central] ** 2
        out[central] = q[central] * _poly(_A, r) / _poly(_B, r)
    tail = ~central
    if tail.any():
        r = np.sqrt(-np.log(np.minimum(p[tail], 1.0 - p[tail])))
        near = r <= 5.0
        z = np.empty_like(r)
        z[near] = _poly(_C, r[near] - 1.6) / _poly(_D, r[near] - 1.6)
        z[~near] = _poly(_E, r[~near] - 5.0) / _poly(_F, r[~near] - 5.0)
        out[tail] = np.where(q[tail] < 0.0, -z, z)
    return out


def gaussian_quantile(p):
    """Standard normal quantile function (inverse CDF).

    Accepts a scalar or ndarray of probabilities strictly inside (0, 1).
    Absolute error is below 1e-15 over the full double range, validated
    against an independent erfc-based CDF by round-trip.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and not ((arr > 0.0).all() and (arr < 1.0).all()):
        raise ValueError("probabilities must lie strictly in (0, 1)")
    out = _ppnd16(np.atleast_1d(arr))
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def gaussian_cdf(z):
    """Standard normal CDF, accurate to about one ulp (erfc based)."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("z must be finite")
    out = special.ndtr(arr)
    if arr.ndim == 0:
        return float(out)
    return out


def certified_radius(p_lower: float, sigma: float) -> float:
    """Certified l2 radius sigma * quantile(p_lower).

    Negative when p_lower < 0.5; callers treat radius <= 0 as
    non-certifiable.
    """
    if not 0.0 < p_lower < 1.0:
        raise ValueError("p_lower must lie strictly in (0, 1)")
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    return sigma * gaussian_quantile(p_lower)


def binomial_pmf(successes, trials: int, p: float):
    """Binomial probability mass, exact up to double rounding.

    Computed in log space so that large trial counts do not overflow.
    `successes` may be a scalar or an array of counts.
    """
    arr = np.asarray(successes, dtype=np.int64)
    if trials < 1 or not float(trials).is_integer():
        raise ValueError("trials must be an integer >= 1")
    if arr.size and (arr.min() < 0 or arr.max() > trials):
        raise ValueError("need 0 <= successes <= trials")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    trials = int(trials)
    k = np.atleast_1d(arr).astype(np.float64)
    if p == 0.0:
        out = np.where(k == 0, 1.0, 0.0)
    elif p == 1.0:
        out = np.where(k == trials, 1.0, 0.0)
    else:
        log_comb = (
            special.gammaln(trials + 1.0)
            - special.gammaln(k + 1.0)
            - special.gammaln(trials - k + 1.0)
        )
        out = np.exp(log_comb + k * math.log(p) + (trials - k) * math.log1p(-p))
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)
