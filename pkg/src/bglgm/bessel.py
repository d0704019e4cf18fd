"""Modified Bessel function of the second kind, K_nu.

Half-integer orders, which cover the default Matern smoothness values 0.5,
1.5 and 2.5, use the exact finite closed form.  Other orders combine the
ascending series (small arguments) with the large-argument asymptotic
expansion; worst-case relative error near the crossover is around 1e-7,
ample for correlation work.  Orders above one are reached by the upward
recurrence K_{v+1} = K_{v-1} + (2v/x) K_v, which is stable for K.
"""

from __future__ import annotations

import math

import numpy as np

_EULER_GAMMA = 0.5772156649015328606
_SERIES_MAX_TERMS = 400
_ASYMPTOTIC_MAX_TERMS = 50
# series cancellation grows ~ e^{2x} eps while the asymptotic error shrinks;
# the two error curves cross near x = 9 for the orders used here
_CROSSOVER = 9.0


def bessel_k(nu: float, x):
    """K_nu(x) for x >= 0; returns inf at x=0. Scalar in, scalar out."""
    nu = abs(float(nu))
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(nu)) or not np.all(np.isfinite(arr)):
        raise ValueError("bessel_k requires finite inputs")
    if np.any(arr < 0):
        raise ValueError("bessel_k requires x >= 0")
    two_nu = 2.0 * nu
    # snap orders within 1e-9 of a half-integer or integer: the reflection
    # series degenerates as sin(nu pi) -> 0
    if abs(two_nu - round(two_nu)) < 2e-9:
        two_nu = float(round(two_nu))
        nu = 0.5 * two_nu
    if two_nu == round(two_nu) and int(round(two_nu)) % 2 == 1:
        out = _half_integer_k(int(round(nu - 0.5)), arr)
    else:
        out = np.vectorize(_scalar_k, otypes=[float])(nu, arr)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def _half_integer_k(m: int, x: np.ndarray) -> np.ndarray:
    """K_{m+1/2}(x) = sqrt(pi/(2x)) e^{-x} sum_j (m+j)!/((m-j)! j!) (2x)^{-j}."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv2x = 1.0 / (2.0 * x)
        acc = np.ones_like(x)
        coeff = 1.0
        for j in range(1, m + 1):
            # (m+j)! / ((m-j)! j!) built up incrementally
            coeff *= (m + j) * (m - j + 1) / j
            acc = acc + coeff * inv2x ** j
        out = np.sqrt(np.pi * inv2x) * np.exp(-x) * acc
    return np.where(x == 0.0, np.inf, out)


def _scalar_k(nu: float, x: float) -> float:
    if x == 0.0:
        return math.inf
    if x >= _CROSSOVER:
        return _asymptotic_k(nu, x)
    n_whole = math.floor(nu)
    frac = nu - n_whole
    if frac == 0.0:
        k_lo = _series_k_integer(0, x)
        k_hi = _series_k_integer(1, x)
        order = 1.0
    else:
        # Both seed orders lie in (0,1) so the reflection series is safe.
        k_lo = _series_k_reflect(1.0 - frac, x)  # K_{frac-1} = K_{1-frac}
        k_mid = _series_k_reflect(frac, x)
        k_hi = k_lo + (2.0 * frac / x) * k_mid
        k_lo = k_mid
        order = frac + 1.0
    while order <= nu - 0.5:
        k_lo, k_hi = k_hi, k_lo + (2.0 * order / x) * k_hi
        order += 1.0
    return k_lo if abs(order - 1.0 - nu) < abs(order - nu) else k_hi


def _bessel_i_series(nu: float, x: float) -> float:
    """Ascending series for I_nu, nu > -1."""
    half = 0.5 * x
    term = math.exp(nu * math.log(half) - math.lgamma(nu + 1.0))
    total = term
    quarter_sq = half * half
    for k in range(1, _SERIES_MAX_TERMS):
        term *= quarter_sq / (k * (k + nu))
        total += term
        if abs(term) < 1e-18 * abs(total):
            break
    return total


def _series_k_reflect(nu: float, x: float) -> float:
    """K_nu via the reflection formula, for non-integer nu in (0, 1)."""
    i_plus = _bessel_i_series(nu, x)
    i_minus = _bessel_i_series(-nu, x)
    return 0.5 * math.pi * (i_minus - i_plus) / math.sin(nu * math.pi)


def _series_k_integer(n: int, x: float) -> float:
    """Ascending series for integer order with the log/digamma terms."""
    half = 0.5 * x
    quarter_sq = half * half
    log_half = math.log(half)
    # finite sum: 0.5 (x/2)^{-n} sum_{k<n} ((n-k-1)!/k!) (-x^2/4)^k
    finite = 0.0
    if n > 0:
        for k in range(n):
            finite += (
                math.factorial(n - k - 1) / math.factorial(k) * (-quarter_sq) ** k
            )
        finite *= 0.5 * half ** (-n)
    log_term = (-1.0) ** (n + 1) * log_half * _bessel_i_series(float(n), x)
    # infinite sum with digamma weights
    psi_a = -_EULER_GAMMA  # psi(1)
    psi_b = -_EULER_GAMMA + sum(1.0 / j for j in range(1, n + 1))  # psi(n+1)
    term = 1.0 / math.factorial(n)
    total = (psi_a + psi_b) * term
    for k in range(1, _SERIES_MAX_TERMS):
        term *= quarter_sq / (k * (n + k))
        psi_a += 1.0 / k
        psi_b += 1.0 / (n + k)
        contrib = (psi_a + psi_b) * term
        total += contrib
        if abs(contrib) < 1e-18 * abs(total):
            break
    tail = (-1.0) ** n * 0.5 * half ** n * total
    return finite + log_term + tail


def _asymptotic_k(nu: float, x: float) -> float:
    """Large-argument expansion, truncated at its smallest term."""
    mu4 = 4.0 * nu * nu
    term = 1.0
    total = 1.0
    prev_mag = math.inf
    for k in range(1, _ASYMPTOTIC_MAX_TERMS):
        term *= (mu4 - (2.0 * k - 1.0) ** 2) / (8.0 * k * x)
        mag = abs(term)
        if mag >= prev_mag:
            break
        total += term
        prev_mag = mag
        if mag < 1e-18 * abs(total):
            break
    return math.sqrt(0.5 * math.pi / x) * math.exp(-x) * total
