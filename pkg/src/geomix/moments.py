"""Closed-form moments of uniform order statistics and geometric marginals.

The workhorse is the product-moment identity for the order statistics
U_{1:N} <= ... <= U_{N:N} of N standard uniforms: with natural exponents
alpha_1, ..., alpha_N and partial sums S_j = alpha_1 + ... + alpha_j,

    E[ prod_j U_{j:N}^{alpha_j} ] = N! * prod_{j=1}^{N} 1 / (S_j + j).

Everything else (moments of the rescaled parameters, window product
moments, geometric raw moments) reduces to this by binomial expansion.
Evaluation is done in log space to stay finite for N up to 10^6; an
exact-rational path exists for N <= 64 and is used in unit tests.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from geomix.core import BoundaryParams

__all__ = [
    "uniform_orderstat_product_moment",
    "uniform_orderstat_product_moment_exact",
    "uniform_orderstat_moment",
    "theta_moment",
    "theta_product_moment",
    "geometric_binomial_moment",
    "geometric_raw_moment",
    "stirling2",
]

_MAX_STIRLING_ORDER = 20


def _check_exponents(exps: Sequence[int]) -> np.ndarray:
    arr = np.asarray(exps)
    if arr.ndim != 1:
        raise ValueError("exponent vector must be 1-d")
    if arr.size and (np.any(arr < 0) or not np.issubdtype(arr.dtype, np.integer)):
        raise ValueError("exponents must be natural numbers")
    return arr.astype(np.int64)


def uniform_orderstat_product_moment(n: int, exps: Sequence[int]) -> float:
    """E[ prod_j U_{j:N}^{alpha_j} ] for the order statistics of n uniforms.

    ``exps`` must have length n.  Computed as
    exp(lgamma(n+1) - sum_j log(S_j + j)) with S_j the exponent partial
    sums, which telescopes the Gamma-ratio form of the identity.
    """
    alphas = _check_exponents(exps)
    if alphas.size != n:
        raise ValueError(f"exponent vector has length {alphas.size}, expected {n}")
    partial = np.cumsum(alphas, dtype=np.int64)
    j = np.arange(1, n + 1, dtype=np.int64)
    return math.exp(math.lgamma(n + 1) - float(np.sum(np.log(partial + j))))


def uniform_orderstat_product_moment_exact(n: int, exps: Sequence[int]) -> Fraction:
    """Exact-rational evaluation of the product moment; n <= 64."""
    if n > 64:
        raise ValueError("exact-rational path is limited to n <= 64")
    alphas = _check_exponents(exps)
    if alphas.size != n:
        raise ValueError(f"exponent vector has length {alphas.size}, expected {n}")
    value = Fraction(math.factorial(n))
    s = 0
    for j, a in enumerate(alphas, start=1):
        s += int(a)
        value /= s + j
    return value

def _window_log_moment(n: int, start: int, exps: np.ndarray) -> float:
    """log E[ U_{start:N}^{e_1} ... U_{start+k-1:N}^{e_k} ].

    Only the k sites of the window carry exponents, so the partial-sum
    product collapses: sites before the window contribute lgamma(start),
    sites after it contribute lgamma(L+n+1) - lgamma(L+start+k) with L
    the total exponent.  Cost is O(k) independent of n.
    """
    k = exps.size
    if start < 1 or start + k - 1 > n:
        raise ValueError(f"window [{start}, {start + k - 1}] out of range for n={n}")
    partial = np.cumsum(exps, dtype=np.int64)
    total = int(partial[-1]) if k else 0
    inside = float(np.sum(np.log(partial + np.arange(start, start + k))))
    before = math.lgamma(start)
    after = math.lgamma(total + n + 1) - math.lgamma(total + start + k)
    return math.lgamma(n + 1) - (before + inside + after)


def uniform_orderstat_moment(r: int, n: int, power: int) -> float:
    """E[U_{r:N}^k]: the single-index moment r(r+1)...(r+k-1)/((N+1)...(N+k))."""
    if not 1 <= r <= n:
        raise ValueError(f"index r={r} out of range 1..{n}")
    if power < 0:
        raise ValueError("power must be a natural number")
    if power == 0:
        return 1.0
    return math.exp(_window_log_moment(n, r, np.array([power], dtype=np.int64)))


def theta_moment(i: int, n: int, power: int, bounds: BoundaryParams) -> float:
    """E[Theta_{i,N}^p] for the rescaled order-statistic parameter.

    Binomial expansion of (theta_left + width * U_{i:N})^p over the
    single-index uniform moments.
    """
    if not 1 <= i <= n:
        raise ValueError(f"index i={i} out of range 1..{n}")
    if power < 0:
        raise ValueError("power must be a natural number")
    lo, width = bounds.theta_left, bounds.width
    total = 0.0
    for l in range(power + 1):
        coef = math.comb(power, l) * lo ** (power - l) * width**l
        if coef != 0.0:
            total += coef * uniform_orderstat_moment(i, n, l)
    return total


def theta_product_moment(
    start: int, exps: Sequence[int], n: int, bounds: BoundaryParams
) -> float:
    """E[Theta_{start}^{e_1} * ... * Theta_{start+k-1}^{e_k}] exactly.

    Multi-binomial expansion of the rescaled window into standard-uniform
    window moments; the window must satisfy start + k - 1 <= n.
    """
    powers = _check_exponents(exps)
    k = powers.size
    if k == 0:
        return 1.0
    if start < 1 or start + k - 1 > n:
        raise ValueError(f"window [{start}, {start + k - 1}] out of range for n={n}")
    lo, width = bounds.theta_left, bounds.width
    total_p = int(powers.sum())
    support = np.nonzero(powers)[0]
    if support.size == 0:
        return 1.0

    # expand only over the sites with nonzero exponent
    grids = [np.arange(powers[j] + 1) for j in support]
    combos = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, support.size)
    total = 0.0
    ls = np.zeros(k, dtype=np.int64)
    for combo in combos:
        ls[:] = 0
        ls[support] = combo
        l_sum = int(combo.sum())
        coef = lo ** (total_p - l_sum) * width**l_sum
        if coef == 0.0:
            continue
        for j in support:
            coef *= math.comb(int(powers[j]), int(ls[j]))
        active = np.nonzero(ls)[0]
        if active.size == 0:
            total += coef
            continue
        # zero exponents at the window edges shrink the effective window
        sub = ls[active[0] : active[-1] + 1]
        total += coef * math.exp(_window_log_moment(n, start + int(active[0]), sub))
    return total


@lru_cache(maxsize=None)
def _stirling_row(p: int) -> tuple[int, ...]:
    if p == 0:
        return (1,)
    prev = _stirling_row(p - 1)
    row = [0] * (p + 1)
    for j in range(1, p + 1):
        below = prev[j] if j < len(prev) else 0
        row[j] = j * below + prev[j - 1]
    return tuple(row)


def stirling2(p: int, j: int) -> int:
    """Stirling number of the second kind S(p, j); p <= 20."""
    if p < 0 or j < 0:
        raise ValueError("indices must be natural numbers")
    if p > _MAX_STIRLING_ORDER:
        raise ValueError(f"moment order {p} exceeds the supported cap {_MAX_STIRLING_ORDER}")
    if j > p:
        return 0
    return _stirling_row(p)[j]


def geometric_binomial_moment(theta: float, k: int) -> float:
    """E[C(eta, k)] under the geometric law with mean theta: equals theta**k."""
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    if k < 0:
        raise ValueError("k must be a natural number")
    return float(theta) ** k


def geometric_raw_moment(theta: float, p: int) -> float:
    """E[eta^p] under the geometric law with mean theta.

    Uses eta^p = sum_j S(p,j) * eta(eta-1)...(eta-j+1) together with the
    factorial-moment identity E[falling(eta, j)] = j! * theta^j.
    """
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    if p < 0:
        raise ValueError("p must be a natural number")
    return float(
        sum(stirling2(p, j) * math.factorial(j) * theta**j for j in range(p + 1))
    )


def geometric_raw_moment_coefficients(p: int) -> np.ndarray:
    """Coefficients c_j with E[eta^p | theta] = sum_j c_j theta^j."""
    if p < 0:
        raise ValueError("p must be a natural number")
    return np.array(
        [stirling2(p, j) * math.factorial(j) for j in range(p + 1)], dtype=float
    )
