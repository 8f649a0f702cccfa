"""Function-complexity sums over power-series coefficients and derived constants."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln, zeta

__all__ = [
    "PowerSeries",
    "ComplexityConstants",
    "SeriesNotConverged",
    "builtin_series",
    "c_eps",
    "c_s",
    "derive_constants",
]

I_MAX = 64
_TAIL_RTOL = 1e-12
_DOUBLING_RTOL = 1e-9
_MAX_TERMS = 1 << 14


class SeriesNotConverged(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class PowerSeries:
    """Absolute Taylor coefficients ``|c_i|`` at 0.

    ``coef`` optionally extends the series past the stored coefficients so the
    complexity sums can check their own convergence. Without it the stored
    coefficients are taken as exact (a polynomial).
    """

    coeffs: np.ndarray
    name: str = ""
    coef: Callable[[np.ndarray], np.ndarray] | None = None
    log_coef: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        c = np.abs(np.asarray(self.coeffs, dtype=np.float64).ravel())
        if c.size == 0:
            raise ValueError("series needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def i_max(self) -> int:
        return self.coeffs.size - 1

    def upto(self, n_terms: int) -> np.ndarray:
        if n_terms <= self.coeffs.size or self.coef is None:
            out = np.zeros(n_terms)
            k = min(n_terms, self.coeffs.size)
            out[:k] = self.coeffs[:k]
            return out
        return np.abs(self.coef(np.arange(n_terms)))

    def log_upto(self, n_terms: int) -> np.ndarray:
        """``log |c_i|`` (``-inf`` for zero coefficients), exact past the float range of ``|c_i|``."""
        if self.log_coef is not None and n_terms > self.coeffs.size:
            return self.log_coef(np.arange(n_terms))
        with np.errstate(divide="ignore"):
            return np.log(self.upto(n_terms))


def _inv_factorial(i: np.ndarray) -> np.ndarray:
    return np.exp(-gammaln(i + 1.0))


def _log_inv_factorial(i: np.ndarray) -> np.ndarray:
    return -gammaln(np.asarray(i) + 1.0)


def _sin_coef(i):
    return np.where(i % 2 == 1, _inv_factorial(i), 0.0)


def _sin_log(i):
    return np.where(i % 2 == 1, _log_inv_factorial(i), -np.inf)


def _cos_coef(i):
    return np.where(i % 2 == 0, _inv_factorial(i), 0.0)


def _cos_log(i):
    return np.where(i % 2 == 0, _log_inv_factorial(i), -np.inf)


def _tanh_coef(i):
    # |c_{2n-1}| = 2^{2n}(2^{2n}-1)|B_{2n}|/(2n)! = 2 zeta(2n) ((4/pi^2)^n - pi^{-2n})
    i = np.asarray(i)
    n = (i + 1) // 2
    odd = i % 2 == 1
    with np.errstate(under="ignore"):
        val = 2.0 * zeta(2.0 * np.maximum(n, 1)) * ((4.0 / math.pi ** 2) ** n - math.pi ** (-2.0 * n))
    return np.where(odd, val, 0.0)


def _tanh_log(i):
    i = np.asarray(i)
    n = np.maximum((i + 1) // 2, 1).astype(np.float64)
    val = (math.log(2.0) + np.log(zeta(2.0 * n)) + n * math.log(4.0 / math.pi ** 2)
           + np.log1p(-(0.25 ** n)))
    return np.where(i % 2 == 1, val, -np.inf)


def builtin_series(name: str, coeffs=None, n_terms: int = I_MAX + 1) -> PowerSeries:
    """Maclaurin ``|c_i|`` for sin, cos, exp, tanh, identity, const or ``poly``."""
    idx = np.arange(n_terms)
    if name == "sin":
        return PowerSeries(_sin_coef(idx), "sin", _sin_coef, _sin_log)
    if name == "cos":
        return PowerSeries(_cos_coef(idx), "cos", _cos_coef, _cos_log)
    if name == "exp":
        return PowerSeries(_inv_factorial(idx), "exp", _inv_factorial, _log_inv_factorial)
    if name == "tanh":
        return PowerSeries(_tanh_coef(idx), "tanh", _tanh_coef, _tanh_log)
    if name == "identity":
        return PowerSeries([0.0, 1.0], "identity")
    if name in ("const", "one"):
        return PowerSeries([1.0], "const")
    if name == "poly":
        if coeffs is None:
            raise ValueError("poly series needs coefficients")
        return PowerSeries(coeffs, "poly")
    raise ValueError(f"unknown series {name!r}")


def _sum_terms(series: PowerSeries, log_term: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sum ``exp(log_term(i) + log|c_i|)``; ``log_term`` gives the log of the non-coefficient factor."""

    def terms(n_terms):
        i = np.arange(n_terms, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            logs = log_term(i) + series.log_upto(n_terms)
            t = np.exp(np.where(np.isnan(logs), -np.inf, logs))
        return t

    n = series.coeffs.size
    if series.coef is None:
        with np.errstate(over="ignore"):
            s = float(terms(n).sum())
        if not np.isfinite(s):
            raise SeriesNotConverged(f"{series.name}: series not converged")
        return s

    n = max(n, I_MAX + 1)
    prev = None
    while n <= _MAX_TERMS:
        t = terms(n)
        with np.errstate(over="ignore"):
            s = float(t.sum())
        if np.isfinite(s):
            tail = float(t[3 * n // 4:].sum())
            if prev is not None and abs(s - prev) <= _DOUBLING_RTOL * abs(s) and tail <= _TAIL_RTOL * abs(s) + 1e-300:
                return s
            prev = s
        n *= 2
    raise SeriesNotConverged(f"{series.name}: series not converged")


def c_eps(series: PowerSeries, R: float, eps: float, Cstar: float = 1.0) -> float:
    """Approximation complexity: ``sum_i ((C*R)^i + (sqrt(log(1/eps)/i) C*R)^i) |c_i|``.

    The ``i = 0`` term of the second summand is taken as ``|c_0|``.
    """
    if R < 0:
        raise ValueError("R must be non-negative")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    x = Cstar * R
    log_inv = math.log(1.0 / eps)
    log_x = math.log(x) if x > 0 else -math.inf

    def log_term(i):
        # i log x, with 0 * log 0 = 0 so the constant coefficient always counts
        first = np.where(i == 0, 0.0, i * log_x)
        second = np.where(i == 0, 0.0, i * (0.5 * np.log(log_inv / np.maximum(i, 1.0)) + log_x))
        return np.logaddexp(first, second)

    return _sum_terms(series, log_term)


def c_s(series: PowerSeries, R: float, Cstar: float = 1.0) -> float:
    """Sample complexity: ``C* sum_i (i+1)^1.75 R^i |c_i|``."""
    if R < 0:
        raise ValueError("R must be non-negative")

    log_r = math.log(R) if R > 0 else -math.inf

    def log_term(i):
        return 1.75 * np.log1p(i) + np.where(i == 0, 0.0, i * log_r)

    return Cstar * _sum_terms(series, log_term)


@dataclass(frozen=True)
class ComplexityConstants:
    C: float
    C_prime: float
    C_dprime: float
    C0: float


def derive_constants(phi: PowerSeries, Phi: PowerSeries, A_inf: float, p1: int, p2: int, K: int,
                     eps: float, Cstar: float = 1.0, log_factor: float = 1.0) -> ComplexityConstants:
    """Width/step constants for the three-layer algorithm.

    ``C0`` drops the hidden polylog and multiplies by ``log_factor`` instead.
    """
    for v in (A_inf, p1, p2, K, eps, Cstar, log_factor):
        if not math.isfinite(v):
            raise ValueError("all inputs must be finite")
    root = math.sqrt(A_inf ** 2 + 1.0)
    C = c_eps(phi, A_inf, eps, Cstar) * root
    C_prime = 10.0 * C * math.sqrt(p2)
    C_dprime = c_eps(Phi, C_prime, eps, Cstar) * root
    C0 = log_factor * p1 ** 2 * p2 * K ** 2 * C * C_dprime
    return ComplexityConstants(C, C_prime, C_dprime, C0)
