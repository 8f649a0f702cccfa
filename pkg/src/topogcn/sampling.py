"""Group-wise topology sampling, the effective adjacency and admissibility checks.

Every sampler here produces a diagonal rescaling of the normalized adjacency:
``A P`` for the asymmetric and FastGCN-style samplers and ``P A P`` for the
symmetric one. ``SampledAdjacency`` therefore stores only the diagonal and
materializes the sparse matrix on demand; the training loop consumes the
diagonal directly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .graph import DegreeGrouping, NormalizedAdjacency, infinity_norm

__all__ = [
    "Strategy",
    "SamplingPlan",
    "EffectiveAdjacency",
    "SampledAdjacency",
    "effective_adjacency",
    "psi",
    "check_pstar_bound",
    "check_sample_budget",
    "check_phat_tolerance",
    "minimal_budget",
    "sample_asymmetric",
    "sample_symmetric",
    "sample_fastgcn",
    "fastgcn_distribution",
    "draw",
    "plan_effective_adjacency",
    "deviation_inf",
    "estimate_sampling_deviation",
]


class Strategy(str, Enum):
    ASYMMETRIC = "asymmetric"
    SYMMETRIC = "symmetric"
    FASTGCN = "fastgcn"


@dataclass(frozen=True, eq=False)
class SamplingPlan:
    """Per-group scales and budgets, or a layer sample count for FastGCN."""

    strategy: Strategy
    pstar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    budget: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    n_layer_samples: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "pstar", np.asarray(self.pstar, dtype=np.float64).ravel())
        object.__setattr__(self, "budget", np.asarray(self.budget, dtype=np.int64).ravel())
        if self.strategy is Strategy.FASTGCN:
            if self.n_layer_samples < 1:
                raise ValueError("FastGCN plan needs n_layer_samples >= 1")
            return
        if self.pstar.shape != self.budget.shape:
            raise ValueError("pstar and budget must have one entry per group")
        if np.any(self.pstar < 0):
            raise ValueError("pstar must be non-negative")
        if np.any(self.budget < 1):
            raise ValueError("budgets must be >= 1")

    @classmethod
    def fractional(cls, grouping: DegreeGrouping, pstar, fraction, symmetric=False) -> "SamplingPlan":
        """Plan with ``S_l = round(fraction_l * N_l)`` (at least 1)."""
        frac = np.broadcast_to(np.asarray(fraction, dtype=np.float64), (grouping.L,))
        budget = np.clip(np.rint(frac * grouping.sizes), 1, grouping.sizes).astype(np.int64)
        strat = Strategy.SYMMETRIC if symmetric else Strategy.ASYMMETRIC
        return cls(strat, pstar, budget)

    @classmethod
    def fastgcn(cls, n_layer_samples: int) -> "SamplingPlan":
        return cls(Strategy.FASTGCN, n_layer_samples=int(n_layer_samples))

    def validate(self, grouping: DegreeGrouping) -> None:
        if self.strategy is Strategy.FASTGCN:
            if self.n_layer_samples > grouping.n:
                raise ValueError("n_layer_samples exceeds node count")
            return
        if self.pstar.shape != (grouping.L,):
            raise ValueError(f"plan has {self.pstar.size} groups, grouping has {grouping.L}")
        if np.any(self.budget > grouping.sizes):
            raise ValueError("budget S_l exceeds group size N_l")


@dataclass(frozen=True, eq=False)
class _DiagScaled:
    base: sp.csr_matrix
    col_scale: np.ndarray
    row_scale: np.ndarray | None

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        m = self.base @ sp.diags(self.col_scale)
        if self.row_scale is not None:
            m = sp.diags(self.row_scale) @ m
        m = sp.csr_matrix(m)
        m.sort_indices()
        return m

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True, eq=False)
class EffectiveAdjacency(_DiagScaled):
    """``A P*`` (asymmetric) or ``P* A P*`` with ``P*_ii = sqrt(p*_l)``."""

    pstar: np.ndarray = None
    symmetric: bool = False

    @cached_property
    def inf_norm(self) -> float:
        return infinity_norm(self.matrix)


@dataclass(frozen=True, eq=False)
class SampledAdjacency(_DiagScaled):
    """One random draw ``A^s``; ``selected`` lists sampled nodes per group."""

    selected: tuple = ()
    iteration: int | None = None


def _base(A) -> sp.csr_matrix:
    if isinstance(A, NormalizedAdjacency):
        return A.matrix
    if sp.issparse(A):
        return sp.csr_matrix(A)
    raise TypeError(f"expected a sparse adjacency, got {type(A).__name__}")


def effective_adjacency(A, grouping: DegreeGrouping, pstar, symmetric: bool = False) -> EffectiveAdjacency:
    base = _base(A)
    if grouping.n != base.shape[0]:
        raise ValueError(f"grouping covers {grouping.n} nodes, adjacency has {base.shape[0]}")
    p = np.asarray(pstar, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("pstar must be non-negative")
    per_node = grouping.expand(p)
    if symmetric:
        s = np.sqrt(per_node)
        return EffectiveAdjacency(base, s, s, pstar=p, symmetric=True)
    return EffectiveAdjacency(base, per_node, None, pstar=p, symmetric=False)


def psi(grouping: DegreeGrouping) -> np.ndarray:
    """Group importance ``sqrt(d_L d_l) N_l / sum_i d_i N_i``."""
    d = grouping.d
    n = grouping.sizes.astype(np.float64)
    if np.any(d <= 0):
        raise ValueError("all group degrees d_l must be positive")
    mass = float(np.dot(d, n))
    if mass <= 0:
        raise ValueError("zero total degree mass")
    return np.sqrt(d[-1] * d) * n / mass


def check_pstar_bound(pstar, psi_l, L: int, c1: float = 1.0, symmetric: bool = False) -> np.ndarray:
    """Per-group test of ``p*_l <= c1/(L psi_l)`` (``c2/(L^2 psi_l^2)`` if symmetric)."""
    p = np.asarray(pstar, dtype=np.float64)
    s = np.asarray(psi_l, dtype=np.float64)
    bound = c1 / (L * L * s * s) if symmetric else c1 / (L * s)
    return (p >= 0) & (p <= bound)


def _budget_threshold(pstar, psi_l, L, c1, eps_poly, symmetric):
    p = np.asarray(pstar, dtype=np.float64)
    s = np.asarray(psi_l, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        if symmetric:
            ratio = c1 * eps_poly / (L * np.sqrt(p) * s)
            thr = (1.0 + ratio) ** -2.0
        else:
            ratio = c1 * eps_poly / (L * p * s)
            thr = 1.0 / (1.0 + ratio)
    # p* = 0 makes the ratio infinite: no requirement
    return np.where(p > 0, np.nan_to_num(thr, nan=0.0), 0.0)


def check_sample_budget(S, N, pstar, psi_l, L: int, c1: float = 1.0, eps_poly: float = 0.1,
                        symmetric: bool = False) -> np.ndarray:
    """Per-group test of ``S_l/N_l >= (1 + c1 eps/(L p*_l psi_l))^{-1}``.

    The symmetric variant uses ``(1 + c2 eps/(L sqrt(p*_l) psi_l))^{-2}``.
    """
    if eps_poly <= 0:
        raise ValueError("eps_poly must be positive")
    S = np.asarray(S, dtype=np.float64)
    N = np.asarray(N, dtype=np.float64)
    p = np.asarray(pstar, dtype=np.float64)
    if np.any((p == 0) & (S > 0)):
        warnings.warn("group with p*_l = 0 is sampled but contributes nothing", RuntimeWarning, stacklevel=2)
    thr = _budget_threshold(p, psi_l, L, c1, eps_poly, symmetric)
    return S / N >= thr


def minimal_budget(grouping: DegreeGrouping, pstar, c1: float = 1.0, eps_poly: float = 0.1,
                   symmetric: bool = False) -> np.ndarray:
    """Smallest ``S_l`` per group that passes :func:`check_sample_budget`."""
    thr = _budget_threshold(pstar, psi(grouping), grouping.L, c1, eps_poly, symmetric)
    n = grouping.sizes
    s = np.ceil(thr * n - 1e-9).astype(np.int64)
    return np.clip(s, 1, n)


def check_phat_tolerance(phat, pstar, eps_poly: float) -> bool:
    ph = np.asarray(phat, dtype=np.float64)
    ps = np.asarray(pstar, dtype=np.float64)
    if np.any(ps <= 0):
        raise ValueError("pstar must be positive")
    return bool(np.max(np.abs(ph - ps) / ps) <= eps_poly)


def _group_scale(grouping: DegreeGrouping, plan: SamplingPlan, rng, sqrt: bool):
    n = grouping.n
    scale = np.zeros(n)
    selected = []
    for l in range(grouping.L):
        members = grouping.members(l)
        S = int(plan.budget[l])
        if S > members.size:
            raise ValueError(f"budget {S} exceeds group {l} size {members.size}")
        if S == members.size:
            pick = members
        else:
            pick = np.sort(rng.choice(members, size=S, replace=False))
        val = plan.pstar[l] * members.size / S
        scale[pick] = math.sqrt(val) if sqrt else val
        selected.append(pick)
    return scale, tuple(selected)


def sample_asymmetric(A, grouping: DegreeGrouping, plan: SamplingPlan, rng, iteration=None) -> SampledAdjacency:
    """``A^s = A P^s`` with ``P^s_jj = p*_l N_l / S_l`` on the sampled nodes."""
    base = _base(A)
    plan.validate(grouping)
    scale, selected = _group_scale(grouping, plan, rng, sqrt=False)
    return SampledAdjacency(base, scale, None, selected=selected, iteration=iteration)


def sample_symmetric(A, grouping: DegreeGrouping, plan: SamplingPlan, rng, iteration=None) -> SampledAdjacency:
    """``A^s = P^s A P^s`` with ``P^s_ii = sqrt(p*_l N_l / S_l)`` on the sampled nodes."""
    base = _base(A)
    plan.validate(grouping)
    scale, selected = _group_scale(grouping, plan, rng, sqrt=True)
    return SampledAdjacency(base, scale, scale, selected=selected, iteration=iteration)


def fastgcn_distribution(A) -> np.ndarray:
    """Importance distribution proportional to squared column norms."""
    base = _base(A)
    sq = np.asarray(base.multiply(base).sum(axis=0)).ravel()
    return sq / sq.sum()


def sample_fastgcn(A, n_layer_samples: int, rng, q=None, replace: bool = True, iteration=None) -> SampledAdjacency:
    """Layer-wise importance sampling.

    Columns are drawn i.i.d. from ``q`` (squared column norms by default) and
    each draw of column ``u`` contributes ``1/(n q_u)``, so ``E[A^s] = A``.
    ``replace=False`` is only supported for uniform ``q`` and then keeps
    ``n`` distinct columns scaled by ``N/n``.
    """
    base = _base(A)
    N = base.shape[0]
    n = int(n_layer_samples)
    if not 1 <= n <= N:
        raise ValueError("n_layer_samples must be in [1, N]")
    if isinstance(q, str) and q == "uniform":
        q = np.full(N, 1.0 / N)
    elif q is None:
        q = fastgcn_distribution(base)
    q = np.asarray(q, dtype=np.float64)
    if replace:
        draws = rng.choice(N, size=n, replace=True, p=q)
        counts = np.bincount(draws, minlength=N).astype(np.float64)
        scale = np.zeros(N)
        hit = counts > 0
        scale[hit] = counts[hit] / (n * q[hit])
    else:
        if not np.allclose(q, 1.0 / N):
            raise ValueError("sampling without replacement requires uniform q")
        pick = rng.choice(N, size=n, replace=False)
        scale = np.zeros(N)
        scale[pick] = N / n
    selected = (np.flatnonzero(scale),)
    return SampledAdjacency(base, scale, None, selected=selected, iteration=iteration)


def draw(A, grouping: DegreeGrouping, plan: SamplingPlan, rng, iteration=None) -> SampledAdjacency:
    """Dispatch on ``plan.strategy``."""
    if plan.strategy is Strategy.ASYMMETRIC:
        return sample_asymmetric(A, grouping, plan, rng, iteration)
    if plan.strategy is Strategy.SYMMETRIC:
        return sample_symmetric(A, grouping, plan, rng, iteration)
    return sample_fastgcn(A, plan.n_layer_samples, rng, iteration=iteration)


def plan_effective_adjacency(A, grouping: DegreeGrouping, plan: SamplingPlan) -> EffectiveAdjacency:
    """Deterministic matrix a plan's draws average to (``A`` itself for FastGCN)."""
    if plan.strategy is Strategy.FASTGCN:
        return effective_adjacency(A, grouping, np.ones(grouping.L))
    return effective_adjacency(A, grouping, plan.pstar, symmetric=plan.strategy is Strategy.SYMMETRIC)


def deviation_inf(sample: SampledAdjacency, astar: EffectiveAdjacency) -> float:
    """``||A^s - A*||_inf`` computed on the shared sparsity pattern."""
    base = sample.base
    if base is not astar.base and base.nnz != astar.base.nnz:
        raise ValueError("sample and effective adjacency come from different graphs")
    rows = np.repeat(np.arange(base.shape[0]), np.diff(base.indptr))
    cols = base.indices

    def entry_scale(m):
        s = m.col_scale[cols]
        if m.row_scale is not None:
            s = s * m.row_scale[rows]
        return s

    diff = np.abs(base.data) * np.abs(entry_scale(sample) - entry_scale(astar))
    sums = np.bincount(rows, weights=diff, minlength=base.shape[0])
    return float(sums.max())


def estimate_sampling_deviation(A, grouping: DegreeGrouping, plan: SamplingPlan, trials: int, rng) -> dict:
    """Monte-Carlo statistics of ``||A^s - A*||_inf`` over independent draws."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    astar = plan_effective_adjacency(A, grouping, plan)
    devs = np.array([deviation_inf(draw(A, grouping, plan, rng), astar) for _ in range(trials)])
    return {
        "mean": float(devs.mean()),
        "max": float(devs.max()),
        "astar_inf": astar.inf_norm,
        "trials": devs,
    }
