"""SGD training loops for the two-layer and three-layer learners."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import DegreeGrouping
from .model import (
    GcnParams2,
    GcnParams3,
    NoiseState,
    effective_weights,
    forward2,
    grad2,
    init_params2,
    init_params3,
    loss_l2,
    norm_2_4,
    propagate3,
    regularizer,
    sgd_step3,
)
from .sampling import SamplingPlan, draw, plan_effective_adjacency

__all__ = [
    "TrainConfig",
    "DecaySchedule",
    "TrainReport",
    "NumericalAbort",
    "train_two_layer",
    "train_three_layer",
    "select_best_noise",
    "evaluate",
    "output_weights",
    "paper_schedule",
    "with_schedule",
    "norm_2_4",
    "regularizer",
]

DIVERGENCE_FACTOR = 1e6


class NumericalAbort(RuntimeError):
    """Training produced a non-finite or runaway objective."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both training loops.

    ``dropout_kind`` is ``"sign"`` (random +-1 mask) or ``"bernoulli"``
    (keep with probability ``1 - dropout_rate``, rescaled by the keep
    probability, and identity at evaluation time). ``noise_per`` chooses
    whether smoothing and masks are redrawn every ``"step"`` or every
    ``"outer"`` iteration.
    """

    eta: float = 1e-3
    T: int = 4
    T_w: int = 100
    batch: int = 5
    m1: int = 500
    m2: int = 500
    lambda_w: float = 1e-4
    lambda_v: float = 1e-4
    sigma_w: float = 0.0
    sigma_v: float = 0.0
    eps0: float = 0.1
    dropout_on: bool = True
    dropout_rate: float = 0.4
    dropout_kind: str = "bernoulli"
    noise_per: str = "step"
    shared_sample: bool = False
    noise_candidates: int = 1
    seed: int = 0
    preset: str = "practical"

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")
        if self.T < 1 or self.T_w < 1 or self.batch < 1:
            raise ValueError("T, T_w and batch must be >= 1")
        if self.dropout_kind not in ("sign", "bernoulli"):
            raise ValueError("dropout_kind must be 'sign' or 'bernoulli'")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.noise_per not in ("step", "outer"):
            raise ValueError("noise_per must be 'step' or 'outer'")
        if self.noise_candidates < 1:
            raise ValueError("noise_candidates must be >= 1")

    @classmethod
    def practical(cls, **kw) -> "TrainConfig":
        """Small fixed regularizers, no smoothing, Bernoulli dropout at rate 0.4."""
        base = dict(lambda_w=1e-4, lambda_v=1e-4, sigma_w=0.0, sigma_v=0.0,
                    dropout_on=True, dropout_rate=0.4, dropout_kind="bernoulli", preset="practical")
        base.update(kw)
        return cls(**base)

    @classmethod
    def unit_l2(cls, **kw) -> "TrainConfig":
        """Practical preset with an l2 coefficient of 1 on ``V``."""
        base = dict(lambda_w=0.0, lambda_v=1.0)
        base.update(kw)
        return cls.practical(**base)

    @classmethod
    def theory(cls, m1: int, m2: int, eps0: float = 0.1, C0: float = 1.0, **kw) -> "TrainConfig":
        """Smoothing and regularizer weights set from the width-dependent formulas."""
        if C0 <= 0:
            raise ValueError("C0 must be positive")
        base = dict(
            m1=m1, m2=m2, eps0=eps0,
            sigma_w=m1 ** -0.99,
            sigma_v=m2 ** -0.51,
            lambda_v=2.0 * eps0 * m2 / m1 ** 0.99,
            lambda_w=2.0 * eps0 * m1 ** 2.998 / C0 ** 4,
            dropout_on=True, dropout_kind="sign", preset="theory",
        )
        base.update(kw)
        return cls(**base)


def paper_schedule(n_omega: int, T: int = 4) -> tuple[int, int]:
    """``(T, T_w)`` with ``T * T_w = 4 |Omega|``, splitting into ``T`` outer iterations."""
    total = 4 * n_omega
    if total % T:
        raise ValueError(f"4*|Omega|={total} not divisible by T={T}")
    return T, total // T


@dataclass(frozen=True)
class DecaySchedule:
    """Geometric weight decay ``lambda_t = (1 - eta)^t``.

    Evaluated in closed form so every ``lambda_t`` is the correctly rounded
    power rather than an accumulated product.
    """

    eta: float
    lambda0: float = 1.0

    def __call__(self, t: int) -> float:
        if t < 0:
            raise ValueError("t must be non-negative")
        return self.lambda0 * math.pow(1.0 - self.eta, t)

    def values(self, T: int) -> np.ndarray:
        return np.array([self(t) for t in range(T)])


@dataclass
class TrainReport:
    t: list = field(default_factory=list)
    lambda_t: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_test_loss: float = float("nan")
    W_out: np.ndarray | None = None
    V_out: np.ndarray | None = None
    wall_time: float = 0.0
    steps: int = 0

    def rows(self):
        return list(zip(self.t, self.lambda_t, self.train_loss, self.test_loss))

    @property
    def final_test_loss(self) -> float:
        return self.test_loss[-1] if self.test_loss else float("nan")


def _draw_noise(cfg: TrainConfig, rng, d: int, m1: int, m2: int) -> NoiseState:
    Wrho = rng.normal(0.0, cfg.sigma_w, (d, m1)) if cfg.sigma_w > 0 else None
    Vrho = rng.normal(0.0, cfg.sigma_v, (m1, m2)) if cfg.sigma_v > 0 else None
    sigma = None
    if cfg.dropout_on:
        if cfg.dropout_kind == "sign":
            sigma = rng.choice(np.array([-1.0, 1.0]), size=m1)
        elif cfg.dropout_rate > 0:
            keep = 1.0 - cfg.dropout_rate
            sigma = (rng.random(m1) < keep) / keep
    return NoiseState(Wrho, Vrho, sigma)


def _eval_noise(cfg: TrainConfig, noise: NoiseState) -> NoiseState:
    """Noise used when forming output weights; Bernoulli masks switch off."""
    if cfg.dropout_kind == "bernoulli":
        return NoiseState(noise.Wrho, noise.Vrho, None)
    return noise


def output_weights(p: GcnParams3, noise: NoiseState | None, lam: float):
    """``sqrt(lam)(W0 + W^rho + W Sigma)`` and the matching ``V`` expression."""
    return effective_weights(p, noise, lam)


def evaluate(W_out, V_out, p: GcnParams3, A_star, X, labels, index) -> float:
    """l2 loss over ``index`` with all three layers set to ``A_star`` and no noise."""
    index = np.asarray(index, dtype=np.int64).ravel()
    if index.size == 0:
        raise ValueError("evaluation over an empty index set")
    out, _ = propagate3((A_star, A_star, A_star), X, W_out, V_out, p.b1, p.b2, p.C, rows=index)
    return loss_l2(out, np.asarray(labels)[index])


def select_best_noise(candidates_count: int, eval_fn) -> int:
    """Index of the candidate with the smallest ``eval_fn(j)``; ties go to the lowest index."""
    if candidates_count < 1:
        raise ValueError("candidates_count must be >= 1")
    values = np.array([float(eval_fn(j)) for j in range(candidates_count)])
    return int(np.argmin(values))


def _check(loss: float, ref: float, where: str) -> None:
    if not math.isfinite(loss):
        raise NumericalAbort(f"non-finite objective at {where}")
    if ref > 0 and loss > DIVERGENCE_FACTOR * ref:
        raise NumericalAbort(f"objective {loss:.3e} exceeds {DIVERGENCE_FACTOR:.0e} x initial {ref:.3e} at {where}")


def train_three_layer(A, grouping: DegreeGrouping, plan: SamplingPlan, X, labels, omega, cfg: TrainConfig,
                      test=None, params: GcnParams3 | None = None, log=None):
    """Outer weight-decay loop around noisy SGD with per-step topology sampling.

    Returns ``(params, report)``; ``report.W_out``/``V_out`` hold the
    effective output weights and losses are measured under the plan's
    effective adjacency.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[:, None]
    omega = np.asarray(omega, dtype=np.int64).ravel()
    if omega.size == 0:
        raise ValueError("labeled set is empty")
    plan.validate(grouping)
    N, d = X.shape
    K = labels.shape[1]
    if params is None:
        params = init_params3(d, cfg.m1, cfg.m2, N, K, seed=cfg.seed)
    _, m1, m2, _, _ = params.dims
    astar = plan_effective_adjacency(A, grouping, plan)
    ss = np.random.SeedSequence(cfg.seed)
    rng_batch, rng_graph, rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))
    schedule = DecaySchedule(cfg.eta)
    report = TrainReport()
    start = time.perf_counter()

    def losses(noise, lam):
        Wo, Vo = output_weights(params, _eval_noise(cfg, noise), lam)
        tr = evaluate(Wo, Vo, params, astar, X, labels, omega)
        te = evaluate(Wo, Vo, params, astar, X, labels, test) if test is not None and len(test) else float("nan")
        return tr, te, Wo, Vo

    report.initial_train_loss, report.initial_test_loss, _, _ = losses(NoiseState(), 1.0)
    ref = report.initial_train_loss
    bsize = min(cfg.batch, omega.size)
    noise = NoiseState()
    step = 0
    for t in range(cfg.T):
        lam = schedule(t)
        if cfg.noise_per == "outer":
            noise = _draw_noise(cfg, rng_noise, d, m1, m2)
        for _ in range(cfg.T_w):
            idx = rng_batch.choice(omega, size=bsize, replace=False)
            if cfg.shared_sample:
                s = draw(A, grouping, plan, rng_graph, iteration=step)
                As = (s, s, s)
            else:
                As = tuple(draw(A, grouping, plan, rng_graph, iteration=step) for _ in range(3))
            if cfg.noise_per == "step":
                noise = _draw_noise(cfg, rng_noise, d, m1, m2)
            obj = sgd_step3(*As, X, params, labels[idx], idx, cfg.eta, noise, lam, cfg.lambda_w, cfg.lambda_v)
            _check(obj, ref, f"outer {t} step {step}")
            step += 1
        if cfg.noise_candidates > 1 and t == cfg.T - 1:
            cands = [noise] + [_draw_noise(cfg, rng_noise, d, m1, m2) for _ in range(cfg.noise_candidates - 1)]

            def objective(j):
                Wo, Vo = output_weights(params, _eval_noise(cfg, cands[j]), lam)
                reg, _, _ = regularizer(params.W, params.V, lam, cfg.lambda_w, cfg.lambda_v)
                return evaluate(Wo, Vo, params, astar, X, labels, omega) + reg

            noise = cands[select_best_noise(len(cands), objective)]
        tr, te, Wo, Vo = losses(noise, lam)
        _check(tr, ref, f"end of outer {t}")
        report.t.append(t)
        report.lambda_t.append(lam)
        report.train_loss.append(tr)
        report.test_loss.append(te)
        report.W_out, report.V_out = Wo, Vo
        if log is not None:
            log(f"outer {t}: lambda={lam:.6g} train={tr:.6g} test={te:.6g}")
    report.steps = step
    report.wall_time = time.perf_counter() - start
    return params, report


def train_two_layer(sampler, X, labels, omega, cfg: TrainConfig, test=None, params: GcnParams2 | None = None,
                    A_eval=None, eval_every: int | None = None, m: int | None = None):
    """Plain SGD on ``W`` with a fresh adjacency from ``sampler(rng, step)`` each step.

    ``sampler`` may also be a fixed adjacency. ``cfg.T`` counts steps here.
    Test loss under ``A_eval`` is recorded every ``eval_every`` steps.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[:, None]
    omega = np.asarray(omega, dtype=np.int64).ravel()
    if omega.size == 0:
        raise ValueError("labeled set is empty")
    N, d = X.shape
    if params is None:
        params = init_params2(d, m or cfg.m1, N, labels.shape[1], seed=cfg.seed)
    draw_adj = sampler if callable(sampler) else (lambda rng, step: sampler)
    if A_eval is None:
        if callable(sampler):
            raise ValueError("A_eval is required with a random sampler")
        A_eval = sampler
    ss = np.random.SeedSequence(cfg.seed)
    rng_batch, rng_graph = (np.random.default_rng(s) for s in ss.spawn(2))
    every = eval_every or max(1, cfg.T // 10)
    report = TrainReport()
    start = time.perf_counter()

    def full_losses():
        out, _ = forward2(A_eval, X, params)
        tr = loss_l2(out[omega], labels[omega])
        te = loss_l2(out[test], labels[test]) if test is not None and len(test) else float("nan")
        return tr, te

    report.initial_train_loss, report.initial_test_loss = full_losses()
    ref = report.initial_train_loss
    bsize = min(cfg.batch, omega.size)
    for step in range(cfg.T):
        idx = rng_batch.choice(omega, size=bsize, replace=False)
        _, cache = forward2(draw_adj(rng_graph, step), X, params, rows=idx)
        g = grad2(cache, params, labels[idx])
        _check(g.loss, ref, f"step {step}")
        if cfg.eta > 0:
            params.step(g.dW, cfg.eta)
        if (step + 1) % every == 0 or step == cfg.T - 1:
            tr, te = full_losses()
            _check(tr, ref, f"step {step}")
            report.t.append(step + 1)
            report.lambda_t.append(1.0)
            report.train_loss.append(tr)
            report.test_loss.append(te)
    report.steps = cfg.T
    report.wall_time = time.perf_counter() - start
    return params, report


def with_schedule(cfg: TrainConfig, n_omega: int, T: int = 4) -> TrainConfig:
    """Copy of ``cfg`` with ``T * T_w = 4 |Omega|``."""
    T, T_w = paper_schedule(n_omega, T)
    return replace(cfg, T=T, T_w=T_w)
