"""Two- and three-layer GCN learners with hand-written backpropagation.

Adjacency arguments may be a ``NormalizedAdjacency``, any diagonal-scaled
adjacency from :mod:`topogcn.sampling`, a scipy sparse matrix or a dense
array. When ``rows`` is given, only the receptive field of those rows is
touched: the output rows pull in the columns they reference in the last
adjacency, those pull in their own columns one layer down, and so on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dgemm

from .graph import NormalizedAdjacency

__all__ = [
    "GcnParams3",
    "GcnParams2",
    "NoiseState",
    "StaleCacheError",
    "init_params3",
    "init_params2",
    "effective_weights",
    "forward3",
    "forward2",
    "grad3",
    "grad2",
    "sgd_step3",
    "loss_l2",
    "norm_2_4",
    "regularizer",
    "save_params",
    "load_params",
]


class StaleCacheError(RuntimeError):
    pass


@dataclass(eq=False)
class GcnParams3:
    """Trainable offsets ``W, V`` plus the frozen initialization.

    ``b1`` and ``b2`` are the single rows repeated by the bias matrices.
    ``version`` must be bumped whenever ``W`` or ``V`` change in place.
    """

    W: np.ndarray
    V: np.ndarray
    W0: np.ndarray
    V0: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    C: np.ndarray
    N: int
    seed: int | None = None
    version: int = 0

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        d, m1 = self.W0.shape
        m2, K = self.C.shape
        return d, m1, m2, self.N, K

    @property
    def B1(self) -> np.ndarray:
        return np.broadcast_to(self.b1, (self.N, self.b1.size))

    @property
    def B2(self) -> np.ndarray:
        return np.broadcast_to(self.b2, (self.N, self.b2.size))

    def step(self, dW, dV, eta: float) -> None:
        self.W -= eta * dW
        self.V -= eta * dV
        self.version += 1

    def copy(self) -> "GcnParams3":
        return GcnParams3(self.W.copy(), self.V.copy(), self.W0, self.V0, self.b1, self.b2,
                          self.C, self.N, self.seed, self.version)


@dataclass(eq=False)
class GcnParams2:
    W: np.ndarray
    W0: np.ndarray
    b: np.ndarray
    Cout: np.ndarray
    N: int
    seed: int | None = None
    version: int = 0
    eps_c: float = 1.0

    @property
    def B(self) -> np.ndarray:
        return np.broadcast_to(self.b, (self.N, self.b.size))

    def step(self, dW, eta: float) -> None:
        self.W -= eta * dW
        self.version += 1


@dataclass
class NoiseState:
    """Per-step smoothing and hidden-unit masks.

    ``sigma`` holds the diagonal of the mask: +-1 signs for the analyzable
    dropout, ``{0, 1/keep}`` for Bernoulli dropout, ``None`` for identity.
    """

    Wrho: np.ndarray | None = None
    Vrho: np.ndarray | None = None
    sigma: np.ndarray | None = None


def init_params3(d: int, m1: int, m2: int, N: int, K: int, seed: int) -> GcnParams3:
    if min(d, m1, m2, N, K) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    W0 = rng.normal(0.0, 1.0 / np.sqrt(m1), size=(d, m1))
    V0 = rng.normal(0.0, 1.0 / np.sqrt(m2), size=(m1, m2))
    b1 = rng.normal(0.0, 1.0 / np.sqrt(m1), size=m1)
    b2 = rng.normal(0.0, 1.0 / np.sqrt(m2), size=m2)
    C = rng.normal(0.0, 1.0, size=(m2, K))
    return GcnParams3(np.zeros((d, m1)), np.zeros((m1, m2)), W0, V0, b1, b2, C, N, seed)


def init_params2(d: int, m: int, N: int, K: int, seed: int, eps_c: float = 1.0) -> GcnParams2:
    if min(d, m, N, K) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    W0 = rng.normal(0.0, 1.0 / np.sqrt(m), size=(d, m))
    b = rng.normal(0.0, 1.0 / np.sqrt(m), size=m)
    Cout = rng.normal(0.0, eps_c, size=(m, K))
    return GcnParams2(np.zeros((d, m)), W0, b, Cout, N, seed, eps_c=eps_c)


# --- adjacency plumbing -------------------------------------------------------


def _as_layer(adj):
    """Normalize to ``(csr, col_scale | None, row_scale | None)``."""
    if isinstance(adj, NormalizedAdjacency):
        return adj.matrix, None, None
    if hasattr(adj, "base") and hasattr(adj, "col_scale"):
        return adj.base, adj.col_scale, adj.row_scale
    if sp.issparse(adj):
        return sp.csr_matrix(adj), None, None
    return sp.csr_matrix(np.atleast_2d(np.asarray(adj, dtype=np.float64))), None, None


_DENSE_BLOCK = 1 << 18


def _gather(layer, rows: np.ndarray):
    """Rows of a scaled adjacency, compacted to the columns they reference.

    Returns the ``len(rows) x k`` block (dense when small, CSR otherwise)
    and the ``k`` global column ids.
    """
    base, cs, rs = layer
    indptr = base.indptr
    starts = indptr[rows]
    lens = indptr[rows + 1] - starts
    total = int(lens.sum())
    rid = np.repeat(np.arange(rows.size), lens)
    offsets = np.cumsum(lens) - lens
    pos = np.arange(total) - np.repeat(offsets - starts, lens)
    cols = base.indices[pos]
    vals = base.data[pos]
    if cs is not None:
        vals = vals * cs[cols]
    if rs is not None:
        vals = vals * rs[rows][rid]
    nz = vals != 0
    if not nz.all():
        rid, cols, vals = rid[nz], cols[nz], vals[nz]
    ucols, loc = np.unique(cols, return_inverse=True)
    if rows.size * ucols.size <= _DENSE_BLOCK:
        # small receptive fields are faster as dense blocks; CSR rows hold unique columns
        block = np.zeros((rows.size, ucols.size))
        block[rid, loc] = vals
    else:
        indptr = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(np.bincount(rid, minlength=rows.size), out=indptr[1:])
        block = sp.csr_matrix((vals, loc, indptr), shape=(rows.size, ucols.size))
    return block, ucols


def _chain(adjs, rows: np.ndarray):
    """Gather blocks from the last layer down; returns blocks (first layer first) and leaf ids."""
    blocks = []
    cur = rows
    for adj in reversed(adjs):
        block, cur = _gather(_as_layer(adj), cur)
        blocks.append(block)
    blocks.reverse()
    return blocks, cur


def _rows(rows, N) -> np.ndarray:
    if rows is None:
        return np.arange(N)
    rows = np.asarray(rows, dtype=np.int64).ravel()
    if rows.size and (rows.min() < 0 or rows.max() >= N):
        raise ValueError("row index out of range")
    return rows


def _relu(z):
    return np.maximum(z, 0.0)


# --- three-layer --------------------------------------------------------------


def effective_weights(p: GcnParams3, noise: NoiseState | None, lam: float):
    """``sqrt(lam)(W0 + W^rho + W Sigma)`` and ``sqrt(lam)(V0 + V^rho + Sigma V)``."""
    noise = noise or NoiseState()
    if noise.sigma is not None:
        Wb = p.W * noise.sigma[None, :]
        Vb = noise.sigma[:, None] * p.V
    else:
        Wb = p.W.copy()
        Vb = p.V.copy()
    Wb += p.W0
    Vb += p.V0
    if noise.Wrho is not None:
        Wb += noise.Wrho
    if noise.Vrho is not None:
        Vb += noise.Vrho
    if lam != 1.0:
        s = np.sqrt(lam)
        Wb *= s
        Vb *= s
    return Wb, Vb


@dataclass(eq=False)
class Cache3:
    rows: np.ndarray
    blocks: list
    leaf: np.ndarray
    M1: np.ndarray
    Z1: np.ndarray
    G2: np.ndarray
    Z2: np.ndarray
    Weff: np.ndarray
    Veff: np.ndarray
    sigma: np.ndarray | None
    lam: float
    version: int
    out: np.ndarray = field(repr=False)


def propagate3(adjs, X, Weff, Veff, b1, b2, C, rows=None):
    """Forward pass from explicit effective weights; returns ``(out, pieces)``."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if len(adjs) != 3:
        raise ValueError("three adjacencies required")
    if Weff.shape[0] != X.shape[1] or Veff.shape[0] != Weff.shape[1] or C.shape[0] != Veff.shape[1]:
        raise ValueError("dimension mismatch between features and weights")
    rows = _rows(rows, N)
    (A1, A2, A3), leaf = _chain(adjs, rows)
    if A1.shape[1] and leaf.max() >= N:
        raise ValueError("adjacency larger than feature matrix")
    M1 = A1 @ X[leaf]
    Z1 = M1 @ Weff + b1
    G2 = A2 @ _relu(Z1)
    Z2 = G2 @ Veff + b2
    out = (A3 @ _relu(Z2)) @ C
    return out, (rows, [A1, A2, A3], leaf, M1, Z1, G2, Z2)


def forward3(A1, A2, A3, X, p: GcnParams3, noise: NoiseState | None = None, lam: float = 1.0,
             rows=None):
    """Evaluate the three-layer learner; returns ``(out, cache)``.

    ``out`` has one row per entry of ``rows`` (all nodes by default).
    """
    if np.shape(X)[0] != p.N:
        raise ValueError(f"X has {np.shape(X)[0]} rows, params expect N={p.N}")
    Weff, Veff = effective_weights(p, noise, lam)
    out, (rows, blocks, leaf, M1, Z1, G2, Z2) = propagate3((A1, A2, A3), X, Weff, Veff, p.b1, p.b2, p.C, rows)
    sigma = noise.sigma if noise is not None else None
    cache = Cache3(rows, blocks, leaf, M1, Z1, G2, Z2, Weff, Veff, sigma, lam, p.version, out)
    return out, cache


@dataclass
class Grad3:
    objective: float
    loss: float
    dW: np.ndarray
    dV: np.ndarray


def loss_l2(pred, labels, index=None) -> float:
    """Mean of ``0.5 ||pred_i - y_i||^2`` over ``index`` (all rows by default)."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64).reshape(pred.shape)
    if index is not None:
        index = np.asarray(index, dtype=np.int64).ravel()
        pred, labels = pred[index], labels[index]
    if pred.shape[0] == 0:
        raise ValueError("loss over an empty index set")
    r = pred - labels
    return float(0.5 * np.mean(np.sum(r * r, axis=1)))


def norm_2_4(W) -> float:
    """``(sum_i ||w_i||_2^4)^(1/4)`` over the columns ``w_i``."""
    col_sq = np.sum(np.asarray(W, dtype=np.float64) ** 2, axis=0)
    return float(np.sum(col_sq * col_sq) ** 0.25)


def regularizer(W, V, lam: float, lambda_w: float, lambda_v: float):
    """``lambda_w ||sqrt(lam) W||_{2,4}^4 + lambda_v ||sqrt(lam) V||_F^2`` and its gradients."""
    col_sq = np.einsum("ij,ij->j", W, W)
    value = lambda_w * lam * lam * float(np.dot(col_sq, col_sq)) + lambda_v * lam * float(np.vdot(V, V))
    dW = (4.0 * lambda_w * lam * lam) * (W * col_sq[None, :])
    dV = (2.0 * lambda_v * lam) * V
    return value, dW, dV


def grad3(cache: Cache3, p: GcnParams3, labels, lambda_w: float = 0.0, lambda_v: float = 0.0,
          index=None) -> Grad3:
    """Subgradient of loss + regularizer with respect to the trainable ``W`` and ``V``.

    ``labels`` align with the cached output rows; ``index`` restricts the
    loss to a subset of those rows. ReLU'(0) is taken as 0.
    """
    if cache.version != p.version:
        raise StaleCacheError("parameters changed since the forward pass")
    out = cache.out
    labels = np.asarray(labels, dtype=np.float64).reshape(out.shape)
    resid = out - labels
    if index is not None:
        index = np.asarray(index, dtype=np.int64).ravel()
        mask = np.zeros(out.shape[0], dtype=bool)
        mask[index] = True
        resid = np.where(mask[:, None], resid, 0.0)
        n = index.size
    else:
        n = out.shape[0]
    if n == 0:
        raise ValueError("loss over an empty index set")
    loss = float(0.5 * np.sum(resid * resid) / n)
    A1, A2, A3 = cache.blocks
    dout = resid / n
    dH2 = A3.T @ (dout @ p.C.T)
    dZ2 = dH2 * (cache.Z2 > 0)
    dVeff = cache.G2.T @ dZ2
    dH1 = A2.T @ (dZ2 @ cache.Veff.T)
    dZ1 = dH1 * (cache.Z1 > 0)
    dWeff = cache.M1.T @ dZ1
    s = np.sqrt(cache.lam)
    if cache.sigma is not None:
        dW = dWeff * (s * cache.sigma)[None, :]
        dV = (s * cache.sigma)[:, None] * dVeff
    else:
        dW = s * dWeff
        dV = s * dVeff
    reg, rW, rV = regularizer(p.W, p.V, cache.lam, lambda_w, lambda_v)
    dW += rW
    dV += rV
    return Grad3(loss + reg, loss, dW, dV)


def sgd_step3(A1, A2, A3, X, p: GcnParams3, labels, rows, eta: float, noise: NoiseState | None = None,
              lam: float = 1.0, lambda_w: float = 0.0, lambda_v: float = 0.0) -> float:
    """One SGD step on a mini-batch, equivalent to ``grad3`` followed by ``p.step``.

    Products with ``V`` go through the batch's second-layer rows instead of
    materializing the effective ``m1 x m2`` matrices, and ``V`` is updated
    in place with a single BLAS call. Returns the pre-step objective.
    """
    noise = noise or NoiseState()
    X = np.asarray(X, dtype=np.float64)
    rows = _rows(rows, p.N)
    (B1, B2, B3), leaf = _chain((A1, A2, A3), rows)
    s = np.sqrt(lam)
    sig = noise.sigma
    Wb = p.W * sig[None, :] if sig is not None else p.W.copy()
    Wb += p.W0
    if noise.Wrho is not None:
        Wb += noise.Wrho
    Weff = s * Wb
    M1 = B1 @ X[leaf]
    Z1 = M1 @ Weff + p.b1
    G2 = B2 @ _relu(Z1)
    Gs = G2 * sig[None, :] if sig is not None else G2
    Z2 = G2 @ p.V0 + Gs @ p.V
    if noise.Vrho is not None:
        Z2 += G2 @ noise.Vrho
    Z2 *= s
    Z2 += p.b2
    out = (B3 @ _relu(Z2)) @ p.C
    labels = np.asarray(labels, dtype=np.float64).reshape(out.shape)
    resid = out - labels
    n = out.shape[0]
    loss = 0.5 * float(np.vdot(resid, resid)) / n
    dZ2 = (B3.T @ ((resid / n) @ p.C.T)) * (Z2 > 0)
    dVt = dZ2 @ p.V.T
    if sig is not None:
        dVt *= sig[None, :]
    dG2 = dZ2 @ p.V0.T + dVt
    if noise.Vrho is not None:
        dG2 += dZ2 @ noise.Vrho.T
    dG2 *= s
    dZ1 = (B2.T @ dG2) * (Z1 > 0)
    dW = M1.T @ dZ1
    dW *= s * sig[None, :] if sig is not None else s
    col_sq = np.einsum("ij,ij->j", p.W, p.W)
    reg = lambda_w * lam * lam * float(np.dot(col_sq, col_sq))
    if lambda_v:
        reg += lambda_v * lam * float(np.vdot(p.V, p.V))
    if eta > 0:
        dW += (4.0 * lambda_w * lam * lam) * (p.W * col_sq[None, :])
        p.W -= eta * dW
        if not (p.V.flags.c_contiguous and p.V.dtype == np.float64):
            p.V = np.ascontiguousarray(p.V, dtype=np.float64)
        # V <- (1 - 2 eta lambda_v lam) V - eta s (Sigma G2)^T dZ2, written through V^T
        dgemm(-eta * s, dZ2.T, Gs, 1.0 - 2.0 * eta * lambda_v * lam, p.V.T, overwrite_c=True)
        p.version += 1
    return loss + reg


# --- two-layer ----------------------------------------------------------------


@dataclass(eq=False)
class Cache2:
    rows: np.ndarray
    block: sp.csr_matrix
    M: np.ndarray
    Z: np.ndarray
    version: int
    out: np.ndarray = field(repr=False)


def forward2(A, X, p: GcnParams2, rows=None):
    """``relu(A X (W0 + W) + B) Cout`` for the requested rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != p.N:
        raise ValueError(f"X has {X.shape[0]} rows, params expect N={p.N}")
    if X.shape[1] != p.W0.shape[0]:
        raise ValueError("feature dimension does not match W")
    rows = _rows(rows, p.N)
    (block,), leaf = _chain((A,), rows)
    M = block @ X[leaf]
    Z = M @ (p.W0 + p.W) + p.b
    out = _relu(Z) @ p.Cout
    return out, Cache2(rows, block, M, Z, p.version, out)


@dataclass
class Grad2:
    loss: float
    dW: np.ndarray


def grad2(cache: Cache2, p: GcnParams2, labels, index=None) -> Grad2:
    if cache.version != p.version:
        raise StaleCacheError("parameters changed since the forward pass")
    out = cache.out
    labels = np.asarray(labels, dtype=np.float64).reshape(out.shape)
    resid = out - labels
    if index is not None:
        index = np.asarray(index, dtype=np.int64).ravel()
        mask = np.zeros(out.shape[0], dtype=bool)
        mask[index] = True
        resid = np.where(mask[:, None], resid, 0.0)
        n = index.size
    else:
        n = out.shape[0]
    if n == 0:
        raise ValueError("loss over an empty index set")
    loss = float(0.5 * np.sum(resid * resid) / n)
    dZ = ((resid / n) @ p.Cout.T) * (cache.Z > 0)
    return Grad2(loss, cache.M.T @ dZ)


# --- checkpoints --------------------------------------------------------------


def save_params(p, path) -> None:
    """Write dims, seed and the trainable weights; frozen parts re-derive from the seed."""
    if isinstance(p, GcnParams3):
        d, m1, m2, N, K = p.dims
        np.savez(path, arch=3, dims=np.array([d, m1, m2, N, K]), seed=p.seed, W=p.W, V=p.V)
    else:
        d, m = p.W0.shape
        np.savez(path, arch=2, dims=np.array([d, m, p.N, p.Cout.shape[1]]), seed=p.seed, W=p.W,
                 eps_c=p.eps_c)


def load_params(path):
    with np.load(path, allow_pickle=False) as z:
        arch = int(z["arch"])
        dims = [int(v) for v in z["dims"]]
        seed = int(z["seed"])
        if arch == 3:
            p = init_params3(*dims, seed=seed)
            p.W[...] = z["W"]
            p.V[...] = z["V"]
        else:
            d, m, N, K = dims
            p = init_params2(d, m, N, K, seed, eps_c=float(z["eps_c"]))
            p.W[...] = z["W"]
    return p
