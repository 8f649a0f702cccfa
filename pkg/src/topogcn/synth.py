"""Synthetic node-regression data: features, group-scaled target adjacencies, labels, splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import DegreeGrouping
from .sampling import EffectiveAdjacency, effective_adjacency

__all__ = [
    "ACTIVATIONS",
    "TargetSpec",
    "ConceptSpec",
    "SyntheticDataset",
    "gen_features",
    "gen_ahat",
    "gen_labels",
    "eval_concept_target",
    "split",
    "write_dataset",
    "read_dataset",
]

ACTIVATIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "identity": lambda z: z,
    "const": np.ones_like,
}


def _dense_or_sparse(adj):
    if hasattr(adj, "matrix"):
        return adj.matrix
    if sp.issparse(adj):
        return adj.tocsr()
    return np.atleast_2d(np.asarray(adj, dtype=np.float64))


def gen_features(N: int, d: int, seed: int, normalize: bool = False) -> np.ndarray:
    """I.i.d. standard normal features, optionally scaled to unit rows."""
    X = np.random.default_rng(seed).standard_normal((N, d))
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.where(norms > 0, norms, 1.0)
    return X


def gen_ahat(A, grouping: DegreeGrouping, phat) -> EffectiveAdjacency:
    """``A P_hat`` with the per-group column scales ``phat``."""
    return effective_adjacency(A, grouping, phat, symmetric=False)


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """Weights of the label generator.

    ``form="sin_tanh"`` gives ``(sin(Z) * tanh(Z)) C*`` and ``form="sin"``
    gives ``sin(Z) C*`` with ``Z = Ahat X W*``.
    """

    Wstar: np.ndarray
    Cstar: np.ndarray
    form: str = "sin_tanh"

    def __post_init__(self):
        if self.form not in ("sin_tanh", "sin"):
            raise ValueError(f"unknown target form {self.form!r}")
        if self.Wstar.shape[1] != self.Cstar.shape[0]:
            raise ValueError("W* columns must match C* rows")

    @classmethod
    def random(cls, d: int = 10, p: int = 10, K: int = 2, seed: int = 0, form: str = "sin_tanh") -> "TargetSpec":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((d, p)), rng.standard_normal((p, K)), form)


def gen_labels(Ahat, X, spec: TargetSpec) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != spec.Wstar.shape[0]:
        raise ValueError("feature dimension does not match W*")
    M = _dense_or_sparse(Ahat)
    if M.shape != (X.shape[0], X.shape[0]):
        raise ValueError("adjacency size does not match X")
    Z = M @ (X @ spec.Wstar)
    H = np.sin(Z) * np.tanh(Z) if spec.form == "sin_tanh" else np.sin(Z)
    return H @ spec.Cstar


@dataclass(frozen=True, eq=False)
class ConceptSpec:
    """Two-branch smooth target ``A*(Phi(r1) * r2) C*``.

    ``W1, W2`` are ``d x p2``, ``V1, V2`` are ``p2 x p1`` and ``C`` is
    ``p1 x K``; activations are names from ``ACTIVATIONS``.
    """

    W1: np.ndarray
    W2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    C: np.ndarray
    phi1: str = "sin"
    phi2: str = "sin"
    Phi: str = "identity"

    def validate(self, tol: float = 1e-9) -> None:
        for name in ("phi1", "phi2", "Phi"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ValueError(f"unknown activation {getattr(self, name)!r}")
        d, p2 = self.W1.shape
        p1 = self.V1.shape[1]
        if self.W2.shape != (d, p2) or self.V1.shape != (p2, p1) or self.V2.shape != (p2, p1):
            raise ValueError("inconsistent concept dimensions")
        if self.C.shape[0] != p1:
            raise ValueError("C* rows must equal p1")
        for name in ("W1", "W2", "V1", "V2"):
            norms = np.linalg.norm(getattr(self, name), axis=0)
            if np.any(np.abs(norms - 1.0) > tol):
                raise ValueError(f"columns of {name} must be unit norm")
        if np.max(np.abs(self.C)) > 1.0 + tol:
            raise ValueError("entries of C* must lie in [-1, 1]")

    @classmethod
    def random(cls, d: int, p1: int, p2: int, K: int, seed: int, phi1="sin", phi2="sin", Phi="identity"):
        rng = np.random.default_rng(seed)

        def unit(shape):
            M = rng.standard_normal(shape)
            return M / np.linalg.norm(M, axis=0, keepdims=True)

        return cls(unit((d, p2)), unit((d, p2)), unit((p2, p1)), unit((p2, p1)),
                   rng.uniform(-1.0, 1.0, (p1, K)), phi1, phi2, Phi)


def eval_concept_target(Astar, X, spec: ConceptSpec) -> np.ndarray:
    spec.validate()
    M = _dense_or_sparse(Astar)
    X = np.asarray(X, dtype=np.float64)
    AX = M @ X
    r1 = M @ (ACTIVATIONS[spec.phi1](AX @ spec.W1) @ spec.V1)
    r2 = M @ (ACTIVATIONS[spec.phi2](AX @ spec.W2) @ spec.V2)
    return M @ ((ACTIVATIONS[spec.Phi](r1) * r2) @ spec.C)


def split(N: int, n_train: int, n_test: int | None = None, seed: int = 0, nested: bool = False):
    """Disjoint uniform ``(omega, test)``; ``n_test=None`` uses every remaining node.

    Both sets come from one seeded permutation: ``omega`` is its prefix.
    With ``nested=True`` the test set is the permutation's suffix, so runs
    that differ only in ``n_train`` share a test set and have nested
    training sets.
    """
    if n_test is None:
        n_test = N - n_train
    if n_train < 0 or n_test < 0 or n_train + n_test > N:
        raise ValueError(f"cannot split {N} nodes into {n_train} train + {n_test} test")
    perm = np.random.default_rng(seed).permutation(N)
    test = perm[N - n_test:] if nested else perm[n_train:n_train + n_test]
    return np.sort(perm[:n_train]), np.sort(test)


@dataclass(eq=False)
class SyntheticDataset:
    X: np.ndarray
    Y: np.ndarray
    omega: np.ndarray
    test: np.ndarray
    ahat_spec: np.ndarray | None = None

    def __post_init__(self):
        if np.intersect1d(self.omega, self.test).size:
            raise ValueError("train and test sets overlap")
        if self.omega.size + self.test.size > self.X.shape[0]:
            raise ValueError("split larger than node count")


def _write_matrix(path: Path, M: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def write_dataset(ds: SyntheticDataset, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "X.csv", ds.X)
    _write_matrix(out / "Y.csv", ds.Y)
    role = {int(i): "train" for i in ds.omega}
    role.update({int(i): "test" for i in ds.test})
    with open(out / "split.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "role"])
        for node in sorted(role):
            w.writerow([node, role[node]])


def read_dataset(outdir) -> SyntheticDataset:
    out = Path(outdir)
    X = np.loadtxt(out / "X.csv", delimiter=",", ndmin=2)
    Y = np.loadtxt(out / "Y.csv", delimiter=",", ndmin=2)
    omega, test = [], []
    with open(out / "split.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            {"train": omega, "test": test}[row["role"]].append(int(row["node"]))
    return SyntheticDataset(X, Y, np.array(omega, dtype=np.int64), np.array(test, dtype=np.int64))
