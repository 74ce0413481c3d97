"""Polynomial value-function approximators ``V(x) = w^T phi(x)``.

The feature vector holds every monomial of the selected total degrees, each
exactly once. With degrees ``{2, 3}`` this spans the same functions as the
Kronecker features ``[x (x) x, x (x) x (x) x]`` while keeping the least-squares
system full rank.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from vimpc.errors import RankDeficientError, UsageError
from vimpc.models import Box

RIDGE = 1e-10


def exponent_table(n: int, degrees) -> tuple[tuple[int, ...], ...]:
    """Graded-lexicographic multi-indices of the given total degrees."""
    rows = []
    for d in sorted(set(int(k) for k in degrees)):
        if d < 0:
            raise UsageError("monomial degrees must be nonnegative")
        # combinations_with_replacement is lexicographic in the variable
        # indices, which is descending lexicographic in the exponents.
        for combo in itertools.combinations_with_replacement(range(n), d):
            exps = [0] * n
            for i in combo:
                exps[i] += 1
            rows.append(tuple(exps))
    return tuple(rows)


@dataclass(frozen=True)
class MonomialBasis:
    n: int
    degrees: tuple[int, ...] = (2, 3)
    exponents: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise UsageError("state dimension must be positive")
        degs = tuple(sorted(set(int(d) for d in self.degrees)))
        object.__setattr__(self, "degrees", degs)
        object.__setattr__(self, "exponents", exponent_table(self.n, degs))

    @property
    def size(self) -> int:
        return len(self.exponents)

    @property
    def exponent_array(self) -> np.ndarray:
        return np.array(self.exponents, dtype=int).reshape(self.size, self.n)

    def features(self, x) -> np.ndarray:
        """Monomial features of ``x`` with shape ``(..., n) -> (..., size)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.n:
            raise UsageError(f"expected trailing dimension {self.n}, got shape {x.shape}")
        max_deg = max(self.degrees) if self.degrees else 0
        # powers[..., i, k] = x_i ** k
        powers = np.ones(x.shape + (max_deg + 1,))
        for k in range(1, max_deg + 1):
            powers[..., k] = powers[..., k - 1] * x
        E = self.exponent_array
        out = np.ones(x.shape[:-1] + (self.size,))
        for i in range(self.n):
            out = out * powers[..., i, :][..., E[:, i]]
        return out

    def degree_mask(self, degree: int) -> np.ndarray:
        return self.exponent_array.sum(axis=1) == degree


def features(basis: MonomialBasis, x) -> np.ndarray:
    return basis.features(x)


@dataclass(frozen=True)
class ValueApproximator:
    basis: MonomialBasis
    weights: np.ndarray
    domain: Box | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != self.basis.size:
            raise UsageError(f"expected {self.basis.size} weights, got {w.size}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zero(cls, basis: MonomialBasis, domain: Box | None = None) -> "ValueApproximator":
        return cls(basis, np.zeros(basis.size), domain)

    @property
    def n(self) -> int:
        return self.basis.n

    def __call__(self, x) -> np.ndarray:
        return self.basis.features(x) @ self.weights

    def with_weights(self, weights) -> "ValueApproximator":
        return ValueApproximator(self.basis, weights, self.domain)

    def to_dict(self) -> dict:
        data = {
            "n": self.basis.n,
            "degrees": list(self.basis.degrees),
            "exponent_table": [list(e) for e in self.basis.exponents],
            "weights": [float(w) for w in self.weights],
        }
        if self.domain is not None:
            data["domain"] = self.domain.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ValueApproximator":
        basis = MonomialBasis(int(data["n"]), tuple(data["degrees"]))
        if "exponent_table" in data:
            table = tuple(tuple(int(k) for k in e) for e in data["exponent_table"])
            if table != basis.exponents:
                raise UsageError("serialized exponent table does not match the basis ordering")
        domain = Box.from_dict(data["domain"]) if data.get("domain") else None
        return cls(basis, np.asarray(data["weights"], dtype=float), domain)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ValueApproximator":
        return cls.from_dict(json.loads(text))


def evaluate(approx: ValueApproximator, x):
    value = approx(x)
    return float(value) if np.ndim(value) == 0 else value


def fit_weights(basis: MonomialBasis, states, targets, ridge: float = RIDGE) -> np.ndarray:
    """Ridge least squares ``min ||Phi w - t||^2 + ridge ||w||^2``.

    Solved as an augmented least-squares problem by a QR factorization, so
    the normal equations are never formed.
    """
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if states.ndim != 2 or states.shape[0] != targets.size:
        raise UsageError(
            f"need one target per state: got {states.shape[0] if states.ndim == 2 else states.shape} "
            f"states and {targets.size} targets"
        )
    Phi = basis.features(states)
    p = basis.size
    if ridge > 0:
        A = np.vstack([Phi, np.sqrt(ridge) * np.eye(p)])
        b = np.concatenate([targets, np.zeros(p)])
    else:
        A, b = Phi, targets
    Qf, Rf = scipy.linalg.qr(A, mode="economic")
    diag = np.abs(np.diag(Rf))
    if diag.size < p or np.min(diag) <= 1e-14 * max(np.max(diag, initial=0.0), 1.0):
        raise RankDeficientError(
            "feature matrix is rank deficient; use ridge regularization or more samples"
        )
    return scipy.linalg.solve_triangular(Rf, Qf.T @ b)
