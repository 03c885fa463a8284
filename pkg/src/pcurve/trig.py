"""Finite trigonometric polynomials on the torus, with analytic derivatives."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

_KINDS = ("sin", "cos")


@dataclass(frozen=True)
class TrigTerm:
    amp: float
    k: tuple
    kind: str = "cos"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterError(f"trig term kind must be 'sin' or 'cos', got {self.kind!r}")
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        object.__setattr__(self, "amp", float(self.amp))

    def to_dict(self):
        return {"amp": self.amp, "k": list(self.k), "kind": self.kind}


@dataclass(frozen=True)
class TrigPoly:
    """constant + sum amp * sin/cos(k . x)."""

    constant: float = 0.0
    terms: tuple = field(default_factory=tuple)

    @classmethod
    def from_dict(cls, d):
        terms = tuple(TrigTerm(**t) for t in d.get("terms", ()))
        return cls(float(d.get("constant", 0.0)), terms)

    def to_dict(self):
        return {"constant": self.constant, "terms": [t.to_dict() for t in self.terms]}

    def _check(self, grid):
        for t in self.terms:
            if len(t.k) != grid.dim:
                raise ParameterError(f"wave vector {t.k} does not match dimension {grid.dim}")

    def _phase(self, term, x):
        return sum(ki * xi for ki, xi in zip(term.k, x))

    def values(self, grid):
        self._check(grid)
        x = grid.coords()
        out = np.full(grid.shape, self.constant)
        for t in self.terms:
            th = self._phase(t, x)
            out = out + t.amp * (np.sin(th) if t.kind == "sin" else np.cos(th))
        return out

    def gradient(self, grid):
        self._check(grid)
        x = grid.coords()
        out = np.zeros(grid.shape + (grid.dim,))
        for t in self.terms:
            th = self._phase(t, x)
            d = np.cos(th) if t.kind == "sin" else -np.sin(th)
            out += t.amp * d[..., None] * np.array(t.k, dtype=float)
        return out

    def hessian(self, grid):
        self._check(grid)
        x = grid.coords()
        n = grid.dim
        out = np.zeros(grid.shape + (n, n))
        for t in self.terms:
            th = self._phase(t, x)
            d = -np.sin(th) if t.kind == "sin" else -np.cos(th)
            k = np.array(t.k, dtype=float)
            out += t.amp * d[..., None, None] * np.outer(k, k)
        return out

    def min_bound(self):
        """Lower bound constant - sum |amp| (exact minimum for single-mode data)."""
        return self.constant - sum(abs(t.amp) for t in self.terms)
