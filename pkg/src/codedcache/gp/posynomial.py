"""Monomials and posynomials over named positive variables."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping


def _merge_exponents(*parts: Iterable[tuple[str, float]]) -> tuple[tuple[str, float], ...]:
    acc: dict[str, float] = {}
    for part in parts:
        for var, e in part:
            acc[var] = acc.get(var, 0.0) + e
    return tuple(sorted((v, e) for v, e in acc.items() if e != 0.0))


@dataclass(frozen=True)
class Monomial:
    """``coefficient * prod(var ** exponent)`` with a positive coefficient."""

    coefficient: float
    exponents: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        c = float(self.coefficient)
        if not (c > 0 and math.isfinite(c)):
            raise ValueError(f"monomial coefficient must be positive and finite, got {c!r}")
        object.__setattr__(self, "coefficient", c)
        object.__setattr__(self, "exponents", _merge_exponents(self.exponents))

    @classmethod
    def of(cls, coefficient: float, exponents: Mapping[str, float] | None = None) -> "Monomial":
        return cls(coefficient, tuple((exponents or {}).items()))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.exponents)

    def exponent(self, var: str) -> float:
        for v, e in self.exponents:
            if v == var:
                return e
        return 0.0

    def evaluate(self, values: Mapping[str, float]) -> float:
        out = self.coefficient
        for v, e in self.exponents:
            out *= values[v] ** e
        return out

    def log_evaluate(self, log_values: Mapping[str, float]) -> float:
        """log of the monomial at exp(log_values): an affine form."""
        return math.log(self.coefficient) + sum(e * log_values[v] for v, e in self.exponents)

    def __mul__(self, other):
        if isinstance(other, Monomial):
            return Monomial(self.coefficient * other.coefficient,
                            _merge_exponents(self.exponents, other.exponents))
        if isinstance(other, (int, float)):
            return Monomial(self.coefficient * other, self.exponents)
        return NotImplemented

    __rmul__ = __mul__

    def __pow__(self, power: float) -> "Monomial":
        return Monomial(self.coefficient**power, tuple((v, e * power) for v, e in self.exponents))

    def __truediv__(self, other):
        if isinstance(other, Monomial):
            return self * other ** -1.0
        return Monomial(self.coefficient / other, self.exponents)

    def without(self, var: str) -> "Monomial":
        return Monomial(self.coefficient, tuple((v, e) for v, e in self.exponents if v != var))

    def __str__(self):
        return " ".join([repr(self.coefficient)] + [f"{v}:{e!r}" for v, e in self.exponents])


@dataclass(frozen=True)
class Posynomial:
    terms: tuple[Monomial, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("posynomial needs at least one term")
        object.__setattr__(self, "terms", terms)

    @property
    def variables(self) -> set[str]:
        return {v for t in self.terms for v in t.variables}

    def evaluate(self, values: Mapping[str, float]) -> float:
        return math.fsum(t.evaluate(values) for t in self.terms)

    def log_evaluate(self, log_values: Mapping[str, float]) -> float:
        """log-sum-exp of the terms' affine forms."""
        z = [t.log_evaluate(log_values) for t in self.terms]
        zmax = max(z)
        return zmax + math.log(math.fsum(math.exp(v - zmax) for v in z))

    def __add__(self, other):
        if isinstance(other, Monomial):
            return Posynomial(self.terms + (other,))
        if isinstance(other, Posynomial):
            return Posynomial(self.terms + other.terms)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, (Monomial, int, float)):
            return Posynomial(tuple(t * other for t in self.terms))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Posynomial(tuple(t / other for t in self.terms))

    def __str__(self):
        return " + ".join(str(t) for t in self.terms)


def posy(*terms: Monomial) -> Posynomial:
    return Posynomial(tuple(terms))
