"""Polynomials in several real variables with array-valued coefficients.

Anchors, bracket structure functions, local sections and jet vector fields
are all stored this way so that brackets (which need first derivatives) are
computed by coefficient algebra instead of nested finite differences.
"""
from __future__ import annotations

import numpy as np


class Polynomial:
    """``p(z) = sum_t coeffs[t] * prod_k z_k ** exps[t, k]``.

    ``coeffs`` has shape ``(n_terms, *shape)``; evaluation at a single point
    returns an array of ``shape``, at a batch ``(B, nvars)`` an array of
    ``(B, *shape)``.
    """

    __slots__ = ("nvars", "shape", "exps", "coeffs")

    def __init__(self, nvars, shape, exps, coeffs):
        self.nvars = int(nvars)
        self.shape = tuple(int(s) for s in shape)
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, self.nvars)
        coeffs = np.asarray(coeffs, dtype=float).reshape((len(exps),) + self.shape)
        # merge duplicate monomials, drop exact zeros
        if len(exps):
            order = np.lexsort(exps.T[::-1])
            exps, coeffs = exps[order], coeffs[order]
            starts = np.flatnonzero(np.concatenate([[True], np.any(exps[1:] != exps[:-1], axis=1)]))
            keys = exps[starts]
            merged = np.add.reduceat(coeffs, starts, axis=0) if len(starts) < len(exps) else coeffs
            nonzero = np.any(merged.reshape(len(keys), -1) != 0, axis=1)
            self.exps = np.ascontiguousarray(keys[nonzero], dtype=np.int64)
            self.coeffs = merged[nonzero]
        else:
            self.exps = np.zeros((0, self.nvars), dtype=np.int64)
            self.coeffs = np.zeros((0,) + self.shape)
        self.exps.setflags(write=False)
        self.coeffs.setflags(write=False)

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, nvars, shape):
        return cls(nvars, shape, np.zeros((0, nvars)), np.zeros((0,) + tuple(shape)))

    @classmethod
    def constant(cls, nvars, value):
        value = np.asarray(value, dtype=float)
        return cls(nvars, value.shape, np.zeros((1, nvars)), value[None])

    @classmethod
    def affine(cls, nvars, const, linear):
        """``const + sum_k z_k * linear[k]``; ``linear`` has shape ``(nvars, *shape)``."""
        const = np.asarray(const, dtype=float)
        linear = np.asarray(linear, dtype=float)
        if linear.shape != (nvars,) + const.shape:
            raise ValueError("linear part must have shape (nvars, *const.shape)")
        exps = np.vstack([np.zeros((1, nvars)), np.eye(nvars)])
        return cls(nvars, const.shape, exps, np.concatenate([const[None], linear]))

    @classmethod
    def variable(cls, nvars, k):
        e = np.zeros((1, nvars))
        e[0, k] = 1
        return cls(nvars, (), e, np.ones(1))

    # -- evaluation -----------------------------------------------------------
    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.nvars:
            raise ValueError(f"expected {self.nvars} variables, got {z.shape[-1]}")
        if len(self.exps) == 0:
            return np.zeros(z.shape[:-1] + self.shape)
        mono = np.prod(z[..., None, :] ** self.exps, axis=-1)
        return np.tensordot(mono, self.coeffs, axes=(-1, 0))

    def evaluator(self):
        """Fast callable for repeated evaluation (affine polynomials skip the monomial table)."""
        if not self.is_affine():
            return self
        const, linear = self.affine_parts()
        flat = linear.reshape(self.nvars, -1)
        shape = self.shape

        def evaluate(z):
            z = np.asarray(z, dtype=float)
            return const + (z @ flat).reshape(z.shape[:-1] + shape)

        return evaluate

    @property
    def degree(self):
        return int(self.exps.sum(axis=1).max()) if len(self.exps) else 0

    def is_affine(self):
        return self.degree <= 1

    def affine_parts(self):
        """``(const, linear)`` with ``linear[k]`` the coefficient of ``z_k``."""
        if not self.is_affine():
            raise ValueError("polynomial is not affine")
        const = np.zeros(self.shape)
        linear = np.zeros((self.nvars,) + self.shape)
        for e, c in zip(self.exps, self.coeffs):
            if e.sum() == 0:
                const = const + c
            else:
                linear[int(np.argmax(e))] += c
        return const, linear

    # -- calculus -------------------------------------------------------------
    def derivative(self, k):
        mask = self.exps[:, k] > 0
        exps = self.exps[mask].copy()
        factor = exps[:, k].astype(float)
        exps[:, k] -= 1
        coeffs = self.coeffs[mask] * factor.reshape((-1,) + (1,) * len(self.shape))
        return Polynomial(self.nvars, self.shape, exps, coeffs)

    def jacobian(self):
        """Derivative with the differentiation index appended last: shape ``(*shape, nvars)``."""
        parts = [self.derivative(k) for k in range(self.nvars)]
        exps, coeffs = [], []
        for k, p in enumerate(parts):
            for e, c in zip(p.exps, p.coeffs):
                block = np.zeros(self.shape + (self.nvars,))
                block[..., k] = c
                exps.append(e)
                coeffs.append(block)
        if not exps:
            return Polynomial.zero(self.nvars, self.shape + (self.nvars,))
        return Polynomial(self.nvars, self.shape + (self.nvars,), exps, coeffs)

    # -- algebra --------------------------------------------------------------
    def _check_compatible(self, other):
        if other.nvars != self.nvars:
            raise ValueError("polynomials live in different variable counts")

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.nvars, np.broadcast_to(other, self.shape))
        self._check_compatible(other)
        if other.shape != self.shape:
            raise ValueError("shape mismatch in polynomial addition")
        return Polynomial(
            self.nvars,
            self.shape,
            np.vstack([self.exps, other.exps]),
            np.concatenate([self.coeffs, other.coeffs]),
        )

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, self.shape, self.exps, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        if isinstance(scalar, Polynomial):
            return self.contract(scalar, _scalar_product_subscripts(self.shape, scalar.shape))
        return Polynomial(self.nvars, self.shape, self.exps, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def contract(self, other, subscripts):
        """Product of two polynomials whose coefficients combine by ``np.einsum(subscripts)``."""
        self._check_compatible(other)
        if len(self.exps) == 0 or len(other.exps) == 0:
            probe = np.einsum(subscripts, np.zeros(self.shape), np.zeros(other.shape))
            return Polynomial.zero(self.nvars, probe.shape)
        exps = (self.exps[:, None, :] + other.exps[None, :, :]).reshape(-1, self.nvars)
        lhs, rhs = subscripts.split("->")
        a, b = lhs.split(",")
        coeffs = np.einsum(f"x{a},y{b}->xy{rhs}", self.coeffs, other.coeffs)
        shape = coeffs.shape[2:]
        return Polynomial(self.nvars, shape, exps, coeffs.reshape((-1,) + shape))

    def compose_linear(self, D):
        """Substitute ``z = D @ w``; the result is a polynomial in ``w``."""
        D = np.asarray(D, dtype=float)
        if D.shape[0] != self.nvars:
            raise ValueError("substitution matrix has wrong row count")
        nw = D.shape[1]
        lin = [Polynomial(nw, (), np.eye(nw), D[k]) for k in range(self.nvars)]
        one = Polynomial.constant(nw, 1.0)
        total = Polynomial.zero(nw, self.shape)
        for e, c in zip(self.exps, self.coeffs):
            mono = one
            for k, power in enumerate(e):
                for _ in range(int(power)):
                    mono = mono * lin[k]
            total = total + mono.contract(Polynomial.constant(nw, c), _outer_subscripts(self.shape))
        return total

    def embed(self, nvars_new, positions=None):
        """Same polynomial read as a function of more variables (extra ones ignored)."""
        positions = list(range(self.nvars)) if positions is None else list(positions)
        exps = np.zeros((len(self.exps), nvars_new), dtype=np.int64)
        exps[:, positions] = self.exps
        return Polynomial(nvars_new, self.shape, exps, self.coeffs)

    def map_coeffs(self, fn):
        """Apply a linear map to every coefficient array."""
        if len(self.coeffs) == 0:
            shape = np.asarray(fn(np.zeros(self.shape))).shape
            return Polynomial.zero(self.nvars, shape)
        new = np.stack([np.asarray(fn(c), dtype=float) for c in self.coeffs])
        return Polynomial(self.nvars, new.shape[1:], self.exps, new)

    # -- serialization --------------------------------------------------------
    def to_json(self):
        return {
            "nvars": self.nvars,
            "shape": list(self.shape),
            "terms": [
                {"exp": [int(v) for v in e], "coef": np.asarray(c).tolist()}
                for e, c in zip(self.exps, self.coeffs)
            ],
        }

    @classmethod
    def from_json(cls, doc):
        nvars = int(doc["nvars"])
        shape = tuple(doc["shape"])
        terms = doc.get("terms", [])
        if not terms:
            return cls.zero(nvars, shape)
        exps = [t["exp"] for t in terms]
        coeffs = [np.asarray(t["coef"], dtype=float).reshape(shape) for t in terms]
        return cls(nvars, shape, exps, coeffs)

    def __repr__(self):
        return f"Polynomial(nvars={self.nvars}, shape={self.shape}, terms={len(self.exps)})"


_LETTERS = "abcdefghijklmnop"


def _scalar_product_subscripts(shape_a, shape_b):
    if shape_a == ():
        idx = _LETTERS[: len(shape_b)]
        return f",{idx}->{idx}"
    if shape_b == ():
        idx = _LETTERS[: len(shape_a)]
        return f"{idx},->{idx}"
    raise ValueError("use contract() for products of two non-scalar polynomials")


def _outer_subscripts(shape):
    idx = _LETTERS[: len(shape)]
    return f",{idx}->{idx}"
