"""Interior (cap) symbols as expression trees of separable terms.

A symbol on the flat cap chart is a sum of terms coeff(x) * m(zeta) with
zeta = xi_1 + i xi_2 the complexified covariable and

    m(zeta) = zeta^a conj(zeta)^b (eps^2 + |zeta|^2)^(-s/2),

a vocabulary closed under products that covers polynomials (s = 0), the
bounded substitution xi -> xi / sqrt(1 + |xi|^2) (eps = 1, s = a + b) and the
smoothed winding factors used by the model problems.  Trees add products,
sums, pointwise (regularized) inverses and the bounded transform; every node
evaluates pointwise and exposes its top-order homogeneous principal part.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_COEFF_KINDS: dict[str, type] = {}
_NODE_KINDS: dict[str, type] = {}


def _register(registry, tag):
    def deco(cls):
        registry[tag] = cls
        cls.tag = tag
        return cls
    return deco


def coeff_from_dict(d):
    return _COEFF_KINDS[d["kind"]].from_dict(d)


def symbol_from_dict(d):
    return _NODE_KINDS[d["kind"]].from_dict(d)


def _c2l(z: complex):
    return [float(np.real(z)), float(np.imag(z))]


def _mat_to_list(m):
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    return [[_c2l(z) for z in row] for row in m]


def _mat_from_list(lst):
    return np.array([[complex(a, b) for a, b in row] for row in lst])


# ---------------------------------------------------------------------------
# coefficients: functions of the cap point x = (x1, x2), valued in C^{k x k}
# ---------------------------------------------------------------------------

class Coefficient:
    fiber_dim: int

    def eval(self, xs: np.ndarray) -> np.ndarray:
        """xs: (P, 2) points -> (P, k, k) values."""
        raise NotImplementedError


@_register(_COEFF_KINDS, "const")
class ConstCoeff(Coefficient):
    def __init__(self, value):
        self.value = np.atleast_2d(np.asarray(value, dtype=complex))
        self.fiber_dim = self.value.shape[0]

    def eval(self, xs):
        return np.broadcast_to(self.value, (len(xs),) + self.value.shape).copy()

    def to_dict(self):
        return {"kind": self.tag, "value": _mat_to_list(self.value)}

    @classmethod
    def from_dict(cls, d):
        return cls(_mat_from_list(d["value"]))


@_register(_COEFF_KINDS, "poly2")
class Poly2Coeff(Coefficient):
    """Polynomial in (x1, x2): sum over (i, j) of C_ij x1^i x2^j."""

    def __init__(self, terms: dict):
        self.terms = {tuple(k): np.atleast_2d(np.asarray(v, dtype=complex))
                      for k, v in terms.items()}
        self.fiber_dim = next(iter(self.terms.values())).shape[0]

    def eval(self, xs):
        xs = np.asarray(xs, dtype=float)
        k = self.fiber_dim
        out = np.zeros((len(xs), k, k), dtype=complex)
        for (i, j), c in self.terms.items():
            out += (xs[:, 0] ** i * xs[:, 1] ** j)[:, None, None] * c
        return out

    def to_dict(self):
        return {"kind": self.tag,
                "terms": [[list(k), _mat_to_list(v)] for k, v in sorted(self.terms.items())]}

    @classmethod
    def from_dict(cls, d):
        return cls({tuple(k): _mat_from_list(v) for k, v in d["terms"]})


@_register(_COEFF_KINDS, "radial")
class RadialCoeff(Coefficient):
    """Scalar radial profile from samples of |x| (linear interpolation),
    times a constant matrix."""

    def __init__(self, r_samples, values, matrix=None):
        self.r_samples = np.asarray(r_samples, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.matrix = np.eye(1) if matrix is None else np.atleast_2d(np.asarray(matrix, dtype=complex))
        self.fiber_dim = self.matrix.shape[0]

    def eval(self, xs):
        r = np.hypot(xs[:, 0], xs[:, 1])
        prof = np.interp(r, self.r_samples, self.values)
        return prof[:, None, None] * self.matrix

    def to_dict(self):
        return {"kind": self.tag, "r_samples": self.r_samples.tolist(),
                "values": self.values.tolist(), "matrix": _mat_to_list(self.matrix)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["r_samples"]), np.array(d["values"]),
                   _mat_from_list(d["matrix"]))


@_register(_COEFF_KINDS, "coeff_product")
class CoeffProduct(Coefficient):
    def __init__(self, parts: Sequence[Coefficient]):
        self.parts = list(parts)
        self.fiber_dim = max(p.fiber_dim for p in self.parts)

    def eval(self, xs):
        out = None
        for p in self.parts:
            v = p.eval(xs)
            if v.shape[-1] == 1 and self.fiber_dim > 1:
                v = v[:, 0, 0][:, None, None] * np.eye(self.fiber_dim)
            out = v if out is None else np.einsum("pij,pjk->pik", out, v)
        return out

    def to_dict(self):
        return {"kind": self.tag, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d):
        return cls([coeff_from_dict(p) for p in d["parts"]])


# ---------------------------------------------------------------------------
# symbol nodes
# ---------------------------------------------------------------------------

class InteriorSymbol:
    """Base node: evaluate(xs, zetas) -> (P, Z, k, k)."""

    order: float
    fiber_dim: int

    def evaluate(self, xs: np.ndarray, zetas: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def principal(self, xs: np.ndarray, zeta_hats: np.ndarray) -> np.ndarray:
        """Top-order homogeneous part at unit directions (P, Z, k, k)."""
        raise NotImplementedError


def _promote(arr, k):
    if arr.shape[-1] == 1 and k > 1:
        return arr[..., 0, 0][..., None, None] * np.eye(k)
    return arr


@_register(_NODE_KINDS, "term")
class Term(InteriorSymbol):
    def __init__(self, coeff: Coefficient, a: int = 0, b: int = 0,
                 s: float = 0.0, eps: float = 1.0):
        self.coeff = coeff
        self.a, self.b = int(a), int(b)
        self.s, self.eps = float(s), float(eps)
        self.order = self.a + self.b - self.s
        self.fiber_dim = coeff.fiber_dim

    def _mult(self, zetas):
        z = np.asarray(zetas, dtype=complex)
        out = z ** self.a * np.conj(z) ** self.b
        if self.s:
            out = out * (self.eps ** 2 + np.abs(z) ** 2) ** (-self.s / 2.0)
        return out

    def evaluate(self, xs, zetas):
        c = self.coeff.eval(xs)  # (P,k,k)
        m = self._mult(zetas)    # (Z,)
        return c[:, None, :, :] * m[None, :, None, None]

    def principal(self, xs, zeta_hats):
        zh = np.asarray(zeta_hats, dtype=complex)
        m = zh ** self.a * np.conj(zh) ** self.b
        c = self.coeff.eval(xs)
        return c[:, None, :, :] * m[None, :, None, None]

    def to_dict(self):
        return {"kind": self.tag, "coeff": self.coeff.to_dict(),
                "a": self.a, "b": self.b, "s": self.s, "eps": self.eps}

    @classmethod
    def from_dict(cls, d):
        return cls(coeff_from_dict(d["coeff"]), d["a"], d["b"], d["s"], d["eps"])


def const_symbol(matrix) -> Term:
    return Term(ConstCoeff(matrix))


class _SymComposite(InteriorSymbol):
    def __init__(self, parts: Sequence[InteriorSymbol]):
        self.parts = list(parts)
        self.fiber_dim = max(p.fiber_dim for p in self.parts)

    def to_dict(self):
        return {"kind": self.tag, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d):
        return cls([symbol_from_dict(p) for p in d["parts"]])


@_register(_NODE_KINDS, "sym_sum")
class SymSum(_SymComposite):
    def __init__(self, parts):
        super().__init__(parts)
        self.order = max(p.order for p in self.parts)

    def evaluate(self, xs, zetas):
        k = self.fiber_dim
        out = _promote(self.parts[0].evaluate(xs, zetas), k)
        for p in self.parts[1:]:
            out = out + _promote(p.evaluate(xs, zetas), k)
        return out

    def principal(self, xs, zeta_hats):
        k = self.fiber_dim
        tops = [p for p in self.parts if p.order == self.order]
        out = _promote(tops[0].principal(xs, zeta_hats), k)
        for p in tops[1:]:
            out = out + _promote(p.principal(xs, zeta_hats), k)
        return out


@_register(_NODE_KINDS, "sym_product")
class SymProduct(_SymComposite):
    def __init__(self, parts):
        super().__init__(parts)
        self.order = sum(p.order for p in self.parts)

    def evaluate(self, xs, zetas):
        k = self.fiber_dim
        out = _promote(self.parts[0].evaluate(xs, zetas), k)
        for p in self.parts[1:]:
            out = np.einsum("pzij,pzjk->pzik", out, _promote(p.evaluate(xs, zetas), k))
        return out

    def principal(self, xs, zeta_hats):
        k = self.fiber_dim
        out = _promote(self.parts[0].principal(xs, zeta_hats), k)
        for p in self.parts[1:]:
            out = np.einsum("pzij,pzjk->pzik", out, _promote(p.principal(xs, zeta_hats), k))
        return out


@_register(_NODE_KINDS, "sym_reg_inverse")
class SymRegInverse(InteriorSymbol):
    """a* (a a* + eps^2 <zeta>^{2m})^{-1}: order -m regularized inverse."""

    def __init__(self, base: InteriorSymbol, eps: float = 1e-8):
        self.base = base
        self.order = -base.order
        self.fiber_dim = base.fiber_dim
        self.eps = float(eps)

    def evaluate(self, xs, zetas):
        a = _promote(self.base.evaluate(xs, zetas), self.fiber_dim)
        m = self.base.order
        scale = (1.0 + np.abs(np.asarray(zetas)) ** 2) ** (m / 2.0)
        reg = (self.eps * scale) ** 2
        aa = np.einsum("pzij,pzkj->pzik", a, np.conj(a))
        eye = np.eye(self.fiber_dim)
        return np.einsum("pzji,pzjk->pzik", np.conj(a),
                         np.linalg.inv(aa + reg[None, :, None, None] * eye))

    def principal(self, xs, zeta_hats):
        p = _promote(self.base.principal(xs, zeta_hats), self.fiber_dim)
        return np.linalg.inv(p)

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict(), "eps": self.eps}

    @classmethod
    def from_dict(cls, d):
        return cls(symbol_from_dict(d["base"]), d["eps"])


@_register(_NODE_KINDS, "sym_bounded")
class SymBounded(InteriorSymbol):
    """Pointwise bounded transform f (1 + f* f)^{-1/2}; order 0."""

    def __init__(self, base: InteriorSymbol):
        self.base = base
        self.order = 0.0
        self.fiber_dim = base.fiber_dim

    def evaluate(self, xs, zetas):
        f = _promote(self.base.evaluate(xs, zetas), self.fiber_dim)
        g = np.einsum("pzji,pzjk->pzik", np.conj(f), f)
        g = g + np.eye(self.fiber_dim)
        w, u = np.linalg.eigh(g)
        inv_sqrt = np.einsum("pzij,pzj,pzkj->pzik", u, w ** -0.5, np.conj(u))
        return np.einsum("pzij,pzjk->pzik", f, inv_sqrt)

    def principal(self, xs, zeta_hats):
        if self.base.order <= 0:
            raise ValueError("bounded principal defined for positive-order base")
        f = _promote(self.base.principal(xs, zeta_hats), self.fiber_dim)
        g = np.einsum("pzji,pzjk->pzik", np.conj(f), f)
        w, u = np.linalg.eigh(g)
        inv_sqrt = np.einsum("pzij,pzj,pzkj->pzik", u, np.clip(w, 1e-30, None) ** -0.5, np.conj(u))
        return np.einsum("pzij,pzjk->pzik", f, inv_sqrt)

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(symbol_from_dict(d["base"]))


@_register(_NODE_KINDS, "sym_adjoint")
class SymAdjoint(InteriorSymbol):
    def __init__(self, base: InteriorSymbol):
        self.base = base
        self.order = base.order
        self.fiber_dim = base.fiber_dim

    def evaluate(self, xs, zetas):
        f = self.base.evaluate(xs, zetas)
        return np.conj(np.swapaxes(f, -1, -2))

    def principal(self, xs, zeta_hats):
        f = self.base.principal(xs, zeta_hats)
        return np.conj(np.swapaxes(f, -1, -2))

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(symbol_from_dict(d["base"]))


@_register(_NODE_KINDS, "sym_sampled")
class SymSampled(InteriorSymbol):
    """Symbol known through samples (e.g. read back from a kernel table).

    ``xs_ref`` lists the sample points, ``zetas_ref`` the covariable samples
    and ``values`` the (P, Z, k, k) table.  Evaluation requires exact matches
    of the requested points (the read-back comparisons always evaluate on the
    recorded sample sets); principal data is taken from the outermost
    covariable ring.
    """

    def __init__(self, xs_ref, zetas_ref, values, order: float):
        self.xs_ref = np.asarray(xs_ref, dtype=float)
        self.zetas_ref = np.asarray(zetas_ref, dtype=complex)
        self.values = np.asarray(values, dtype=complex)
        self.order = float(order)
        self.fiber_dim = self.values.shape[-1]

    def _match(self, ref, req, label):
        idx = []
        for v in req:
            d = np.abs(ref - v)
            j = int(np.argmin(d))
            if d[j] > 1e-9 * max(1.0, np.abs(v)):
                raise KeyError(f"sampled symbol has no {label} sample near {v}")
            idx.append(j)
        return np.array(idx)

    def evaluate(self, xs, zetas):
        xi = self._match(self.xs_ref[:, 0] + 1j * self.xs_ref[:, 1],
                         np.asarray(xs)[:, 0] + 1j * np.asarray(xs)[:, 1], "point")
        zi = self._match(self.zetas_ref, np.asarray(zetas), "covariable")
        return self.values[np.ix_(xi, zi)]

    def principal(self, xs, zeta_hats):
        r = np.abs(self.zetas_ref)
        ring = r >= 0.75 * r.max()
        out = np.empty((len(xs), len(zeta_hats), self.fiber_dim, self.fiber_dim), dtype=complex)
        xi = self._match(self.xs_ref[:, 0] + 1j * self.xs_ref[:, 1],
                         np.asarray(xs)[:, 0] + 1j * np.asarray(xs)[:, 1], "point")
        ring_z = self.zetas_ref[ring]
        ring_vals = self.values[:, ring]
        for zj, zh in enumerate(np.asarray(zeta_hats)):
            ang = np.angle(ring_z) - np.angle(zh)
            best = int(np.argmin(np.abs((ang + np.pi) % (2 * np.pi) - np.pi)))
            scale = np.abs(ring_z[best]) ** self.order
            out[:, zj] = ring_vals[xi, best] / scale
        return out

    def to_dict(self):
        return {"kind": self.tag, "xs_ref": self.xs_ref.tolist(),
                "zetas_ref": [_c2l(z) for z in self.zetas_ref],
                "values": np.stack([self.values.real, self.values.imag]).tolist(),
                "order": self.order}

    @classmethod
    def from_dict(cls, d):
        vals = np.array(d["values"])
        return cls(np.array(d["xs_ref"]), np.array([complex(a, b) for a, b in d["zetas_ref"]]),
                   vals[0] + 1j * vals[1], d["order"])
