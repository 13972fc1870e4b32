"""Boundary families: h-indexed families of translation-invariant operators
on R x L, stored as functions of the dual (multiplier) variable lambda.

A family evaluates to a link-operator matrix at every (h, lambda) with h in
[0, 1) and lambda real (complex lambda is allowed for holomorphic kinds).
Families form an algebra through lazy nodes; every node serializes to a
tagged dict so symbols round-trip through JSON.

Orientation convention (fixed once, validated by the discrete Mellin oracle
in the tests): the vertical vector field h d/dh has family i*lambda, so the
family of h d/dh + S is i*lambda + S.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .link import LinkSpace, TailSymbol

_FAMILY_KINDS: dict[str, type] = {}


def register_family(tag: str):
    def deco(cls):
        _FAMILY_KINDS[tag] = cls
        cls.tag = tag
        return cls
    return deco


def family_from_dict(data: dict) -> "BoundaryFamily":
    cls = _FAMILY_KINDS[data["kind"]]
    return cls.from_dict(data)


def _mat_to_list(m: np.ndarray):
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _mat_from_list(lst) -> np.ndarray:
    return np.array([[complex(a, b) for a, b in row] for row in lst])


def _tail_to_dict(tail: TailSymbol | None):
    if tail is None:
        return None
    return {
        "angles": tail.angles.tolist(),
        "thetas": tail.thetas.tolist(),
        "values": [[_mat_to_list(tail.values[a, t]) for t in range(tail.values.shape[1])]
                   for a in range(tail.values.shape[0])],
        "degree": tail.degree,
    }


def _tail_from_dict(data):
    if data is None:
        return None
    vals = np.array([[_mat_from_list(m) for m in row] for row in data["values"]])
    return TailSymbol(np.array(data["angles"]), np.array(data["thetas"]), vals,
                      data["degree"])


class BoundaryFamily:
    """Base: subclasses provide eval(h, lam) -> (dim, dim) matrix."""

    space: LinkSpace
    order: float

    def eval(self, h: float, lam: complex) -> np.ndarray:
        raise NotImplementedError

    def eval_grid(self, h: float, lams: np.ndarray) -> np.ndarray:
        return np.stack([self.eval(h, l) for l in lams])

    def tail_at(self, h: float) -> TailSymbol | None:
        return None

    def is_holomorphic(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


@register_family("poly")
class PolyLambdaFamily(BoundaryFamily):
    """sum_j C_j(h) lambda^j with matrix coefficients interpolated in h.

    ``coeffs`` has shape (H, deg+1, dim, dim) over ``h_grid``; an H of 1 means
    h-constant coefficients.  Polynomial families extend holomorphically to
    complex lambda, which the contour-shift machinery relies on.
    """

    def __init__(self, space: LinkSpace, h_grid: np.ndarray, coeffs: np.ndarray,
                 order: float, tail: TailSymbol | None = None):
        self.space = space
        self.h_grid = np.asarray(h_grid, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=complex)
        self.order = float(order)
        self._tail = tail
        if self.coeffs.shape[2:] != (space.dim, space.dim):
            raise ValueError("coefficient blocks do not match the link space")

    def _coeff_at(self, h: float) -> np.ndarray:
        if self.coeffs.shape[0] == 1:
            return self.coeffs[0]
        h = float(np.clip(h, self.h_grid[0], self.h_grid[-1]))
        j = int(np.searchsorted(self.h_grid, h))
        j = min(max(j, 1), len(self.h_grid) - 1)
        t = (h - self.h_grid[j - 1]) / (self.h_grid[j] - self.h_grid[j - 1])
        return (1 - t) * self.coeffs[j - 1] + t * self.coeffs[j]

    def eval(self, h, lam):
        c = self._coeff_at(h)
        out = np.zeros_like(c[0])
        p = 1.0 + 0.0j
        for j in range(c.shape[0]):
            out = out + c[j] * p
            p = p * lam
        return out

    def tail_at(self, h):
        return self._tail

    def is_holomorphic(self):
        return True

    def to_dict(self):
        return {
            "kind": self.tag,
            "space": [self.space.fourier_cutoff, self.space.fiber_dim, self.space.metric_scale],
            "h_grid": self.h_grid.tolist(),
            "coeffs": [[_mat_to_list(self.coeffs[i, j]) for j in range(self.coeffs.shape[1])]
                       for i in range(self.coeffs.shape[0])],
            "order": self.order,
            "tail": _tail_to_dict(self._tail),
        }

    @classmethod
    def from_dict(cls, data):
        space = LinkSpace(*data["space"][:2], data["space"][2])
        coeffs = np.array([[_mat_from_list(m) for m in row] for row in data["coeffs"]])
        return cls(space, np.array(data["h_grid"]), coeffs, data["order"],
                   _tail_from_dict(data["tail"]))


class _Composite(BoundaryFamily):
    def __init__(self, parts: Sequence[BoundaryFamily]):
        self.parts = list(parts)
        self.space = self.parts[0].space
        for p in self.parts:
            if p.space.dim != self.space.dim:
                raise ValueError("link space mismatch in family algebra")

    def is_holomorphic(self):
        return all(p.is_holomorphic() for p in self.parts)

    def to_dict(self):
        return {"kind": self.tag, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, data):
        return cls([family_from_dict(p) for p in data["parts"]])


@register_family("sum")
class FamilySum(_Composite):
    def __init__(self, parts):
        super().__init__(parts)
        self.order = max(p.order for p in self.parts)

    def eval(self, h, lam):
        out = self.parts[0].eval(h, lam)
        for p in self.parts[1:]:
            out = out + p.eval(h, lam)
        return out

    def tail_at(self, h):
        tops = [p for p in self.parts if p.order == self.order]
        tails = [p.tail_at(h) for p in tops]
        if any(t is None for t in tails):
            return None
        vals = sum(t.values for t in tails)
        t0 = tails[0]
        return TailSymbol(t0.angles, t0.thetas, vals, self.order)


@register_family("product")
class FamilyProduct(_Composite):
    def __init__(self, parts):
        super().__init__(parts)
        self.order = sum(p.order for p in self.parts)

    def eval(self, h, lam):
        out = self.parts[0].eval(h, lam)
        for p in self.parts[1:]:
            out = out @ p.eval(h, lam)
        return out

    def tail_at(self, h):
        tails = [p.tail_at(h) for p in self.parts]
        if any(t is None for t in tails):
            return None
        vals = tails[0].values
        for t in tails[1:]:
            vals = np.einsum("atij,atjk->atik", vals, t.values)
        return TailSymbol(tails[0].angles, tails[0].thetas, vals, self.order)


@register_family("scaled")
class FamilyScale(BoundaryFamily):
    """Multiplication by a constant matrix on the left and/or right."""

    def __init__(self, base: BoundaryFamily, left: np.ndarray | None = None,
                 right: np.ndarray | None = None):
        self.base = base
        self.space = base.space
        self.order = base.order
        self.left = None if left is None else np.asarray(left, dtype=complex)
        self.right = None if right is None else np.asarray(right, dtype=complex)

    def eval(self, h, lam):
        m = self.base.eval(h, lam)
        if self.left is not None:
            m = self.left @ m
        if self.right is not None:
            m = m @ self.right
        return m

    def tail_at(self, h):
        t = self.base.tail_at(h)
        if t is None:
            return None
        k = self.space.fiber_dim
        vals = t.values
        # constant conjugations act blockwise on fibers only when the factors
        # are fiber-scalar; otherwise the pointwise tail is not defined
        def fiber_block(mat):
            if mat is None:
                return None
            blocks = mat.reshape(self.space.n_modes, k, self.space.n_modes, k)
            diag = blocks[np.arange(self.space.n_modes), :, np.arange(self.space.n_modes), :]
            if not np.allclose(diag, diag[0][None], atol=1e-12):
                return None
            off = mat - np.kron(np.eye(self.space.n_modes), diag[0])
            if np.abs(off).max() > 1e-12:
                return None
            return diag[0]
        lb = fiber_block(self.left)
        rb = fiber_block(self.right)
        if (self.left is not None and lb is None) or (self.right is not None and rb is None):
            return None
        if lb is not None:
            vals = np.einsum("ij,atjk->atik", lb, vals)
        if rb is not None:
            vals = np.einsum("atij,jk->atik", vals, rb)
        return TailSymbol(t.angles, t.thetas, vals, t.degree)

    def is_holomorphic(self):
        return self.base.is_holomorphic()

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict(),
                "left": None if self.left is None else _mat_to_list(self.left),
                "right": None if self.right is None else _mat_to_list(self.right)}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["base"]),
                   None if data["left"] is None else _mat_from_list(data["left"]),
                   None if data["right"] is None else _mat_from_list(data["right"]))


@register_family("reg_inverse")
class FamilyRegInverse(BoundaryFamily):
    """Regularized pointwise inverse a* (a a* + eps^2)^{-1}.

    Exact inverse where the family is invertible with margin >> eps; smooth
    everywhere.  Used by the parametrix away from h = 0.
    """

    def __init__(self, base: BoundaryFamily, eps: float = 1e-8):
        self.base = base
        self.space = base.space
        self.order = -base.order
        self.eps = float(eps)

    def eval(self, h, lam):
        a = self.base.eval(h, lam)
        aa = a @ a.conj().T
        return a.conj().T @ np.linalg.inv(aa + self.eps ** 2 * np.eye(a.shape[0]))

    def tail_at(self, h):
        t = self.base.tail_at(h)
        if t is None:
            return None
        vals = np.linalg.inv(t.values)
        return TailSymbol(t.angles, t.thetas, vals, -t.degree)

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict(), "eps": self.eps}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["base"]), data["eps"])


@register_family("exact_inverse")
class FamilyInverse(BoundaryFamily):
    """Plain pointwise inverse; caller guarantees invertibility."""

    def __init__(self, base: BoundaryFamily):
        self.base = base
        self.space = base.space
        self.order = -base.order

    def eval(self, h, lam):
        return np.linalg.inv(self.base.eval(h, lam))

    def tail_at(self, h):
        t = self.base.tail_at(h)
        if t is None:
            return None
        return TailSymbol(t.angles, t.thetas, np.linalg.inv(t.values), -t.degree)

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["base"]))


@register_family("blend")
class FamilyBlend(BoundaryFamily):
    """omega(h) * first + (1 - omega(h)) * second, omega a smooth cutoff
    equal to 1 below ``lo`` and 0 above ``hi``."""

    def __init__(self, first: BoundaryFamily, second: BoundaryFamily,
                 lo: float, hi: float):
        self.first = first
        self.second = second
        self.space = first.space
        self.order = max(first.order, second.order)
        self.lo = float(lo)
        self.hi = float(hi)

    def _omega(self, h):
        from .gridtools import ramp
        return 1.0 - float(ramp(h, self.lo, self.hi))

    def eval(self, h, lam):
        w = self._omega(h)
        if w >= 1.0:
            return self.first.eval(h, lam)
        if w <= 0.0:
            return self.second.eval(h, lam)
        return w * self.first.eval(h, lam) + (1 - w) * self.second.eval(h, lam)

    def tail_at(self, h):
        w = self._omega(h)
        ta, tb = self.first.tail_at(h), self.second.tail_at(h)
        if ta is None or tb is None:
            return None
        return TailSymbol(ta.angles, ta.thetas, w * ta.values + (1 - w) * tb.values,
                          max(ta.degree, tb.degree))

    def to_dict(self):
        return {"kind": self.tag, "first": self.first.to_dict(),
                "second": self.second.to_dict(), "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["first"]), family_from_dict(data["second"]),
                   data["lo"], data["hi"])


@register_family("bounded")
class FamilyBounded(BoundaryFamily):
    """Pointwise bounded transform m (1 + m* m)^{-1/2}; order zero."""

    def __init__(self, base: BoundaryFamily):
        self.base = base
        self.space = base.space
        self.order = 0.0

    def eval(self, h, lam):
        m = self.base.eval(h, lam)
        g = np.eye(m.shape[0]) + m.conj().T @ m
        w, u = np.linalg.eigh(g)
        inv_sqrt = (u * (w ** -0.5)) @ u.conj().T
        return m @ inv_sqrt

    def tail_at(self, h):
        t = self.base.tail_at(h)
        if t is None or t.degree <= 0:
            return None
        # positive order: bounded transform has the polar part as principal
        vals = np.empty_like(t.values)
        for a in range(vals.shape[0]):
            for j in range(vals.shape[1]):
                m = t.values[a, j]
                g = m.conj().T @ m
                w, u = np.linalg.eigh(g)
                vals[a, j] = m @ (u * np.clip(w, 1e-30, None) ** -0.5) @ u.conj().T
        return TailSymbol(t.angles, t.thetas, vals, 0.0)

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["base"]))


@register_family("adjoint")
class FamilyAdjoint(BoundaryFamily):
    def __init__(self, base: BoundaryFamily):
        self.base = base
        self.space = base.space
        self.order = base.order

    def eval(self, h, lam):
        if abs(complex(lam).imag) > 0:
            raise ValueError("adjoint family is defined for real lambda")
        return self.base.eval(h, lam).conj().T

    def tail_at(self, h):
        t = self.base.tail_at(h)
        if t is None:
            return None
        vals = np.conj(np.swapaxes(t.values, -1, -2))
        return TailSymbol(t.angles, t.thetas, vals, t.degree)

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["base"]))


@register_family("lambda_shift")
class FamilyShift(BoundaryFamily):
    """Conjugated family a_{u(h)}(lambda) = a(h, lambda + i u(h)).

    ``u_profile`` samples u on [0, 1]; the base family must be holomorphic in
    lambda on the strip covering the range of u.
    """

    def __init__(self, base: BoundaryFamily, h_samples: np.ndarray, u_samples: np.ndarray):
        if not base.is_holomorphic():
            raise ValueError("lambda shift requires a holomorphic family")
        self.base = base
        self.space = base.space
        self.order = base.order
        self.h_samples = np.asarray(h_samples, dtype=float)
        self.u_samples = np.asarray(u_samples, dtype=float)

    def u_of_h(self, h):
        return float(np.interp(h, self.h_samples, self.u_samples))

    def eval(self, h, lam):
        return self.base.eval(h, lam + 1j * self.u_of_h(h))

    def tail_at(self, h):
        return self.base.tail_at(h)

    def is_holomorphic(self):
        return True

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict(),
                "h_samples": self.h_samples.tolist(),
                "u_samples": self.u_samples.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["base"]), np.array(data["h_samples"]),
                   np.array(data["u_samples"]))


@register_family("h_profile_scale")
class FamilyHProfileScale(BoundaryFamily):
    """Scalar profile rho(h) times a family, rho given by tagged closed form.

    Profiles: ("power", p): rho = h^p; ("weight_power", l, h0): rho =
    phi(h)^l for the standard weight phi (equal to h near 0, 1 for h >= 1).
    """

    def __init__(self, base: BoundaryFamily, profile: tuple):
        self.base = base
        self.space = base.space
        self.profile = tuple(profile)
        self.order = base.order

    def rho(self, h):
        kind = self.profile[0]
        if kind == "power":
            return float(h) ** self.profile[1]
        if kind == "weight_power":
            from .models import weight_phi
            return float(weight_phi(h, self.profile[2])) ** self.profile[1]
        raise ValueError(f"unknown profile {self.profile}")

    def eval(self, h, lam):
        return self.rho(h) * self.base.eval(h, lam)

    def tail_at(self, h):
        t = self.base.tail_at(h)
        if t is None:
            return None
        return TailSymbol(t.angles, t.thetas, self.rho(h) * t.values, t.degree)

    def is_holomorphic(self):
        return self.base.is_holomorphic()

    def to_dict(self):
        return {"kind": self.tag, "base": self.base.to_dict(), "profile": list(self.profile)}

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["base"]), tuple(data["profile"]))


@register_family("callable")
class CallableFamily(BoundaryFamily):
    """Escape hatch for closed-form families built in code (not serializable
    beyond its tag payload); builders register a reconstruction hook."""

    _builders: dict[str, Callable] = {}

    def __init__(self, space: LinkSpace, fn: Callable, order: float,
                 payload: dict | None = None, tail_fn: Callable | None = None,
                 holomorphic: bool = False):
        self.space = space
        self.fn = fn
        self.order = float(order)
        self.payload = payload
        self.tail_fn = tail_fn
        self._holo = holomorphic

    def eval(self, h, lam):
        return self.fn(h, lam)

    def tail_at(self, h):
        return None if self.tail_fn is None else self.tail_fn(h)

    def is_holomorphic(self):
        return self._holo

    @classmethod
    def register_builder(cls, name: str, builder: Callable):
        cls._builders[name] = builder

    def to_dict(self):
        if not self.payload or "builder" not in self.payload:
            raise ValueError("this family carries no serialization payload")
        return {"kind": self.tag, "payload": self.payload}

    @classmethod
    def from_dict(cls, data):
        payload = data["payload"]
        return cls._builders[payload["builder"]](payload)
