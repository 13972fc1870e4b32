"""The algebra of noncommutative symbols on the cone.

A symbol has two faces: an h-indexed boundary family of translation-invariant
operators on R x L (stored post-Fourier, as a function of the multiplier
variable lambda) and an interior symbol over the cap chart.  The collar
content for h < 1 is realized from the boundary family itself; the cap tree
describes h >= 1.  The leading part is the pair (interior principal symbol,
family at h = 0); its invertibility is ellipticity.

Smoothing parts are explicit kernel tables in the fiber direction with
recorded decay exponents; they form the ideal that the parametrix residual
lands in, with the h = 0 slot exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import families as fam
from . import interior as itr
from . import gridtools as gt
from .link import LinkSpace, ParamOperator, TailSymbol, param_elliptic, ParamEllipticityReport


class GridMismatchError(ValueError):
    pass


class EllipticityError(ValueError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SmoothingPart:
    """Collar smoothing kernel: lag table k(h; d) of link matrices with
    recorded decay exponents in the fiber direction."""

    h_grid: np.ndarray
    lags: np.ndarray
    table: np.ndarray  # (H, D, dim, dim)
    decay_exponents: tuple = (1.0,)

    def norm(self) -> float:
        return float(np.abs(self.table).max()) if self.table.size else 0.0

    def multiplier(self, spacing: float, freqs: np.ndarray) -> np.ndarray:
        out = np.empty((self.table.shape[0], len(freqs)) + self.table.shape[2:], dtype=complex)
        for i in range(self.table.shape[0]):
            out[i] = gt.multiplier_from_kernel(self.table[i], self.lags, spacing, freqs)
        return out

    def to_dict(self):
        return {"h_grid": self.h_grid.tolist(), "lags": self.lags.tolist(),
                "table": np.stack([self.table.real, self.table.imag]).tolist(),
                "decay_exponents": list(self.decay_exponents)}

    @classmethod
    def from_dict(cls, d):
        t = np.array(d["table"])
        return cls(np.array(d["h_grid"]), np.array(d["lags"]), t[0] + 1j * t[1],
                   tuple(d["decay_exponents"]))


@dataclass
class NCSymbol:
    """Noncommutative symbol: boundary family plus cap symbol tree.

    ``h_grid`` starts at exactly 0.0 (the indicial slot); ``cap_points`` is
    the verification sample set on the cap chart.
    """

    space: LinkSpace
    h_grid: np.ndarray
    lambda_grid: np.ndarray
    family: fam.BoundaryFamily
    cap: itr.InteriorSymbol
    cap_points: np.ndarray
    order: float
    smoothing: SmoothingPart | None = None
    name: str = ""

    def __post_init__(self):
        self.h_grid = np.asarray(self.h_grid, dtype=float)
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        if self.h_grid[0] != 0.0:
            raise ValueError("h_grid must carry the h = 0 slot first")

    # -- views ------------------------------------------------------------
    def boundary_matrix(self, h: float, lam: complex) -> np.ndarray:
        return self.family.eval(h, lam)

    def indicial(self) -> ParamOperator:
        f = self.family
        return ParamOperator(self.space, self.lambda_grid,
                             lambda lam: f.eval(0.0, lam), order=self.order,
                             tail_symbol=f.tail_at(0.0),
                             generator=f if f.is_holomorphic() else None)

    def grids_match(self, other: "NCSymbol") -> bool:
        return (self.space == other.space
                and len(self.h_grid) == len(other.h_grid)
                and np.allclose(self.h_grid, other.h_grid)
                and len(self.lambda_grid) == len(other.lambda_grid)
                and np.allclose(self.lambda_grid, other.lambda_grid))

    def boundary_norm(self) -> float:
        worst = 0.0
        for h in self.h_grid:
            for lam in self.lambda_grid:
                scale = (1.0 + lam * lam) ** (self.order / 2.0)
                worst = max(worst, np.linalg.norm(self.family.eval(h, lam), 2) / scale)
        return float(worst)

    def adjoint(self) -> "NCSymbol":
        return NCSymbol(self.space, self.h_grid, self.lambda_grid,
                        fam.FamilyAdjoint(self.family), itr.SymAdjoint(self.cap),
                        self.cap_points, self.order, self.smoothing,
                        name=self.name + "*")

    def smooth_in_h_defect(self) -> float:
        """Max finite-difference derivative norm of the family over h (should
        be bounded; a testable smoothness invariant)."""
        hs = self.h_grid
        worst = 0.0
        lam = float(self.lambda_grid[len(self.lambda_grid) // 2])
        for i in range(1, len(hs)):
            d = np.linalg.norm(self.family.eval(hs[i], lam) - self.family.eval(hs[i - 1], lam), 2)
            worst = max(worst, d / max(hs[i] - hs[i - 1], 1e-12))
        return float(worst)

    def to_dict(self) -> dict:
        return {
            "space": [self.space.fourier_cutoff, self.space.fiber_dim, self.space.metric_scale],
            "h_grid": self.h_grid.tolist(),
            "lambda_grid": self.lambda_grid.tolist(),
            "family": self.family.to_dict(),
            "cap": self.cap.to_dict(),
            "cap_points": self.cap_points.tolist(),
            "order": self.order,
            "smoothing": None if self.smoothing is None else self.smoothing.to_dict(),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d) -> "NCSymbol":
        return cls(LinkSpace(d["space"][0], d["space"][1], d["space"][2]),
                   np.array(d["h_grid"]), np.array(d["lambda_grid"]),
                   fam.family_from_dict(d["family"]), itr.symbol_from_dict(d["cap"]),
                   np.array(d["cap_points"]), d["order"],
                   None if d["smoothing"] is None else SmoothingPart.from_dict(d["smoothing"]),
                   d["name"])


DIRECTION_ANGLES = np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False)


def _zeta_dirs():
    return np.exp(1j * DIRECTION_ANGLES)


@dataclass
class PrincipalData:
    """sigma(a) sampled on the cosphere: collar part over (h, psi, theta) from
    the family tails, cap part over (points, directions)."""

    collar_h: np.ndarray
    collar_values: np.ndarray | None  # (H, A, T, k, k)
    cap_values: np.ndarray            # (P, Z, k, k)

    def min_singular_value(self) -> float:
        best = np.inf
        if self.collar_values is not None:
            sv = np.linalg.svd(self.collar_values, compute_uv=False)
            best = min(best, float(sv[..., -1].min()))
        sv = np.linalg.svd(self.cap_values, compute_uv=False)
        return min(best, float(sv[..., -1].min()))


@dataclass
class LeadingPart:
    principal: PrincipalData
    indicial: ParamOperator


def leading_part(a: NCSymbol) -> LeadingPart:
    """(sigma(a), rho(a)): interior principal samples and the h -> 0 family."""
    tails = []
    ok = True
    for h in a.h_grid:
        t = a.family.tail_at(h)
        if t is None:
            ok = False
            break
        tails.append(t.values)
    collar_vals = np.stack(tails) if ok else None
    cap_vals = a.cap.principal(a.cap_points, _zeta_dirs())
    return LeadingPart(PrincipalData(a.h_grid, collar_vals, cap_vals), a.indicial())


@dataclass
class EllipticityReport:
    elliptic: bool
    relatively_elliptic: bool
    principal_min_sv: float
    indicial_failing_lambda: list
    parametrix_residual_at_h0: float
    indicial_report: ParamEllipticityReport | None = None

    def as_dict(self):
        return {
            "elliptic": self.elliptic,
            "relatively_elliptic": self.relatively_elliptic,
            "principal_min_sv": self.principal_min_sv,
            "indicial_failing_lambda": [float(x) for x in self.indicial_failing_lambda],
            "parametrix_residual_at_h0": self.parametrix_residual_at_h0,
            "indicial": None if self.indicial_report is None else self.indicial_report.as_dict(),
        }


def is_elliptic(a: NCSymbol, eps: float = 1e-8) -> EllipticityReport:
    """Full and relative ellipticity from the leading part.

    elliptic  <=> principal invertible and the indicial family passes the
    parameter-ellipticity scan; relatively elliptic <=> principal alone.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lead = leading_part(a)
    pmin = lead.principal.min_singular_value()
    rel = bool(pmin > eps)
    rep = param_elliptic(lead.indicial, eps)
    full = rel and rep.invertible_for_all_sampled_lambda
    residual = 0.0
    if full:
        lam0 = float(a.lambda_grid[len(a.lambda_grid) // 2])
        m = a.family.eval(0.0, lam0)
        residual = float(np.linalg.norm(m @ np.linalg.inv(m) - np.eye(m.shape[0]), 2))
    return EllipticityReport(full, rel, float(pmin), rep.failing_lambda, residual, rep)


def compose(a: NCSymbol, b: NCSymbol) -> NCSymbol:
    """Symbol product: boundary families compose pointwise in (h, lambda),
    interior symbols by the pointwise (leading-term) product; orders add."""
    if not a.grids_match(b):
        raise GridMismatchError("symbols live on different grids or spaces")
    smoothing = _compose_smoothing(a, b)
    return NCSymbol(a.space, a.h_grid, a.lambda_grid,
                    fam.FamilyProduct([a.family, b.family]),
                    itr.SymProduct([a.cap, b.cap]), a.cap_points,
                    a.order + b.order, smoothing,
                    name=f"({a.name})({b.name})" if a.name or b.name else "")


def _compose_smoothing(a: NCSymbol, b: NCSymbol) -> SmoothingPart | None:
    parts = []
    if a.smoothing is not None:
        parts.append((a.smoothing, b.family, "left"))
    if b.smoothing is not None:
        parts.append((b.smoothing, a.family, "right"))
    if not parts:
        return None
    ref = a.smoothing or b.smoothing
    spacing = _lag_spacing(ref)
    freqs = np.asarray(sorted(a.lambda_grid))
    total = None
    for sm, other, side in parts:
        mult = sm.multiplier(spacing, freqs)
        out = np.empty_like(mult)
        for i, h in enumerate(sm.h_grid):
            for j, lam in enumerate(freqs):
                o = other.eval(h, lam)
                out[i, j] = mult[i, j] @ o if side == "left" else o @ mult[i, j]
        kern = np.empty_like(sm.table)
        for i in range(out.shape[0]):
            kern[i] = gt.kernel_from_multiplier(out[i], freqs, spacing, sm.lags)
        total = kern if total is None else total + kern
    decay = tuple(sorted(set((a.smoothing.decay_exponents if a.smoothing else ())
                             + (b.smoothing.decay_exponents if b.smoothing else ()))))
    return SmoothingPart(ref.h_grid, ref.lags, total, decay or (1.0,))


def _lag_spacing(sm: SmoothingPart) -> float:
    if len(sm.lags) > 1:
        return 1.0
    return 1.0


def parametrix(a: NCSymbol, eps: float = 1e-8, reg: float = 1e-7) -> NCSymbol:
    """Inverse modulo lower order with exactly vanishing residual at h = 0.

    Near the boundary the family is inverted exactly under a cutoff omega
    equal to 1 at h = 0; away from it a regularized pointwise inverse serves
    as the relative parametrix.  Refuses non-elliptic input with the report
    attached.
    """
    rep = is_elliptic(a, eps)
    if not rep.elliptic:
        raise EllipticityError("parametrix requires an elliptic symbol", rep)
    alpha = _invertibility_prefix(a, eps)
    lo, hi = 0.55 * alpha, 0.9 * alpha
    family = fam.FamilyBlend(fam.FamilyInverse(a.family),
                             fam.FamilyRegInverse(a.family, reg), lo, hi)
    cap = itr.SymRegInverse(a.cap, reg)
    return NCSymbol(a.space, a.h_grid, a.lambda_grid, family, cap, a.cap_points,
                    -a.order, None, name=f"parametrix({a.name})")


def _invertibility_prefix(a: NCSymbol, eps: float) -> float:
    """Largest h such that the family stays invertible with margin below it."""
    alpha = a.h_grid[1] if len(a.h_grid) > 1 else 0.5
    for h in a.h_grid:
        svs = []
        for lam in a.lambda_grid:
            m = a.family.eval(h, lam)
            scale = (1.0 + lam * lam) ** (a.order / 2.0)
            svs.append(np.linalg.svd(m, compute_uv=False)[-1] / scale)
        if min(svs) <= 10 * eps:
            break
        alpha = h
    return float(min(max(alpha, 1e-3), 0.9))


def residual_family_norm(a: NCSymbol, b: NCSymbol, at_h: float = 0.0) -> float:
    """Matrix norm of compose(a, b) - 1 on the boundary family at a given h."""
    worst = 0.0
    eye = np.eye(a.space.dim)
    for lam in a.lambda_grid:
        m = a.family.eval(at_h, lam) @ b.family.eval(at_h, lam) - eye
        worst = max(worst, float(np.linalg.norm(m, 2)))
    return worst


def residual_interior_norm(a: NCSymbol, b: NCSymbol, radius: float) -> float:
    """sup |(a b - 1)(x, zeta)| over cap samples at |zeta| = radius."""
    zetas = radius * _zeta_dirs()
    va = a.cap.evaluate(a.cap_points, zetas)
    vb = b.cap.evaluate(a.cap_points, zetas)
    k = max(va.shape[-1], vb.shape[-1])
    va = itr._promote(va, k)
    vb = itr._promote(vb, k)
    prod = np.einsum("pzij,pzjk->pzik", va, vb) - np.eye(k)
    return float(np.abs(prod).max())


def bounded_transform(a: NCSymbol, eps: float = 1e-8) -> NCSymbol:
    """q(a) = a (1 + a* a)^{-1/2}: order-zero symbol with all sampled norms
    at most 1; elliptic exactly when a is."""
    if a.order <= 0:
        raise ValueError("bounded transform expects a positive-order symbol")
    return NCSymbol(a.space, a.h_grid, a.lambda_grid, fam.FamilyBounded(a.family),
                    itr.SymBounded(a.cap), a.cap_points, 0.0, None,
                    name=f"q({a.name})")


def conjugate_constant(a: NCSymbol, g: np.ndarray) -> NCSymbol:
    """g a g^{-1} for a constant invertible fiber matrix g."""
    g = np.asarray(g, dtype=complex)
    gi = np.linalg.inv(g)
    big = np.kron(np.eye(a.space.n_modes), g)
    bigi = np.kron(np.eye(a.space.n_modes), gi)
    family = fam.FamilyScale(a.family, left=big, right=bigi)
    cap = itr.SymProduct([itr.const_symbol(g), a.cap, itr.const_symbol(gi)])
    return NCSymbol(a.space, a.h_grid, a.lambda_grid, family, cap, a.cap_points,
                    a.order, a.smoothing, name=f"conj({a.name})")


# ---------------------------------------------------------------------------
# Fuchs type symbols
# ---------------------------------------------------------------------------

@dataclass
class FuchsSymbol:
    """Family allowed to blow up like phi(h)^{-l} at h = 0 together with the
    exponent l and the weight function that tames it."""

    base_family: fam.BoundaryFamily
    cap: itr.InteriorSymbol
    cap_points: np.ndarray
    fuchs_exponent: float
    weight_h0: float = 0.25
    space: LinkSpace | None = None
    h_grid: np.ndarray | None = None
    lambda_grid: np.ndarray | None = None
    order: float = 1.0


def weight_shape_report(h0: float, samples: np.ndarray | None = None) -> dict:
    """Check the weight function shape: smooth positive increasing, equal to
    h near 0 and to 1 from h = 1 on."""
    from .models import weight_phi
    hs = samples if samples is not None else np.linspace(1e-4, 1.5, 400)
    vals = weight_phi(hs, h0)
    near0 = hs <= h0 / 2
    report = {
        "positive": bool((vals > 0).all()),
        "increasing": bool((np.diff(vals) >= -1e-12).all()),
        "equals_h_near_0": float(np.abs(vals[near0] - hs[near0]).max()) if near0.any() else 0.0,
        "equals_1_from_1": float(np.abs(vals[hs >= 1.0] - 1.0).max()),
    }
    report["valid"] = (report["positive"] and report["increasing"]
                       and report["equals_h_near_0"] < 1e-12
                       and report["equals_1_from_1"] < 1e-12)
    return report


def fuchs_check(p: FuchsSymbol, eps: float = 1e-8) -> EllipticityReport:
    """Ellipticity of the tamed symbol phi^l p."""
    if p.fuchs_exponent <= 0:
        raise ValueError("fuchs_exponent must be positive")
    shape = weight_shape_report(p.weight_h0)
    if not shape["valid"]:
        raise ValueError(f"weight function violates its shape constraints: {shape}")
    scaled = fam.FamilyHProfileScale(p.base_family,
                                     ("weight_power", p.fuchs_exponent, p.weight_h0))
    sym = NCSymbol(p.space, p.h_grid, p.lambda_grid, scaled, p.cap, p.cap_points,
                   p.order, None, name="fuchs")
    return is_elliptic(sym, eps)


# ---------------------------------------------------------------------------
# Schwartz seminorms on the fiber kernel grid
# ---------------------------------------------------------------------------

@dataclass
class FiberKernelTable:
    """Kernel f(gamma) sampled on the length-graded grid of the boundary
    fiber: gamma = (v, y - y') with |gamma|^2 = (dist_L / tau(h))^2 + v^2."""

    h: float
    v_grid: np.ndarray
    theta_grid: np.ndarray
    values: np.ndarray  # (V, T)
    tau_of_h: float = 1.0

    def length(self) -> np.ndarray:
        d = np.abs(gt.angdiff(self.theta_grid[None, :], 0.0)) / self.tau_of_h
        v = self.v_grid[:, None]
        return np.sqrt(d ** 2 + v ** 2)


def schwartz_seminorm(table: FiberKernelTable, derivative_spec: dict | None,
                      decay_power: int) -> float:
    """Discrete seminorm sup (1 + |gamma|)^N |D f| with finite-difference D.

    ``derivative_spec`` maps axis names ("v", "theta") to derivative orders;
    None or empty means the identity.
    """
    vals = np.array(table.values, dtype=complex)
    spec = derivative_spec or {}
    dv = spec.get("v", 0)
    dt = spec.get("theta", 0)
    for _ in range(dv):
        vals = np.gradient(vals, table.v_grid, axis=0)
    if dt:
        step = table.theta_grid[1] - table.theta_grid[0]
        for _ in range(dt):
            vals = (np.roll(vals, -1, axis=1) - np.roll(vals, 1, axis=1)) / (2 * step)
    weight = (1.0 + table.length()) ** decay_power
    return float(np.abs(weight * vals).max())
