"""Model problem builders: the symbols and operators the test batteries run on.

The battery family pairs the boundary family i lambda + S, with S the fiber
pair (-i d/dtheta + c, +i d/dtheta + c) (spectrum {n + c}, each value twice),
with an elliptic 2x2 cap symbol carrying a winding parameter w in {0, +-1}.
A scalar symbol cannot carry that indicial data together with a nonzero cap
winding over a disk (the rim coefficient e^{-i theta} obstructs a scalar
extension), so the model family is fiber-doubled; the SU(2)-type coefficient

    W(x) = [[conj(x), -(1 - |x|^2)], [1 - |x|^2, x]]   (x = x1 + i x2)

matches the collar data exactly at the rim and stays invertible on the whole
cap, and an analogous covariable twist V(p), p proportional to a smoothed
winding factor, inserts the parameter w away from the seam.
"""

from __future__ import annotations

import numpy as np

from . import gridtools as gt
from . import families as fam
from . import interior as itr
from .geometry import ConeGeometry
from .link import LinkSpace, LinkOperator, TailSymbol, make_link_operator
from .symbols import NCSymbol


def weight_phi(h, h0: float = 0.25):
    """Weight function: equal to h near 0, 1 from h = 1 on, smooth increasing."""
    h = np.asarray(h, dtype=float)
    c = gt.ramp(h, h0, 1.0)
    return (1 - c) * h + c


TAIL_ANGLES = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
TAIL_THETAS = gt.theta_grid(8)


def constant_tail(space: LinkSpace, block: np.ndarray, degree: float) -> TailSymbol:
    k = space.fiber_dim
    block = np.atleast_2d(np.asarray(block, dtype=complex))
    vals = np.broadcast_to(block, (len(TAIL_ANGLES), len(TAIL_THETAS), k, k)).copy()
    return TailSymbol(TAIL_ANGLES, TAIL_THETAS, vals, degree)


def affine_tail(space: LinkSpace, eta_blocks: np.ndarray) -> TailSymbol:
    """Tail of i lambda + S with fiberwise principal eta * eta_blocks."""
    k = space.fiber_dim
    vals = np.empty((len(TAIL_ANGLES), len(TAIL_THETAS), k, k), dtype=complex)
    for a, psi in enumerate(TAIL_ANGLES):
        lam_hat, eta_hat = np.sin(psi), np.cos(psi)
        vals[a, :] = 1j * lam_hat * np.eye(k) + eta_hat * eta_blocks
    return TailSymbol(TAIL_ANGLES, TAIL_THETAS, vals, 1.0)


def symbol_h_grid(geom: ConeGeometry) -> np.ndarray:
    return np.concatenate([[0.0], geom.h_grid])


def cap_sample_points() -> np.ndarray:
    pts = [(0.0, 0.0)]
    for r in (0.3, 0.55, 0.8, 0.95):
        for t in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            pts.append((r * np.cos(t), r * np.sin(t)))
    return np.array(pts)


def identity_symbol(geom: ConeGeometry) -> NCSymbol:
    space = geom.link
    eye = np.eye(space.dim, dtype=complex)
    family = fam.PolyLambdaFamily(space, np.array([0.0]), eye[None, None], 0.0,
                                  tail=constant_tail(space, np.eye(space.fiber_dim), 0.0))
    cap = itr.const_symbol(np.eye(space.fiber_dim))
    return NCSymbol(space, symbol_h_grid(geom), geom.lambda_grid, family, cap,
                    cap_sample_points(), 0.0, name="identity")


def s_pair_matrix(space: LinkSpace, c: float, w: int = 0) -> np.ndarray:
    """S = diag over modes of diag(n + c - w, -n + c) on the doubled fiber.

    The integer shift w relabels the first fiber's spectrum {n + c} without
    changing it as a set, but moves w indicial roots across the decay
    threshold relative to the cap matching: the winding parameter of the
    model family.
    """
    if space.fiber_dim != 2:
        raise ValueError("the model family uses fiber dimension 2")
    diag = np.empty(space.dim, dtype=complex)
    for p, n in enumerate(space.modes):
        diag[2 * p] = n + c - w
        diag[2 * p + 1] = -n + c
    return np.diag(diag)


def s_scalar_matrix(space: LinkSpace, c: float) -> np.ndarray:
    """S = -i d/dtheta + c in the mode basis (scalar fiber)."""
    if space.fiber_dim != 1:
        raise ValueError("scalar S needs fiber dimension 1")
    return np.diag(space.modes.astype(complex) + c)


def affine_family_symbolic(space: LinkSpace, s_matrix: np.ndarray,
                           eta_blocks: np.ndarray) -> fam.PolyLambdaFamily:
    """The h-constant family i lambda + S with its homogeneous tail."""
    eye = np.eye(space.dim, dtype=complex)
    coeffs = np.stack([s_matrix.astype(complex), 1j * eye])[None]
    return fam.PolyLambdaFamily(space, np.array([0.0]), coeffs, 1.0,
                                tail=affine_tail(space, eta_blocks))


def _w_tilde_coeff(scale: complex = 1.0) -> itr.Poly2Coeff:
    """W(x) = [[conj(x), -(1-|x|^2)], [1-|x|^2, x]] times a scalar."""
    s = complex(scale)
    terms = {
        (0, 0): s * np.array([[0, -1], [1, 0]], dtype=complex),
        (1, 0): s * np.array([[1, 0], [0, 1]], dtype=complex),
        (0, 1): s * np.array([[-1j, 0], [0, 1j]], dtype=complex),
        (2, 0): s * np.array([[0, 1], [-1, 0]], dtype=complex),
        (0, 2): s * np.array([[0, 1], [-1, 0]], dtype=complex),
    }
    return itr.Poly2Coeff(terms)


def _bump_profile(lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    rs = np.linspace(0.0, 1.8, 181)
    vals = 1.0 - gt.ramp(rs, lo, hi)
    return rs, vals


def winding_twist(w: int, eps_zero: float = 1.5) -> itr.InteriorSymbol:
    """Quaternionic full-symbol twist of joint (x, zeta)-degree sign(w).

    R = [[A, -conj B], [B, conj A]] with A = 1 - n(|x|) G(zeta), B = x m(|x|),
    G = 2 eps zeta / (eps^2 + |zeta|^2) (or its conjugate for w < 0).  R is
    the identity outside |x| < 0.45, leaves the principal symbol invertible,
    and its unique transversal zero at (x = 0, zeta = eps) carries the index
    shift; |w| > 1 composes copies.
    """
    eye2 = np.eye(2, dtype=complex)
    if w == 0:
        return itr.const_symbol(eye2)
    if abs(w) > 1:
        step = winding_twist(1 if w > 0 else -1, eps_zero)
        return itr.SymProduct([step] * abs(w))
    rs, prof = _bump_profile(0.30, 0.45)
    e11 = np.array([[1, 0], [0, 0]], dtype=complex)
    e22 = np.array([[0, 0], [0, 1]], dtype=complex)
    g_up = itr.RadialCoeff(rs, -2.0 * eps_zero * prof, e11)
    g_dn = itr.RadialCoeff(rs, -2.0 * eps_zero * prof, e22)
    if w > 0:
        a_term = itr.Term(g_up, a=1, b=0, s=2.0, eps=eps_zero)
        abar_term = itr.Term(g_dn, a=0, b=1, s=2.0, eps=eps_zero)
    else:
        a_term = itr.Term(g_up, a=0, b=1, s=2.0, eps=eps_zero)
        abar_term = itr.Term(g_dn, a=1, b=0, s=2.0, eps=eps_zero)
    x_mat = itr.Poly2Coeff({(1, 0): np.array([[0, 0], [1, 0]], dtype=complex),
                            (0, 1): np.array([[0, 0], [1j, 0]], dtype=complex)})
    xbar_mat = itr.Poly2Coeff({(1, 0): np.array([[0, -1], [0, 0]], dtype=complex),
                               (0, 1): np.array([[0, 1j], [0, 0]], dtype=complex)})
    b_term = itr.Term(itr.CoeffProduct([itr.RadialCoeff(rs, prof), x_mat]))
    bbar_term = itr.Term(itr.CoeffProduct([itr.RadialCoeff(rs, prof), xbar_mat]))
    return itr.SymSum([itr.const_symbol(eye2), a_term, abar_term, b_term, bbar_term])


def battery_cap(c: float, w: int, eps: float = 4.0) -> itr.InteriorSymbol:
    """(-i W(x) diag(zeta, conj zeta) + c) R_w: elliptic on the cap, matching
    the collar family exactly at the rim, carrying the interior twist w."""
    w_coeff = itr.Term(_w_tilde_coeff(-1j))
    dz = itr.SymSum([
        itr.Term(itr.ConstCoeff(np.array([[1, 0], [0, 0]], dtype=complex)), a=1, b=0),
        itr.Term(itr.ConstCoeff(np.array([[0, 0], [0, 1]], dtype=complex)), a=0, b=1),
    ])
    main = itr.SymProduct([w_coeff, dz])
    base = itr.SymSum([main, itr.const_symbol(c * np.eye(2, dtype=complex))])
    if w == 0:
        return base
    return itr.SymProduct([base, winding_twist(w)])


def battery_symbol(geom: ConeGeometry, c: float, w: int) -> NCSymbol:
    """Fully elliptic model symbol: indicial family i lambda + diag(n + c)
    (fiber-doubled) with cap winding parameter w."""
    space = geom.link
    if space.fiber_dim != 2:
        raise ValueError("battery symbols need a fiber-2 geometry")
    s_mat = s_pair_matrix(space, c)
    eta_blocks = np.diag([1.0, -1.0]).astype(complex)
    family = affine_family_symbolic(space, s_mat, eta_blocks)
    cap = battery_cap(c, w)
    return NCSymbol(space, symbol_h_grid(geom), geom.lambda_grid, family, cap,
                    cap_sample_points(), 1.0, name=f"battery(c={c},w={w})")


def scalar_model_symbol(geom: ConeGeometry, c: float) -> NCSymbol:
    """Scalar symbol of h d/dh + S, S = -i d/dtheta + c, with an identity cap
    (used for sigma-map and Mellin calibrations, not for index runs)."""
    space = geom.link
    s_mat = s_scalar_matrix(space, c)
    family = affine_family_symbolic(space, s_mat, np.array([[1.0]], dtype=complex))
    cap = itr.const_symbol(np.eye(1))
    return NCSymbol(space, symbol_h_grid(geom), geom.lambda_grid, family, cap,
                    cap_sample_points(), 1.0, name=f"h d_h + S(c={c})")


def shift_plus_operator(space: LinkSpace) -> LinkOperator:
    """The index -1 convention-fixing operator: e^{i theta} on positive
    modes, identity on the rest (scalar fiber)."""

    def table(thetas, n):
        if n > 0:
            return np.exp(1j * thetas)
        return np.ones_like(thetas)

    return make_link_operator(space, table, order=0.0)


def fuchs_dirac_base(space: LinkSpace, c: float, weight_h0: float = 0.25):
    """Fuchs-type model: base = phi(h)^{-1} [[0, -d/dv + S], [d/dv + S, 0]]
    on the doubled fiber; multiplying by phi recovers the affine family
    [[0, -i lambda + S], [i lambda + S, 0]]."""
    if space.fiber_dim != 2:
        raise ValueError("the Fuchs model uses fiber dimension 2")
    n_modes = space.n_modes
    s_small = np.diag(space.modes.astype(complex) + c)
    zero = np.zeros_like(s_small)
    eye = np.eye(n_modes, dtype=complex)
    # block structure over the doubled fiber: reorder (mode, fiber) kron
    def two_by_two(m11, m12, m21, m22):
        out = np.zeros((space.dim, space.dim), dtype=complex)
        out[0::2, 0::2] = m11
        out[0::2, 1::2] = m12
        out[1::2, 0::2] = m21
        out[1::2, 1::2] = m22
        return out

    c0 = two_by_two(zero, s_small, s_small, zero)
    c1 = two_by_two(zero, -1j * eye, 1j * eye, zero)
    coeffs = np.stack([c0, c1])[None]
    vals = np.empty((len(TAIL_ANGLES), len(TAIL_THETAS), 2, 2), dtype=complex)
    for a, psi in enumerate(TAIL_ANGLES):
        lam_hat, eta_hat = np.sin(psi), np.cos(psi)
        for t, th in enumerate(TAIL_THETAS):
            vals[a, t] = np.array([[0, -1j * lam_hat + eta_hat],
                                   [1j * lam_hat + eta_hat, 0]])
    tail = TailSymbol(TAIL_ANGLES, TAIL_THETAS, vals, 1.0)
    affine = fam.PolyLambdaFamily(space, np.array([0.0]), coeffs, 1.0, tail=tail)
    base = fam.FamilyHProfileScale(affine, ("weight_power", -1.0, weight_h0))
    return base, affine
