"""Cone geometry: gluing functions, grids, Haar weights, exponential charts
and the kernel partition.

The compactified cone M is modeled in two overlapping charts:

* a cylinder chart over the collar (0, 1]_h x S^1, discretized uniformly in
  the gluing coordinate sigma = l(h) (log-spaced in h near 0, uniform near 1)
  with the circle in truncated Fourier modes;
* a flat-disk cap chart for X_+ on a Cartesian lattice, glued at h = 1
  (cap rim radius 1); the chart transition identifies radius r with h = 2 - r.

The t = 1 Haar weight is uniform in (sigma, theta) on the collar -- the
b-density -- and the lattice cell area on the cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import gridtools as gt
from .link import LinkSpace


class ChartDomainError(ValueError):
    """Point outside the declared chart domain."""


# ---------------------------------------------------------------------------
# gluing functions
# ---------------------------------------------------------------------------

@dataclass
class GluingFunctions:
    """The quadruple (tau, kappa, mu, l) with the cone gluing constraints.

    tau: decreasing, 1 on [0, 1/2], vanishing exactly on [1, inf).
    kappa(h, t): between min(1, tau + t) and 1, equal to tau + t where that
    is at most 3/4.  mu(h, t, u) is carried for completeness and evaluated at
    u = 0 where mu(h, t, 0) = t-like. l: strictly increasing, log on (0, h0],
    identity from near 1 on.
    """

    tau: Callable
    kappa: Callable
    mu: Callable
    ell: Callable
    ell_prime: Callable
    ell_inverse: Callable
    h0: float
    name: str = "default"


def _make_ell(h0: float, h1: float):
    """l = log on (0, h0], identity on [h1, inf), monotone smooth blend."""

    def chi(h):
        return gt.ramp(h, h0, h1)

    def ell(h):
        h = np.asarray(h, dtype=float)
        c = chi(h)
        with np.errstate(divide="ignore"):
            lg = np.log(np.clip(h, 1e-300, None))
        return (1 - c) * lg + c * h

    def ell_prime(h):
        h = np.asarray(h, dtype=float)
        eps = 1e-7
        return (ell(h + eps) - ell(h - eps)) / (2 * eps)

    def ell_inverse(s):
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        flat = s.ravel()
        res = np.empty_like(flat)
        for i, val in enumerate(flat):
            if val >= h1:
                res[i] = val
                continue
            if val <= np.log(h0):
                res[i] = np.exp(val)
                continue
            lo, hi = h0 * 0.5, max(h1 * 1.5, 2.0)
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if ell(mid) < val:
                    lo = mid
                else:
                    hi = mid
            res[i] = 0.5 * (lo + hi)
        out.ravel()[:] = res
        return out if out.shape else float(out)

    return ell, ell_prime, ell_inverse


def default_gluing(variant: str = "default") -> GluingFunctions:
    """Admissible gluing quadruples; two variants for invariance runs.

    Both variants share l (the grid coordinate) and differ in the tau/kappa
    shape parameters, which is what the invariance criteria exercise.
    """
    if variant == "default":
        tau_lo, tau_hi = 0.5, 1.0
        kap_edge = 0.75
    elif variant == "alternate":
        tau_lo, tau_hi = 0.58, 1.0
        kap_edge = 0.70
    else:
        raise ValueError(f"unknown gluing variant {variant!r}")

    def tau(h):
        return 1.0 - gt.ramp(h, tau_lo, tau_hi)

    def kappa(h, t):
        # equal to tau + t below the 3/4 edge, smoothly saturating at 1
        x = np.asarray(tau(h) + t, dtype=float)
        c = gt.ramp(x, kap_edge, 1.25)
        val = (1 - c) * x + c * 1.0
        return np.clip(val, np.minimum(1.0, x), 1.0)

    def mu(h, t, u):
        x = np.asarray(u * tau(h) + t, dtype=float)
        c = gt.ramp(x, kap_edge, 1.25)
        val = (1 - c) * x + c * 1.0
        return np.clip(val, np.minimum(1.0, x), 1.0)

    h0 = 0.45
    ell, ell_prime, ell_inverse = _make_ell(h0, 0.95)
    return GluingFunctions(tau, kappa, mu, ell, ell_prime, ell_inverse,
                           h0, name=variant)


@dataclass
class GluingReport:
    valid: bool
    checks: dict

    def as_dict(self):
        return {"valid": self.valid, "checks": self.checks}


def validate_gluing(g: GluingFunctions, n_samples: int = 400) -> GluingReport:
    """Sample every stated constraint and report worst violations."""
    hs = np.linspace(1e-6, 2.0, n_samples)
    ts = np.linspace(0.0, 1.0, 21)
    tau = g.tau(hs)
    checks = {}
    checks["tau_range"] = float(max(np.max(tau - 1.0), np.max(-tau), 0.0))
    checks["tau_one_on_first_half"] = float(np.max(np.abs(g.tau(np.linspace(1e-6, 0.5, 50)) - 1.0)))
    checks["tau_zero_from_1"] = float(np.max(np.abs(g.tau(np.linspace(1.0, 2.0, 50)))))
    # C-infinity cutoffs underflow to exact zero shortly before their endpoint
    # in double precision, so positivity is sampled up to 0.95 only
    checks["tau_positive_below_1"] = float(min(np.min(g.tau(np.linspace(1e-6, 0.95, 200))), 1.0))
    dtau = np.diff(tau)
    checks["tau_decreasing"] = float(max(np.max(dtau), 0.0))
    worst_low, worst_high, worst_eq = 0.0, 0.0, 0.0
    for t in ts:
        kap = np.asarray(g.kappa(hs, t), dtype=float)
        lowbound = np.minimum(1.0, g.tau(hs) + t)
        worst_low = max(worst_low, float(np.max(lowbound - kap)))
        worst_high = max(worst_high, float(np.max(kap - 1.0)))
        sel = (g.tau(hs) + t) <= 0.70
        if sel.any():
            worst_eq = max(worst_eq, float(np.max(np.abs(kap[sel] - (g.tau(hs)[sel] + t)))))
    checks["kappa_lower_bound"] = worst_low
    checks["kappa_upper_bound"] = worst_high
    checks["kappa_equals_tau_plus_t"] = worst_eq
    hfine = np.linspace(1e-4, 1.5, n_samples)
    lp = g.ell_prime(hfine)
    checks["ell_increasing_margin"] = float(np.min(lp))
    checks["ell_log_near_0"] = float(np.max(np.abs(g.ell(np.linspace(1e-4, g.h0, 60))
                                                   - np.log(np.linspace(1e-4, g.h0, 60)))))
    checks["ell_identity_from_1"] = float(np.max(np.abs(g.ell(np.linspace(1.0, 1.5, 30))
                                                        - np.linspace(1.0, 1.5, 30))))
    tol = 1e-9
    valid = (checks["tau_range"] <= tol and checks["tau_one_on_first_half"] <= tol
             and checks["tau_zero_from_1"] <= tol and checks["tau_decreasing"] <= tol
             and checks["tau_positive_below_1"] > 0
             and checks["kappa_lower_bound"] <= 1e-6 and checks["kappa_upper_bound"] <= 1e-6
             and checks["kappa_equals_tau_plus_t"] <= 1e-6
             and checks["ell_increasing_margin"] > 0
             and checks["ell_log_near_0"] <= 1e-9 and checks["ell_identity_from_1"] <= 1e-9)
    return GluingReport(bool(valid), checks)


# ---------------------------------------------------------------------------
# cone geometry
# ---------------------------------------------------------------------------

@dataclass
class ConeGeometry:
    """Discretization of M: collar sigma-grid x link modes plus cap lattice."""

    link: LinkSpace
    gluing: GluingFunctions
    h_min: float = 1e-3
    n_sigma: int = 64
    cap_spacing: float = 0.12
    seam_lo: float = 0.75
    seam_hi: float = 0.92
    pad_halfwidth: float = 2.0
    ghost_radius: float = 1.5

    def __post_init__(self):
        g = self.gluing
        self.sigma_lo = float(g.ell(self.h_min))
        self.sigma_hi = float(g.ell(1.0))
        self.sigma_grid = np.linspace(self.sigma_lo, self.sigma_hi, self.n_sigma)
        self.d_sigma = self.sigma_grid[1] - self.sigma_grid[0]
        self.h_grid = np.asarray(g.ell_inverse(self.sigma_grid), dtype=float)
        self.h_grid[-1] = 1.0
        # log region: where l == log exactly (h <= h0)
        self.log_mask = self.h_grid <= g.h0 + 1e-12
        n_log = int(self.log_mask.sum())
        self.n_freq = n_log if n_log % 2 == 1 else n_log + 1
        self.lambda_grid = gt.grid_freqs(self.n_freq, self.d_sigma)
        self.max_lag = (self.n_freq - 1) // 2
        # cap lattice inside the unit disk (rim = seam at h = 1)
        a = self.cap_spacing
        m = int(np.floor((1.0 - a / 2) / a))
        coords = []
        for i in range(-m, m + 1):
            for j in range(-m, m + 1):
                x, y = i * a, j * a
                if np.hypot(x, y) <= 1.0 - a / 2:
                    coords.append((x, y))
        self.cap_points = np.array(coords)
        # pad lattice for cap-chart Fourier quantization
        npad = int(np.ceil(2 * self.pad_halfwidth / a))
        if npad % 2 == 1:
            npad += 1
        self.n_pad = npad
        self.pad_freqs = 2.0 * np.pi * np.fft.fftfreq(npad, d=a)
        # ghost annulus nodes (pad-lattice points just outside the rim, read
        # from the cylinder chart)
        ghosts = []
        for i in range(-npad // 2, npad // 2):
            for j in range(-npad // 2, npad // 2):
                x, y = i * a, j * a
                r = np.hypot(x, y)
                if 1.0 - a / 2 < r <= self.ghost_radius:
                    ghosts.append((x, y))
        self.ghost_points = np.array(ghosts) if ghosts else np.zeros((0, 2))
        # ghost sigma levels above the seam for cylinder-chart stencils
        self.n_ghost_levels = 6
        self.ghost_sigmas = self.sigma_hi + self.d_sigma * np.arange(1, self.n_ghost_levels + 1)

    # -- sizes ------------------------------------------------------------
    @property
    def n_modes(self) -> int:
        return self.link.n_modes

    @property
    def fiber_dim(self) -> int:
        return self.link.fiber_dim

    @property
    def dim_link(self) -> int:
        return self.link.dim

    @property
    def n_cap(self) -> int:
        return len(self.cap_points)

    @property
    def n_cyl_sites(self) -> int:
        return self.n_sigma * self.dim_link

    @property
    def n_sites(self) -> int:
        return self.n_cyl_sites + self.n_cap * self.fiber_dim

    def cyl_index(self, j: int, p: int, f: int = 0) -> int:
        return (j * self.n_modes + p) * self.fiber_dim + f

    def cap_index(self, i: int, f: int = 0) -> int:
        return self.n_cyl_sites + i * self.fiber_dim + f

    # -- weights (Haar system) ---------------------------------------------
    def weights(self, t: float = 1.0) -> np.ndarray:
        """Quadrature weight per site at deformation parameter t.

        Collar: d_sigma * 2 pi / (t kappa(h, t)); cap: cell / t^2.  At t = 1
        kappa is forced to 1 and the collar weight is the b-density in the
        sigma coordinate.
        """
        if not (0 < t <= 1):
            raise ValueError("t must lie in (0, 1]")
        w = np.empty(self.n_sites)
        kap = np.asarray(self.gluing.kappa(self.h_grid, t), dtype=float)
        for j in range(self.n_sigma):
            wj = self.d_sigma * 2.0 * np.pi / (t * kap[j])
            w[j * self.dim_link:(j + 1) * self.dim_link] = wj
        w[self.n_cyl_sites:] = self.cap_spacing ** 2 / t ** 2
        return w

    # -- collar h for cap-chart points --------------------------------------
    def h_of_radius(self, r):
        return 2.0 - np.asarray(r, dtype=float)

    # -- edge masks for index classification --------------------------------
    def edge_mask(self, depth: int = 3) -> np.ndarray:
        """Sites at the artificial truncation edges: the deepest collar rings
        and the outermost retained modes."""
        mask = np.zeros(self.n_sites, dtype=bool)
        modes = self.link.modes
        cutoff = self.link.fourier_cutoff
        for j in range(self.n_sigma):
            for p in range(self.n_modes):
                edge = j < depth or abs(int(modes[p])) >= cutoff
                if edge:
                    for f in range(self.fiber_dim):
                        mask[self.cyl_index(j, p, f)] = True
        return mask

    # -- refinement ----------------------------------------------------------
    def refine(self, factor: int = 2, halve_hmin: bool = False) -> "ConeGeometry":
        h_min = self.h_min / 2 if halve_hmin else self.h_min
        return ConeGeometry(self.link, self.gluing, h_min,
                            (self.n_sigma - 1) * factor + 1,
                            self.cap_spacing / factor, self.seam_lo, self.seam_hi,
                            self.pad_halfwidth, self.ghost_radius)

    def with_fibers(self, k: int) -> "ConeGeometry":
        return ConeGeometry(self.link.with_fibers(k), self.gluing, self.h_min,
                            self.n_sigma, self.cap_spacing, self.seam_lo,
                            self.seam_hi, self.pad_halfwidth, self.ghost_radius)

    # -- interpolation between charts ---------------------------------------
    def eval_cyl_at(self, vec: np.ndarray, sigma: float, angles: np.ndarray) -> np.ndarray:
        """Evaluate a DOF vector's cylinder part at (sigma, angles) -> (A, k).

        Spectral in theta, cubic in sigma; sigma must lie in the grid span.
        """
        k = self.fiber_dim
        cyl = vec[:self.n_cyl_sites].reshape(self.n_sigma, self.n_modes, k)
        idx, w = gt.cubic_interp_weights(self.sigma_grid, sigma)
        modes = np.tensordot(w, cyl[idx], axes=(0, 0))  # (n_modes, k)
        phases = np.exp(1j * np.outer(angles, self.link.modes))
        return phases @ modes

    def cyl_interp_row(self, sigma: float, angle: float) -> tuple[np.ndarray, np.ndarray]:
        """Row (indices, weights) expressing u(sigma, angle) from cylinder DOFs."""
        idx, w = gt.cubic_interp_weights(self.sigma_grid, sigma)
        phases = np.exp(1j * angle * self.link.modes)
        k = self.fiber_dim
        cols = []
        vals = []
        for jj, wj in zip(idx, w):
            for p in range(self.n_modes):
                for f in range(k):
                    cols.append(self.cyl_index(jj, p, f))
                    vals.append(wj * phases[p])
        return np.array(cols), np.array(vals)

    def cap_interp_row(self, point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row expressing u(point) from cap DOFs by bicubic lattice interpolation."""
        a = self.cap_spacing
        x, y = point
        # build from the separable 4-point Lagrange weights on each axis
        gx = np.round(self.cap_points[:, 0] / a).astype(int)
        gy = np.round(self.cap_points[:, 1] / a).astype(int)
        lookup = {(i, j): idx for idx, (i, j) in enumerate(zip(gx, gy))}
        i0 = int(np.floor(x / a))
        j0 = int(np.floor(y / a))

        def axis_weights(t0, t):
            pts = np.arange(t0 - 1, t0 + 3)
            w = np.ones(4)
            for aa in range(4):
                for bb in range(4):
                    if aa != bb:
                        w[aa] *= (t - pts[bb] * a) / ((pts[aa] - pts[bb]) * a)
            return pts, w

        pi, wi = axis_weights(i0, x)
        pj, wj = axis_weights(j0, y)
        cols, vals = [], []
        missing = 0.0
        for ii, wx in zip(pi, wi):
            for jj, wy in zip(pj, wj):
                w = wx * wy
                if abs(w) < 1e-14:
                    continue
                node = lookup.get((int(ii), int(jj)))
                if node is None:
                    missing += abs(w)
                    continue
                for f in range(self.fiber_dim):
                    cols.append(self.cap_index(node, f))
                    vals.append(w)
        if missing > 0.35:
            raise ChartDomainError(f"cap interpolation stencil mostly outside at {point}")
        return np.array(cols, dtype=int), np.array(vals)


# ---------------------------------------------------------------------------
# exponential charts
# ---------------------------------------------------------------------------

def chart_exp(geom: ConeGeometry, x: tuple, vector: tuple, t: float):
    """E at parameter t: maps (x, V) to the second point of the groupoid
    element.  Collar points are (h, theta) with V = (lam, W); cap points are
    Cartesian with V a plane vector."""
    g = geom.gluing
    if not (0 < t <= 1):
        raise ChartDomainError("t must lie in (0, 1]")
    if len(x) == 2 and not isinstance(x[0], tuple):
        h, theta = x
        if h >= 1.0:
            raise ChartDomainError("collar branch needs h < 1")
        lam, w = vector
        target = g.ell(h) + t * lam
        if target >= g.ell(2.0):
            raise ChartDomainError("l^{-1}(l(h) + t lambda) outside the collar")
        hp = float(g.ell_inverse(target))
        kap = float(g.kappa(h, t))
        return (hp, float((theta + kap * w) % (2 * np.pi)))
    raise ChartDomainError("unrecognized point")


def chart_exp_cap(x: np.ndarray, vector: np.ndarray, t: float) -> np.ndarray:
    return np.asarray(x, dtype=float) + t * np.asarray(vector, dtype=float)


def chart_theta(geom: ConeGeometry, x: tuple, xp: tuple, t: float):
    """Inverse chart: the tangent coordinates of the pair (x, x') at t."""
    g = geom.gluing
    if not (0 < t <= 1):
        raise ChartDomainError("t must lie in (0, 1]")
    h, theta = x
    hp, thetap = xp
    if h >= 1.0 or hp >= 2.0:
        raise ChartDomainError("collar branch needs h < 1")
    lam = (float(g.ell(hp)) - float(g.ell(h))) / t
    kap = float(g.kappa(h, t))
    w = gt.angdiff(thetap, theta) / kap
    return lam, float(w)


def chart_theta_cap(x: np.ndarray, xp: np.ndarray, t: float) -> np.ndarray:
    return (np.asarray(xp, dtype=float) - np.asarray(x, dtype=float)) / t


# ---------------------------------------------------------------------------
# kernel partition
# ---------------------------------------------------------------------------

@dataclass
class KernelPartition:
    """Partition of unity on M x M subordinated to the three-region cover.

    omega_1 lives on the corner (both points deep in the collar), omega_2 on
    a neighborhood of the diagonal away from the corner, omega_3 is the
    off-diagonal remainder.  Cutoffs phi_i dominate omega_i.  The thresholds
    are configuration, with two admissible variants.
    """

    corner_lo: float = 0.35
    corner_hi: float = 0.48
    diag_dist: tuple = (0.40, 0.80)
    sum_lo: float = 0.60
    sum_hi: float = 0.70
    name: str = "default"

    def omega1(self, h, hp):
        a = 1.0 - gt.ramp(h, self.corner_lo, self.corner_hi)
        b = 1.0 - gt.ramp(hp, self.corner_lo, self.corner_hi)
        return a * b

    def _g(self, dist, h, hp):
        d = 1.0 - gt.ramp(dist, self.diag_dist[0], self.diag_dist[1])
        s = gt.ramp(np.asarray(h) + np.asarray(hp), self.sum_lo, self.sum_hi)
        return d * s

    def omega2(self, dist, h, hp):
        return (1.0 - self.omega1(h, hp)) * self._g(dist, h, hp)

    def omega3(self, dist, h, hp):
        return (1.0 - self.omega1(h, hp)) * (1.0 - self._g(dist, h, hp))

    def phi1(self, hp):
        return 1.0 - gt.ramp(hp, self.corner_hi, 0.55)

    def phi2(self, dist):
        return 1.0 - gt.ramp(dist, self.diag_dist[1], self.diag_dist[1] + 0.3)

    def validate(self, n: int = 60) -> dict:
        hs = np.linspace(1e-3, 1.0, n)
        worst_sum = 0.0
        worst_supp1 = 0.0
        diag_gap = 1.0
        for h in hs:
            for hp in hs:
                dist = abs(h - hp)
                s = self.omega1(h, hp) + self.omega2(dist, h, hp) + self.omega3(dist, h, hp)
                worst_sum = max(worst_sum, abs(float(s) - 1.0))
                if h > 0.5 or hp > 0.5:
                    worst_supp1 = max(worst_supp1, float(self.omega1(h, hp)))
            diag_gap = min(diag_gap, float(self.omega1(h, h) + self._g(0.0, h, h)))
        return {"sum_to_one": worst_sum, "omega1_support": worst_supp1,
                "diagonal_covered_margin": diag_gap}


def default_partition(variant: str = "default") -> KernelPartition:
    if variant == "default":
        return KernelPartition()
    if variant == "alternate":
        return KernelPartition(corner_lo=0.30, corner_hi=0.45,
                               diag_dist=(0.30, 0.65), sum_lo=0.50, sum_hi=0.62,
                               name="alternate")
    raise ValueError(f"unknown partition variant {variant!r}")
