"""Quantization op_b and the symbol map sigma between b-operators on M and
noncommutative symbols.

A BOperator is a dense matrix on the M grid together with its Schwartz-kernel
partition data: the collar kernel in lag form (exact multiplier data per
h-row, including the h -> 0 limit slot) and the cap-chart generating symbol.
The matrix realizes the kernels against the t = 1 Haar weights:

* collar rows below the seam band quantize the boundary family row by row --
  compact finite-difference stencils for polynomial-in-lambda families,
  tapered lag kernels otherwise;
* rows in the seam band and on the cap quantize the interior symbol in the
  flat cap chart by exact phase-shifted Fourier multiplication on a padded
  lattice, with cross-chart reads through spectral-in-theta interpolation;
* the two realizations are blended smoothly across the seam band.

sigma reads the kernel partition back: discrete Mellin transform of the
collar lag tables (exact on the retained band, so the indicial slot is
recovered exactly) plus the recorded interior symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import gridtools as gt
from . import families as fam
from . import interior as itr
from .geometry import ConeGeometry, KernelPartition, ChartDomainError
from .link import LinkSpace
from .symbols import NCSymbol, SmoothingPart


class MissingKernelError(ValueError):
    """Operation requires the Schwartz-kernel partition data."""


# ---------------------------------------------------------------------------
# finite-difference stencils
# ---------------------------------------------------------------------------

def fd_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    """Weights for d^order/dx^order at 0 from integer offsets, unit spacing."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    if order >= n:
        raise ValueError("not enough points for the requested derivative")
    v = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = float(math.factorial(order))
    return np.linalg.solve(v, rhs)


def stencil_for_derivative(order: int, accuracy: int = 4) -> tuple[np.ndarray, np.ndarray]:
    if order == 0:
        return np.array([0]), np.array([1.0])
    half = (order + accuracy - 1) // 2
    offs = np.arange(-half, half + 1)
    return offs, fd_weights(offs, order)


# ---------------------------------------------------------------------------
# kernel records
# ---------------------------------------------------------------------------

@dataclass
class CylKernelRecord:
    """Collar kernel in lag form: tables[s, d] is the link-matrix block at
    h_slots[s], lag offset lag_offsets[d] (units of d_sigma).  Slot 0 is the
    h -> 0 limit row."""

    h_slots: np.ndarray
    lag_offsets: np.ndarray
    tables: np.ndarray  # (S, D, dimL, dimL)
    blend_weights: np.ndarray

    def multiplier(self, slot: int, freqs: np.ndarray, spacing: float) -> np.ndarray:
        return gt.multiplier_from_kernel(self.tables[slot], self.lag_offsets,
                                         spacing, freqs)


@dataclass
class CapKernelRecord:
    """Interior kernel data: generating symbol on the cap chart plus the
    padded-lattice quantization metadata."""

    symbol: itr.InteriorSymbol
    pad_n: int
    spacing: float


@dataclass
class KernelParts:
    cyl: CylKernelRecord | None
    cap: CapKernelRecord | None
    smoothing: SmoothingPart | None = None


@dataclass
class BOperator:
    """Discretized b-operator: dense matrix on the M grid plus its
    Schwartz-kernel partition data."""

    geometry: ConeGeometry
    matrix: np.ndarray
    kernel_parts: KernelParts | None
    order: float
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def weights(self, t: float = 1.0) -> np.ndarray:
        return self.geometry.weights(t)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def adjoint(self) -> "BOperator":
        w = self.weights(1.0)
        mat = (self.matrix.conj().T * w[None, :]) / w[:, None]
        return BOperator(self.geometry, mat, None, self.order,
                         name=self.name + "*", meta={"adjoint_of": self.name})

    def compose(self, other: "BOperator") -> "BOperator":
        if other.dim != self.dim:
            raise ValueError("operator dimensions differ")
        return BOperator(self.geometry, self.matrix @ other.matrix, None,
                         self.order + other.order,
                         name=f"({self.name})({other.name})")

    def export_binary(self, path: str):
        """Row-major little-endian complex128 (16-byte) dense dump."""
        np.ascontiguousarray(self.matrix.astype("<c16")).tofile(path)

    @staticmethod
    def import_binary(path: str, geometry: ConeGeometry, order: float = 0.0) -> "BOperator":
        n = geometry.n_sites
        arr = np.fromfile(path, dtype="<c16")
        if arr.size != n * n:
            raise ValueError(f"binary matrix size {arr.size} != {n}x{n}")
        return BOperator(geometry, arr.reshape(n, n), None, order, name="imported")


# ---------------------------------------------------------------------------
# cap-chart rows
# ---------------------------------------------------------------------------

def _pad_freq_zetas(geom: ConeGeometry) -> np.ndarray:
    fx = geom.pad_freqs
    return (fx[:, None] + 1j * fx[None, :]).ravel()


def cap_kernel_values(symbol, x_row: np.ndarray, geom: ConeGeometry,
                      xi_scale: float = 1.0) -> np.ndarray:
    """k(x_row - x') on the pad lattice, fft-indexed: (n, n, k, k).

    Exact phase-shifted inverse transform of the frozen-point multiplier
    m(x_row, xi_scale * xi); xi_scale < 1 realizes the deformation Q(x, tD).
    """
    zetas = xi_scale * _pad_freq_zetas(geom)
    vals = symbol.evaluate(np.asarray([x_row]), zetas)[0]
    n = geom.n_pad
    k = vals.shape[-1]
    m = vals.reshape(n, n, k, k)
    fx = geom.pad_freqs
    phase = np.exp(1j * (fx[:, None] * x_row[0] + fx[None, :] * x_row[1]))
    return np.fft.fft2(m * phase[:, :, None, None], axes=(0, 1)) / n ** 2


class GhostMaps:
    """Precomputed cross-chart reads.

    ``direct_idx``: pad lattice points that are cap DOFs; ``interp``: points
    in the ghost annulus outside the rim, each carrying a cylinder-chart
    interpolation row; everything else reads zero.  Also holds the cap-read
    rows for the cylinder ghost levels above the seam.
    """

    def __init__(self, geom: ConeGeometry):
        self.geom = geom
        a = geom.cap_spacing
        n = geom.n_pad
        half = n // 2
        gx = np.round(geom.cap_points[:, 0] / a).astype(int)
        gy = np.round(geom.cap_points[:, 1] / a).astype(int)
        cap_lookup = {(int(i), int(j)): idx for idx, (i, j) in enumerate(zip(gx, gy))}
        direct_ij = []
        direct_node = []
        interp_ij = []
        interp_rows = []
        for i in range(-half, half):
            for j in range(-half, half):
                node = cap_lookup.get((i, j))
                if node is not None:
                    direct_ij.append((i, j))
                    direct_node.append(node)
                    continue
                x, y = i * a, j * a
                r = float(np.hypot(x, y))
                if r <= 1.0 or r > geom.ghost_radius:
                    continue
                h = geom.h_of_radius(r)
                sigma = float(geom.gluing.ell(h))
                if sigma < geom.sigma_lo:
                    continue
                theta = float(np.arctan2(y, x) % (2 * np.pi))
                cols, vals = geom.cyl_interp_row(sigma, theta)
                interp_ij.append((i, j))
                interp_rows.append((cols, vals))
        self.direct_ij = np.array(direct_ij, dtype=int).reshape(-1, 2)
        self.direct_node = np.array(direct_node, dtype=int)
        self.interp_ij = np.array(interp_ij, dtype=int).reshape(-1, 2)
        self.interp_rows = interp_rows
        self.cap_lookup = cap_lookup

        # cylinder ghost levels read from the cap chart
        thetas = gt.theta_grid(geom.n_modes)
        self.ghost_level_rows = []
        for s_g in geom.ghost_sigmas:
            r = 2.0 - s_g
            ring = []
            for th in thetas:
                pt = np.array([r * np.cos(th), r * np.sin(th)])
                ring.append(self._cap_read_row(pt))
            self.ghost_level_rows.append(ring)

    def _cap_read_row(self, point):
        geom = self.geom
        try:
            return geom.cap_interp_row(point)
        except (ChartDomainError, KeyError):
            pass
        a = geom.cap_spacing
        d = np.hypot(geom.cap_points[:, 0] - point[0], geom.cap_points[:, 1] - point[1])
        sel = np.argsort(d)[:4]
        if d[sel[0]] > 2.5 * a:
            raise ChartDomainError(f"no cap nodes near {point}")
        w = 1.0 / np.maximum(d[sel], 1e-9) ** 2
        w = w / w.sum()
        cols, vals = [], []
        for s, ws in zip(sel, w):
            for f in range(geom.fiber_dim):
                cols.append(geom.cap_index(int(s), f))
                vals.append(ws)
        return np.array(cols), np.array(vals)


def cap_chart_rows(symbol, x_row: np.ndarray, geom: ConeGeometry,
                   ghosts: GhostMaps, xi_scale: float = 1.0) -> np.ndarray:
    """Dense operator rows (k, n_sites) of the cap-chart quantization at a
    collocation point x_row."""
    kern = cap_kernel_values(symbol, x_row, geom, xi_scale)
    n = geom.n_pad
    k = geom.fiber_dim
    out = np.zeros((k, geom.n_sites), dtype=complex)
    # direct cap reads, vectorized
    ii = ghosts.direct_ij[:, 0] % n
    jj = ghosts.direct_ij[:, 1] % n
    blocks = kern[ii, jj]  # (M, k, k)
    for fr in range(k):
        for fc in range(k):
            cols = geom.n_cyl_sites + ghosts.direct_node * k + fc
            np.add.at(out[fr], cols, blocks[:, fr, fc])
    # ghost annulus reads through the cylinder chart
    for (i, j), (cols, vals) in zip(ghosts.interp_ij, ghosts.interp_rows):
        block = kern[i % n, j % n]
        if np.abs(block).max() < 1e-15:
            continue
        fibers = cols % k if k > 1 else np.zeros(len(cols), dtype=int)
        for fr in range(k):
            out[fr, cols] += block[fr, fibers] * vals
    return out


# ---------------------------------------------------------------------------
# polynomial extraction from family trees
# ---------------------------------------------------------------------------

def family_polynomial(node: fam.BoundaryFamily, h: float) -> np.ndarray | None:
    """Coefficients [C_0 ... C_deg] of lambda^j at height h, or None when the
    family is not polynomial in lambda."""
    if isinstance(node, fam.PolyLambdaFamily):
        return node._coeff_at(h)
    if isinstance(node, fam.FamilySum):
        parts = [family_polynomial(p, h) for p in node.parts]
        if any(p is None for p in parts):
            return None
        deg = max(p.shape[0] for p in parts)
        out = np.zeros((deg,) + parts[0].shape[1:], dtype=complex)
        for p in parts:
            out[:p.shape[0]] += p
        return out
    if isinstance(node, fam.FamilyProduct):
        parts = [family_polynomial(p, h) for p in node.parts]
        if any(p is None for p in parts):
            return None
        out = parts[0]
        for p in parts[1:]:
            new = np.zeros((out.shape[0] + p.shape[0] - 1,) + out.shape[1:], dtype=complex)
            for i in range(out.shape[0]):
                for j in range(p.shape[0]):
                    new[i + j] += out[i] @ p[j]
            out = new
        return out
    if isinstance(node, fam.FamilyScale):
        base = family_polynomial(node.base, h)
        if base is None:
            return None
        out = base.copy()
        if node.left is not None:
            out = np.einsum("ij,djk->dik", node.left, out)
        if node.right is not None:
            out = np.einsum("dij,jk->dik", out, node.right)
        return out
    if isinstance(node, fam.FamilyShift):
        base = family_polynomial(node.base, h)
        if base is None:
            return None
        iu = 1j * node.u_of_h(h)
        out = np.zeros_like(base)
        for j in range(base.shape[0]):
            for m in range(j + 1):
                out[m] += math.comb(j, m) * (iu ** (j - m)) * base[j]
        return out
    if isinstance(node, fam.FamilyHProfileScale):
        base = family_polynomial(node.base, h)
        return None if base is None else node.rho(h) * base
    if isinstance(node, fam.FamilyBlend):
        w = node._omega(h)
        a = family_polynomial(node.first, h)
        b = family_polynomial(node.second, h)
        if w >= 1.0 and a is not None:
            return a
        if w <= 0.0 and b is not None:
            return b
        if a is None or b is None:
            return None
        deg = max(a.shape[0], b.shape[0])
        out = np.zeros((deg,) + a.shape[1:], dtype=complex)
        out[:a.shape[0]] += w * a
        out[:b.shape[0]] += (1 - w) * b
        return out
    return None


# ---------------------------------------------------------------------------
# op_b
# ---------------------------------------------------------------------------

def quantize(a: NCSymbol, geom: ConeGeometry,
             partition: KernelPartition | None = None,
             fd_accuracy: int = 4, lag_taper: bool = True,
             ghosts: GhostMaps | None = None) -> BOperator:
    """op_b(a): the t = 1 lift of the symbol a to an operator on the M grid."""
    partition = partition or KernelPartition()
    if a.space.dim != geom.dim_link:
        raise ValueError("symbol and geometry link spaces differ")
    n = geom.n_sites
    k = geom.fiber_dim
    dimL = geom.dim_link
    mat = np.zeros((n, n), dtype=complex)
    if ghosts is None:
        ghosts = GhostMaps(geom)
    lo, hi = geom.seam_lo, geom.seam_hi
    h_rows = geom.h_grid

    lags = np.arange(-geom.max_lag, geom.max_lag + 1)
    n_slots = geom.n_sigma + 1
    tables = np.zeros((n_slots, len(lags), dimL, dimL), dtype=complex)
    blend = np.empty(n_slots)
    # polynomial families stay on the family path at every collar row (their
    # stencils are local, reaching the cap only through a few ghost levels);
    # general families hand the seam band to the cap chart
    is_poly = all(family_polynomial(a.family, h) is not None
                  for h in [0.0] + list(h_rows))
    for s in range(n_slots):
        h = 0.0 if s == 0 else h_rows[s - 1]
        blend[s] = 1.0 if is_poly else 1.0 - float(gt.ramp(h, lo, hi))
        # slot 0 is the indicial limit: always the exact band-limited kernel
        tables[s] = _family_lag_table(a.family, h, geom, lags, fd_accuracy,
                                      lag_taper, exact=(s == 0))

    for j in range(geom.n_sigma):
        w_fam = blend[j + 1]
        if w_fam > 0.0:
            _family_rows_into(mat, a.family, j, geom, ghosts, w_fam, fd_accuracy,
                              tables[j + 1], lags)

    thetas = gt.theta_grid(geom.n_modes)
    for j in range(geom.n_sigma):
        w_cap = 1.0 - blend[j + 1]
        if w_cap <= 0.0:
            continue
        r = 2.0 - h_rows[j]
        ring = np.empty((geom.n_modes, k, n), dtype=complex)
        for gidx, th in enumerate(thetas):
            x_row = np.array([r * np.cos(th), r * np.sin(th)])
            ring[gidx] = cap_chart_rows(a.cap, x_row, geom, ghosts)
        for p in range(geom.n_modes):
            phases = np.exp(-1j * geom.link.modes[p] * thetas) / geom.n_modes
            rows = np.tensordot(phases, ring, axes=(0, 0))
            for f in range(k):
                mat[geom.cyl_index(j, p, f)] += w_cap * rows[f]

    for i, pt in enumerate(geom.cap_points):
        rows = cap_chart_rows(a.cap, pt, geom, ghosts)
        for f in range(k):
            mat[geom.cap_index(i, f)] += rows[f]

    parts = KernelParts(CylKernelRecord(np.concatenate([[0.0], h_rows]), lags,
                                        tables, blend),
                        CapKernelRecord(a.cap, geom.n_pad, geom.cap_spacing),
                        a.smoothing)
    meta = {"partition": partition.name, "symbol": a.name}
    if is_poly:
        meta["diff_family"] = a.family
    return BOperator(geom, mat, parts, a.order, name=f"op_b({a.name})", meta=meta)


def _family_lag_table(family, h, geom, lags, fd_accuracy, lag_taper,
                      exact: bool = False) -> np.ndarray:
    """Lag kernel of the family at height h: stencil-exact for polynomial
    families, tapered band-limited inversion otherwise; ``exact`` forces the
    band-limited kernel (used for the indicial limit slot)."""
    dimL = geom.dim_link
    out = np.zeros((len(lags), dimL, dimL), dtype=complex)
    poly = None if exact else family_polynomial(family, h)
    zero = len(lags) // 2
    if poly is not None:
        for m in range(poly.shape[0]):
            offs, w = stencil_for_derivative(m, fd_accuracy)
            cm = poly[m] / (1j ** m)
            for o, ww in zip(offs, w):
                out[zero - int(o)] += cm * ww / geom.d_sigma ** m
        return out
    mult = np.stack([family.eval(h, l) for l in geom.lambda_grid])
    kern = gt.kernel_from_multiplier(mult, geom.lambda_grid, geom.d_sigma, lags)
    if lag_taper and not exact:
        d = np.abs(lags) / max(lags.max(), 1)
        window = np.where(d <= 0.8, 1.0, 0.5 * (1 + np.cos(np.pi * np.clip((d - 0.8) / 0.2, 0, 1))))
        kern = kern * window[:, None, None]
    return kern


def _family_rows_into(mat, family, j, geom, ghosts, weight, fd_accuracy,
                      table, lags):
    dimL = geom.dim_link
    J = geom.n_sigma
    row0 = j * dimL
    h = geom.h_grid[j]
    poly = family_polynomial(family, h)
    if poly is not None:
        for m in range(poly.shape[0]):
            offs, w = stencil_for_derivative(m, fd_accuracy)
            if j + offs.min() < 0:
                # minimal one-sided stencil at the deep edge: first-order
                # accurate, which keeps the truncation ghosts well separated
                # from genuine kernel vectors in the singular spectrum
                npts = min(m + 1, J)
                offs = np.arange(-j, -j + npts)
                w = fd_weights(offs, m)
            cm = (poly[m] / (1j ** m)) * weight / geom.d_sigma ** m
            for o, ww in zip(offs, w):
                _add_block(mat, row0, j + int(o), cm * ww, geom, ghosts)
    else:
        for d_idx, d in enumerate(lags):
            block = table[d_idx]
            if np.abs(block).max() < 1e-15:
                continue
            _add_block(mat, row0, j - int(d), weight * block, geom, ghosts)


def _add_block(mat, row0, tgt, block, geom, ghosts):
    """Add a link-matrix block coupling row block row0 to sigma level tgt
    (grid level, ghost level above the seam, or clipped below)."""
    dimL = geom.dim_link
    J = geom.n_sigma
    if tgt < 0:
        return
    if tgt < J:
        mat[row0:row0 + dimL, tgt * dimL:(tgt + 1) * dimL] += block
        return
    g = tgt - J
    if g >= geom.n_ghost_levels:
        return
    k = geom.fiber_dim
    thetas = gt.theta_grid(geom.n_modes)
    modes = geom.link.modes
    ring = ghosts.ghost_level_rows[g]
    for gidx, (cols, vals) in enumerate(ring):
        phases = np.exp(-1j * modes * thetas[gidx]) / geom.n_modes
        fibers = cols % k if k > 1 else np.zeros(len(cols), dtype=int)
        for ci, vi, f in zip(cols, vals, fibers):
            colvec = (block[:, f::k] * phases[None, :]).sum(axis=1)
            mat[row0:row0 + dimL, ci] += vi * colvec


# ---------------------------------------------------------------------------
# sigma: the symbol map
# ---------------------------------------------------------------------------

@dataclass
class TableFamily(fam.BoundaryFamily):
    """Family backed by sampled multipliers on (h_slots, lambda_grid)."""

    def __init__(self, space: LinkSpace, h_slots, lambda_grid, values, order):
        self.space = space
        self.h_slots = np.asarray(h_slots, dtype=float)
        self.lambda_grid = np.asarray(lambda_grid, dtype=float)
        self.values = np.asarray(values, dtype=complex)  # (S, L, dim, dim)
        self.order = float(order)

    def eval(self, h, lam):
        si = int(np.argmin(np.abs(self.h_slots - h)))
        lam = float(np.real(lam))
        d = np.abs(self.lambda_grid - lam)
        li = int(np.argmin(d))
        if d[li] < 1e-12:
            return self.values[si, li]
        lo = max(np.searchsorted(self.lambda_grid, lam) - 1, 0)
        hi = min(lo + 1, len(self.lambda_grid) - 1)
        t = 0.0 if hi == lo else (lam - self.lambda_grid[lo]) / (self.lambda_grid[hi] - self.lambda_grid[lo])
        return (1 - t) * self.values[si, lo] + t * self.values[si, hi]

    def to_dict(self):
        return {"kind": "table",
                "space": [self.space.fourier_cutoff, self.space.fiber_dim, self.space.metric_scale],
                "h_slots": self.h_slots.tolist(),
                "lambda_grid": self.lambda_grid.tolist(),
                "values": np.stack([self.values.real, self.values.imag]).tolist(),
                "order": self.order}

    @classmethod
    def from_dict(cls, d):
        v = np.array(d["values"])
        return cls(LinkSpace(d["space"][0], d["space"][1], d["space"][2]),
                   np.array(d["h_slots"]), np.array(d["lambda_grid"]),
                   v[0] + 1j * v[1], d["order"])


fam._FAMILY_KINDS["table"] = TableFamily
TableFamily.tag = "table"


def symbol_map(q: BOperator, mode: str = "auto") -> NCSymbol:
    """sigma(Q).

    mode "mellin": discrete Mellin transform of the recorded collar lag
    tables (the indicial slot stores the exact limit kernel, so it is
    recovered exactly); mode "auto" uses the differential shortcut whenever Q
    carries its b-differential description (exact boundary family, the
    vertical covariable entering polynomially).  The interior part is the
    recorded cap kernel data in both modes.
    """
    if q.kernel_parts is None or q.kernel_parts.cyl is None:
        raise MissingKernelError("operator carries no kernel partition")
    geom = q.geometry
    rec = q.kernel_parts.cyl
    freqs = geom.lambda_grid
    if mode == "auto" and "diff_family" in q.meta:
        family = q.meta["diff_family"]
    elif mode in ("auto", "mellin"):
        values = np.empty((len(rec.h_slots), len(freqs), geom.dim_link, geom.dim_link),
                          dtype=complex)
        for s in range(len(rec.h_slots)):
            values[s] = rec.multiplier(s, freqs, geom.d_sigma)
        family = TableFamily(geom.link, rec.h_slots, freqs, values, q.order)
    else:
        raise ValueError(f"unknown sigma mode {mode!r}")
    cap_rec = q.kernel_parts.cap
    cap = cap_rec.symbol if cap_rec is not None else itr.const_symbol(np.eye(geom.fiber_dim))
    from .models import cap_sample_points
    return NCSymbol(geom.link, rec.h_slots, freqs, family, cap,
                    cap_sample_points(), q.order,
                    q.kernel_parts.smoothing, name=f"sigma({q.name})")


def right_inverse_residual(a: NCSymbol, geom: ConeGeometry,
                           partition: KernelPartition | None = None,
                           lambda_window: float | None = None) -> dict:
    """Measure sigma(op_b(a)) - a through the Mellin read-back path.

    Returns the indicial-block deviation (exactly zero by the limit-slot
    construction), the weighted collar deviation over a fixed resolution-
    independent lambda window, and the interior deviation at the recorded
    covariable lattice.
    """
    qop = quantize(a, geom, partition)
    out = symbol_map(qop, mode="mellin")
    lam_max = np.abs(geom.lambda_grid).max()
    win = lambda_window if lambda_window is not None else 0.4 * lam_max
    lams = [l for l in geom.lambda_grid if abs(l) <= win]
    ind_dev = max(float(np.linalg.norm(out.family.eval(0.0, l) - a.family.eval(0.0, l), 2))
                  for l in lams)
    # weighted l1-in-h of the per-row sup deviation over the window
    total = 0.0
    for h in geom.h_grid:
        worst = 0.0
        for l in lams:
            scale = (1.0 + l * l) ** (a.order / 2.0)
            d = np.linalg.norm(out.family.eval(h, l) - a.family.eval(h, l), 2) / scale
            worst = max(worst, float(d))
        total += worst * geom.d_sigma
    # interior: recorded symbol data against the symbol at lattice covariables
    zet = _pad_freq_zetas(geom)
    sel = np.abs(zet) <= win
    pts = a.cap_points
    va = a.cap.evaluate(pts, zet[sel])
    vb = out.cap.evaluate(pts, zet[sel])
    k = max(va.shape[-1], vb.shape[-1])
    interior_dev = float(np.abs(itr._promote(va, k) - itr._promote(vb, k)).max())
    return {"indicial_block": ind_dev, "boundary_weighted": total,
            "interior_lattice": interior_dev,
            "total": ind_dev + total + interior_dev}


def kernel_split(q: BOperator, partition: KernelPartition):
    """(kappa_1, kappa_2, kappa_3) from the recorded kernel against a
    partition of unity; checks the support contracts.

    kappa_1 and kappa_2 are returned as masked collar lag tables (plus the
    cap record reference inside kappa_2); kappa_3 is the off-diagonal
    remainder table.  Raises when kappa_3 fails its vanishing conditions.
    """
    if q.kernel_parts is None or q.kernel_parts.cyl is None:
        raise MissingKernelError("operator carries no kernel partition")
    geom = q.geometry
    rec = q.kernel_parts.cyl
    S, D = rec.tables.shape[:2]
    k1 = np.zeros_like(rec.tables)
    k2 = np.zeros_like(rec.tables)
    k3 = np.zeros_like(rec.tables)
    for s in range(S):
        h = rec.h_slots[s]
        sig_row = geom.gluing.ell(max(h, geom.h_min)) if h > 0 else geom.sigma_lo
        for d_idx, d in enumerate(rec.lag_offsets):
            sig_col = sig_row - d * geom.d_sigma
            h_col = float(geom.gluing.ell_inverse(min(sig_col, geom.sigma_hi)))
            h_col = max(h_col, 0.0)
            dist = abs(sig_col - sig_row) * min(1.0, max(h, geom.h_min))
            w1 = float(partition.omega1(h, h_col))
            w2 = float(partition.omega2(dist, h, h_col))
            w3 = float(partition.omega3(dist, h, h_col))
            k1[s, d_idx] = w1 * rec.tables[s, d_idx]
            k2[s, d_idx] = w2 * rec.tables[s, d_idx]
            k3[s, d_idx] = w3 * rec.tables[s, d_idx]
    # support checks
    sum_err = float(np.abs(k1 + k2 + k3 - rec.tables).max())
    bad_support = 0.0
    for s in range(S):
        h = rec.h_slots[s]
        if h >= 0.5:
            bad_support = max(bad_support, float(np.abs(k1[s]).max()))
    # kappa_3 must vanish near the diagonal (small lags) and near the corner
    diag_band = np.abs(rec.lag_offsets) <= 1
    k3_diag = float(np.abs(k3[:, diag_band]).max())
    corner = rec.h_slots < 0.25
    k3_corner = float(np.abs(k3[corner]).max())
    tol = 1e-10 * max(1.0, float(np.abs(rec.tables).max()))
    if k3_diag > tol or k3_corner > tol:
        raise ValueError(
            f"kappa_3 fails its vanishing conditions (diag {k3_diag:.2e}, corner {k3_corner:.2e})")
    report = {"sum_to_kernel": sum_err, "kappa1_support": bad_support,
              "kappa3_diag": k3_diag, "kappa3_corner": k3_corner}
    return (k1, (k2, q.kernel_parts.cap), k3, report)


# ---------------------------------------------------------------------------
# deformation family
# ---------------------------------------------------------------------------

def deformation_family(a: NCSymbol, geom: ConeGeometry, t: float,
                       fd_accuracy: int = 4,
                       ghosts: GhostMaps | None = None) -> BOperator:
    """P_t for t in (0, 1]: the deformation-groupoid operator at parameter t.

    At t = 1 this reproduces op_b(a).  Collar rows rescale the family
    multiplier (lambda -> t lambda, i.e. stencils pick up t^m and the link
    part kappa(h, t)-scaled mode arguments through the family data); cap rows
    quantize m(x, t xi) against the t-Haar weights.
    """
    if not (0 < t <= 1):
        raise ValueError("t must lie in (0, 1]")
    if ghosts is None:
        ghosts = GhostMaps(geom)
    n = geom.n_sites
    k = geom.fiber_dim
    dimL = geom.dim_link
    mat = np.zeros((n, n), dtype=complex)
    lags = np.arange(-geom.max_lag, geom.max_lag + 1)
    lo, hi = geom.seam_lo, geom.seam_hi
    kap = np.asarray(geom.gluing.kappa(geom.h_grid, t), dtype=float)

    scaled = _TScaledFamily(a.family, t, geom, kap)
    for j in range(geom.n_sigma):
        w_fam = 1.0 - float(gt.ramp(geom.h_grid[j], lo, hi))
        if w_fam <= 0.0:
            continue
        table = _family_lag_table(scaled, geom.h_grid[j], geom, lags, fd_accuracy, True)
        _family_rows_into(mat, scaled, j, geom, ghosts, w_fam, fd_accuracy,
                          table, lags)

    thetas = gt.theta_grid(geom.n_modes)
    for j in range(geom.n_sigma):
        w_cap = 1.0 - (1.0 - float(gt.ramp(geom.h_grid[j], lo, hi)))
        if w_cap <= 0.0:
            continue
        r = 2.0 - geom.h_grid[j]
        ring = np.empty((geom.n_modes, k, n), dtype=complex)
        for gidx, th in enumerate(thetas):
            x_row = np.array([r * np.cos(th), r * np.sin(th)])
            ring[gidx] = cap_chart_rows(a.cap, x_row, geom, ghosts, xi_scale=t)
        for p in range(geom.n_modes):
            phases = np.exp(-1j * geom.link.modes[p] * thetas) / geom.n_modes
            rows = np.tensordot(phases, ring, axes=(0, 0))
            for f in range(k):
                mat[geom.cyl_index(j, p, f)] += w_cap * rows[f]

    for i, pt in enumerate(geom.cap_points):
        rows = cap_chart_rows(a.cap, pt, geom, ghosts, xi_scale=t)
        for f in range(k):
            mat[geom.cap_index(i, f)] += rows[f]

    return BOperator(geom, mat, None, a.order, name=f"P_t({a.name},t={t})",
                     meta={"t": t})


class _TScaledFamily(fam.BoundaryFamily):
    """family(h, t*lambda) with the link covariable scaled by kappa(h, t).

    For mode-diagonal link parts the kappa-scaling acts through the family's
    polynomial data when available; otherwise the plain lambda-rescaling is
    used (the collar rows of the deformation only enter the t -> 0 and
    continuity diagnostics, not the index runs).
    """

    def __init__(self, base, t, geom, kap):
        self.base = base
        self.space = base.space
        self.order = base.order
        self.t = float(t)
        self.geom = geom
        self.kap = kap

    def _kappa_at(self, h):
        return float(self.geom.gluing.kappa(h, self.t))

    def eval(self, h, lam):
        return self.base.eval(h, self.t * lam)

    def is_holomorphic(self):
        return self.base.is_holomorphic()


def family_polynomial_tscaled(node: "_TScaledFamily", h: float):
    base = family_polynomial(node.base, h)
    if base is None:
        return None
    out = base.copy()
    for m in range(out.shape[0]):
        out[m] = out[m] * node.t ** m
    return out


_orig_family_polynomial = family_polynomial


def family_polynomial(node, h):  # noqa: F811 -- dispatch wrapper
    if isinstance(node, _TScaledFamily):
        return family_polynomial_tscaled(node, h)
    return _orig_family_polynomial(node, h)


# ---------------------------------------------------------------------------
# consistency between matrix and kernel records
# ---------------------------------------------------------------------------

def consistency_report(q: BOperator, n_probes: int = 3, seed: int = 7) -> dict:
    """Apply the matrix and the kernel-record integration to band-limited
    probes and report the worst relative deviation on deep-collar rows (where
    the lag record is exact by construction)."""
    if q.kernel_parts is None or q.kernel_parts.cyl is None:
        raise MissingKernelError("operator carries no kernel partition")
    geom = q.geometry
    rec = q.kernel_parts.cyl
    rng = np.random.default_rng(seed)
    dimL = geom.dim_link
    worst = 0.0
    zero = len(rec.lag_offsets) // 2
    interior = range(geom.max_lag, geom.n_sigma - geom.max_lag)
    rows = [j for j in interior if rec.blend_weights[j + 1] >= 1.0]
    for _ in range(n_probes):
        u = np.zeros(geom.n_sites, dtype=complex)
        cyl = (rng.standard_normal((geom.n_sigma, dimL))
               + 1j * rng.standard_normal((geom.n_sigma, dimL)))
        u[:geom.n_cyl_sites] = cyl.ravel()
        v = q.matrix @ u
        for j in rows:
            direct = np.zeros(dimL, dtype=complex)
            for d_idx, d in enumerate(rec.lag_offsets):
                tgt = j - int(d)
                if 0 <= tgt < geom.n_sigma:
                    direct += rec.tables[j + 1, d_idx] @ cyl[tgt]
            got = v[j * dimL:(j + 1) * dimL]
            scale = max(1.0, float(np.abs(direct).max()))
            worst = max(worst, float(np.abs(direct - got).max()) / scale)
    return {"worst_interior_row_deviation": worst, "rows_checked": len(rows)}
