"""Fredholm index machinery on the b-weighted grid.

Square discretizations pair kernel and cokernel counts ('dim ker = dim coker'
for any matrix at any common threshold), so the near-null singular vectors
must be classified before counting:

* edge veto: vectors whose mass concentrates on the artificial truncation
  edges (deepest collar rings, outermost retained modes) are discretization
  ghosts -- the decaying-in-the-wrong-direction solutions killed by the
  missing half-infinite end -- and are never counted;
* refinement persistence: a genuine kernel (cokernel) vector is the sample of
  a true solution, so its prolongation to a refined grid stays near-null for
  the refined operator (adjoint); the left partner of a genuine kernel sigma
  is a residual direction and fails this test.

An index is reported only when the near-null cluster is separated from the
bulk spectrum by the configured gap and the classified counts agree across
the supplied variant reruns (refined grid, alternate partition, alternate
gluing, halved h_min); otherwise the result is flagged indeterminate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import ConeGeometry, ChartDomainError
from .link import LinkOperator
from .quantize import BOperator


@dataclass
class IndexResult:
    index: int | None
    dim_ker: int
    dim_coker: int
    singular_gap: float
    indeterminate: bool
    stability: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "dim_ker": self.dim_ker,
            "dim_coker": self.dim_coker,
            "singular_gap": self.singular_gap,
            "indeterminate": self.indeterminate,
            "stability": self.stability,
            "details": {k: v for k, v in self.details.items()
                        if k in ("near_null", "threshold", "edge_mass_ker",
                                 "edge_mass_coker", "persist_ker", "persist_coker")},
        }


def weighted_matrix(p: BOperator) -> np.ndarray:
    w = p.weights(1.0)
    sq = np.sqrt(w)
    return (p.matrix * sq[:, None]) / sq[None, :]


def _candidate_zone(s: np.ndarray, rel: float, max_null: int) -> np.ndarray:
    """Indices of the singular values examined for classification: the small
    tail below a generous relative cut."""
    med = float(np.median(s))
    cut = rel * med
    order = np.argsort(s)
    cand = [i for i in order[:max_null] if s[i] < cut]
    return np.array(cand, dtype=int)


def prolong(vec: np.ndarray, coarse: ConeGeometry, fine: ConeGeometry) -> np.ndarray:
    """Interpolate a DOF vector to a refined geometry: spectral in theta,
    cubic in sigma, lattice interpolation on the cap."""
    from . import gridtools as gt
    k = coarse.fiber_dim
    out = np.zeros(fine.n_sites, dtype=complex)
    cyl = vec[:coarse.n_cyl_sites].reshape(coarse.n_sigma, coarse.n_modes, k)
    for j, s in enumerate(fine.sigma_grid):
        s_cl = float(np.clip(s, coarse.sigma_grid[0], coarse.sigma_grid[-1]))
        idx, w = gt.cubic_interp_weights(coarse.sigma_grid, s_cl)
        out_block = np.tensordot(w, cyl[idx], axes=(0, 0))
        out[j * fine.dim_link:(j + 1) * fine.dim_link] = out_block.ravel()
    for i, pt in enumerate(fine.cap_points):
        try:
            cols, vals = coarse.cap_interp_row(pt)
        except (ChartDomainError, KeyError):
            d = np.hypot(coarse.cap_points[:, 0] - pt[0], coarse.cap_points[:, 1] - pt[1])
            sel = np.argsort(d)[:4]
            wts = 1.0 / np.maximum(d[sel], 1e-9) ** 2
            wts /= wts.sum()
            cols = np.array([coarse.cap_index(int(s), f) for s in sel for f in range(k)])
            vals = np.array([ws for ws in wts for _ in range(k)])
        fibers = cols % k if k > 1 else np.zeros(len(cols), dtype=int)
        for f in range(k):
            sel_f = fibers == f
            out[fine.cap_index(i, f)] = np.dot(vals[sel_f], vec[cols[sel_f]])
    return out


def _classify(p: BOperator, fine: BOperator | None, u, s, vh, near: np.ndarray,
              edge_depth: int, persist_ratio: float, details: dict):
    geom = p.geometry
    depth = edge_depth if edge_depth > 0 else max(3, geom.n_sigma // 4)
    edge = geom.edge_mask(depth)
    w = p.weights(1.0)

    def edge_mass(vec):
        prob = w * np.abs(vec) ** 2
        return float(prob[edge].sum() / prob.sum())

    fine_scale = None
    if fine is not None:
        fs = np.linalg.svd(weighted_matrix(fine), compute_uv=False)
        fine_scale = fs[0]

    def persists(vec, op_fine: BOperator):
        if fine is None:
            return True
        vf = prolong(vec, geom, op_fine.geometry)
        wf = op_fine.weights(1.0)
        nrm = np.sqrt(float(np.sum(wf * np.abs(vf) ** 2)))
        if nrm < 1e-12:
            return False
        rv = op_fine.matrix @ vf
        score = np.sqrt(float(np.sum(wf * np.abs(rv) ** 2))) / nrm
        return score <= persist_ratio * fine_scale

    ker_flags, coker_flags = [], []
    details["edge_mass_ker"], details["edge_mass_coker"] = [], []
    details["persist_ker"], details["persist_coker"] = [], []
    fine_adj = fine.adjoint() if fine is not None else None
    for i in near:
        vr = vh[i].conj()
        vl = u[:, i]
        em_r, em_l = edge_mass(vr), edge_mass(vl)
        details["edge_mass_ker"].append(em_r)
        details["edge_mass_coker"].append(em_l)
        ok_r = em_r < 0.5 and persists(vr, fine)
        ok_l = em_l < 0.5 and (fine is None or persists(vl, fine_adj))
        details["persist_ker"].append(bool(ok_r))
        details["persist_coker"].append(bool(ok_l))
        ker_flags.append(ok_r)
        coker_flags.append(ok_l)
    return ker_flags, coker_flags


def fredholm_index(p: BOperator, refined: BOperator | None = None,
                   alternates: Sequence[tuple[BOperator, BOperator | None]] = (),
                   gap_min: float = 10.0, floor_rel: float = 1e-7,
                   edge_depth: int = 0, persist_ratio: float = 2e-3,
                   max_null: int = 14, zone_rel: float = 0.08) -> IndexResult:
    """Classified-count index of a discretized b-operator.

    ``refined`` drives the persistence test and the grid-stability verdict;
    ``alternates`` are (operator, refined-or-None) pairs from other
    admissible discretization choices whose classified counts must agree.
    ``edge_depth`` 0 means a quarter of the collar.  The reported
    singular_gap is the ratio between the first non-retained and the last
    retained singular value; below ``gap_min`` the verdict is indeterminate.
    """
    wm = weighted_matrix(p)
    u, s, vh = np.linalg.svd(wm)
    floor = floor_rel * max(s[0], 1.0)
    near = _candidate_zone(s, zone_rel, max_null)
    details = {"near_null": s[near].tolist(),
               "spectrum_tail": np.sort(s)[:max_null].tolist()}
    ker_flags, coker_flags = _classify(p, refined, u, s, vh, near, edge_depth,
                                       persist_ratio, details)
    dim_ker = int(sum(ker_flags))
    dim_coker = int(sum(coker_flags))
    index = dim_ker - dim_coker
    retained_idx = {int(i) for i, (a, b) in zip(near, zip(ker_flags, coker_flags))
                    if a or b}
    retained = [s[i] for i in retained_idx]
    if retained:
        top_ret = max(retained)
        non_ret_above = [s[i] for i in range(len(s))
                         if i not in retained_idx and s[i] >= top_ret]
        gap = float(min(non_ret_above) / max(top_ret, floor)) if non_ret_above else np.inf
    else:
        smallest = float(np.min(s)) if len(s) else np.inf
        gap = float(smallest / floor)
    details["threshold"] = float(max(retained)) if retained else floor
    indeterminate = bool(gap < gap_min)
    stability = {"gap": float(gap), "gap_ok": not indeterminate, "variants": []}
    for alt, alt_fine in alternates:
        sub = fredholm_index(alt, alt_fine, (), gap_min, floor_rel, edge_depth,
                             persist_ratio, max_null, zone_rel)
        ok = (sub.index == index and not sub.indeterminate)
        stability["variants"].append({"name": alt.name, "index": sub.index,
                                      "dim_ker": sub.dim_ker,
                                      "dim_coker": sub.dim_coker,
                                      "gap": sub.singular_gap, "agrees": ok})
        if not ok:
            indeterminate = True
    stability["stable"] = not indeterminate
    return IndexResult(None if indeterminate else index, dim_ker, dim_coker,
                       float(gap), indeterminate, stability, details)


class AmbiguousIntervalError(ValueError):
    """An eigenvalue sits numerically on an interval endpoint."""


def spectral_count(s_op: LinkOperator, interval: tuple[float, float],
                   endpoint_tol: float = 1e-9) -> int:
    """Number of eigenvalues of a hermitian link operator strictly inside an
    interval; exact on the truncation."""
    m = s_op.matrix
    scale = max(1.0, float(np.linalg.norm(m, np.inf)))
    if np.linalg.norm(m - m.conj().T, np.inf) > 1e-10 * scale:
        raise ValueError("spectral_count expects a hermitian operator")
    lo, hi = interval
    if not lo < hi:
        raise ValueError("empty interval")
    evals = np.linalg.eigvalsh((m + m.conj().T) / 2.0)
    if np.any(np.abs(evals - lo) < endpoint_tol) or np.any(np.abs(evals - hi) < endpoint_tol):
        raise AmbiguousIntervalError(
            "an eigenvalue lies within tolerance of an interval endpoint")
    return int(np.count_nonzero((evals > lo) & (evals < hi)))


def near_kernel_profile(builder: Callable[[int], BOperator],
                        resolutions: Sequence[int],
                        rel_threshold: float = 1e-3,
                        n_report: int = 10) -> dict:
    """Smallest singular values and near-kernel counts across resolutions.

    ``builder(r)`` returns the discretized operator at resolution label r;
    the count below a fixed relative threshold growing with resolution is the
    non-Fredholm signal, a constant count the fully elliptic one.
    """
    if len(resolutions) < 2:
        raise ValueError("need at least two resolutions")
    table = {"resolutions": list(resolutions), "smallest": [], "counts": [],
             "rel_threshold": rel_threshold}
    for r in resolutions:
        op = builder(r)
        s = np.linalg.svd(weighted_matrix(op), compute_uv=False)
        tail = np.sort(s)[:n_report]
        table["smallest"].append(tail.tolist())
        table["counts"].append(int(np.count_nonzero(s < rel_threshold * s[0])))
    return table


def singular_values_csv(path: str, lambdas, values):
    with open(path, "w") as f:
        f.write("lambda,min_singular_value\n")
        for l, v in zip(lambdas, values):
            f.write(f"{l},{v}\n")


def profile_csv(path: str, table: dict):
    with open(path, "w") as f:
        f.write("resolution,count," + ",".join(f"sv{i}" for i in range(len(table["smallest"][0]))) + "\n")
        for r, c, sv in zip(table["resolutions"], table["counts"], table["smallest"]):
            f.write(f"{r},{c}," + ",".join(str(x) for x in sv) + "\n")
