"""Branched-transport patterns: rooted forests of mass-carrying trajectories.

A pattern lives on the half sample [0, T] and is reflected to [-T, 0] when
symmetric.  Nodes are space-time events; edges carry constant mass and affine
trajectories between their endpoint nodes; leaves sit at t = T and own a
terminal fragment (an atom, or a block spread instantaneously at T).

Coordinates are stored torus-unwrapped on the line (recorded origin), so
monotonicity and cone statements are literal interval statements; boundary
spectra re-wrap positions mod 1 on their own.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DivergentBoundaryNorm,
    InvalidMass,
    NodeNotFound,
    TimeOutOfRange,
)
from .measures import (
    AtomicMeasure,
    BlockMeasure,
    MollifiedMeasure,
    canonicalize,
    canonicalize_blocks,
)

_T_TOL = 1e-9
_MASS_RTOL = 1e-12


@dataclass(frozen=True)
class IrrigationPattern:
    """Forest of affine mass trajectories on [0, T]; build via :func:`make_pattern`."""

    T: float
    node_t: np.ndarray
    node_x: np.ndarray
    edge_parent: np.ndarray
    edge_child: np.ndarray
    edge_mass: np.ndarray
    tip_nodes: np.ndarray
    tip_widths: np.ndarray
    symmetric: bool = True
    origin: float = 0.0

    @property
    def n_nodes(self) -> int:
        return int(self.node_t.size)

    @property
    def n_edges(self) -> int:
        return int(self.edge_parent.size)

    def roots(self) -> np.ndarray:
        has_parent = np.zeros(self.n_nodes, dtype=bool)
        has_parent[self.edge_child] = True
        referenced = np.zeros(self.n_nodes, dtype=bool)
        referenced[self.edge_child] = True
        referenced[self.edge_parent] = True
        return np.where(~has_parent & referenced)[0]

    def children_of(self, node: int) -> np.ndarray:
        return np.where(self.edge_parent == node)[0]

    def parent_edge_of(self, node: int) -> Optional[int]:
        idx = np.where(self.edge_child == node)[0]
        return int(idx[0]) if idx.size else None

    def to_json(self) -> dict:
        return {
            "T": float(self.T),
            "nodes": [{"id": i, "t": float(t), "x": float(x)}
                      for i, (t, x) in enumerate(zip(self.node_t, self.node_x))],
            "edges": [{"from": int(p), "to": int(c), "mass": float(m)}
                      for p, c, m in zip(self.edge_parent, self.edge_child,
                                         self.edge_mass)],
            "tips": [{"node": int(n), "width": float(w)}
                     for n, w in zip(self.tip_nodes, self.tip_widths)],
            "symmetric": bool(self.symmetric),
            "origin": float(self.origin),
        }


@dataclass(frozen=True)
class SliceResult:
    """Time slice of a pattern: the atomic measure plus atom-to-edge alignment."""

    t: float
    measure: AtomicMeasure
    branch_ids: tuple  # tuple of tuples of edge indices, aligned with atoms


@dataclass(frozen=True)
class EnergyBreakdown:
    perimeter: float
    kinetic: float
    boundary_penalty: float

    @property
    def total(self) -> float:
        return self.perimeter + self.kinetic + self.boundary_penalty

    def to_json(self) -> dict:
        return {"perimeter": self.perimeter, "kinetic": self.kinetic,
                "boundary_penalty": self.boundary_penalty, "total": self.total}


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    witness: Optional[str] = None
    data: Optional[dict] = None


@dataclass(frozen=True)
class ValidationReport:
    results: dict

    def passed(self, name: str) -> bool:
        return self.results[name].passed

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def to_json(self) -> dict:
        return {name: {"passed": r.passed, "witness": r.witness}
                for name, r in self.results.items()}


def make_pattern(T: float, nodes: Sequence[tuple], edges: Sequence[tuple],
                 tips: Sequence[tuple], symmetric: bool = True,
                 origin: float = 0.0, check: bool = True) -> IrrigationPattern:
    """Assemble and (optionally) structurally validate a pattern.

    nodes: (t, x) per node id in order; edges: (parent, child, mass);
    tips: (node, width) with width 0 meaning an atomic fragment.
    """
    node_t = np.asarray([n[0] for n in nodes], dtype=float)
    node_x = np.asarray([n[1] for n in nodes], dtype=float)
    ep = np.asarray([e[0] for e in edges], dtype=np.int64)
    ec = np.asarray([e[1] for e in edges], dtype=np.int64)
    em = np.asarray([e[2] for e in edges], dtype=float)
    tn = np.asarray([t[0] for t in tips], dtype=np.int64)
    tw = np.asarray([t[1] for t in tips], dtype=float)
    p = IrrigationPattern(float(T), node_t, node_x, ep, ec, em, tn, tw,
                          symmetric=symmetric, origin=origin)
    if check:
        _check_structure(p)
    return p


def pattern_from_json(data: dict) -> IrrigationPattern:
    nodes = [(n["t"], n["x"]) for n in sorted(data["nodes"], key=lambda n: n["id"])]
    edges = [(e["from"], e["to"], e["mass"]) for e in data["edges"]]
    tips = [(t["node"], t.get("width", 0.0)) for t in data["tips"]]
    return make_pattern(data["T"], nodes, edges, tips,
                        symmetric=data.get("symmetric", True),
                        origin=data.get("origin", 0.0))


def _check_structure(p: IrrigationPattern):
    if p.n_edges == 0:
        raise InvalidMass("pattern has no edges")
    if np.any(p.edge_mass <= 0.0):
        raise InvalidMass("edge masses must be positive")
    if np.any((p.node_t < -_T_TOL) | (p.node_t > p.T + _T_TOL)):
        raise TimeOutOfRange("node times must lie in [0, T]")
    dt = p.node_t[p.edge_child] - p.node_t[p.edge_parent]
    if np.any(dt <= 0.0):
        raise TimeOutOfRange("edges must go strictly forward in time")
    counts = np.bincount(p.edge_child, minlength=p.n_nodes)
    if np.any(counts > 1):
        bad = int(np.argmax(counts > 1))
        raise InvalidMass(f"node {bad} has more than one parent")
    inflow = np.zeros(p.n_nodes)
    outflow = np.zeros(p.n_nodes)
    np.add.at(inflow, p.edge_child, p.edge_mass)
    np.add.at(outflow, p.edge_parent, p.edge_mass)
    interior = (inflow > 0) & (outflow > 0)
    if np.any(np.abs(inflow[interior] - outflow[interior])
              > _MASS_RTOL * np.maximum(inflow[interior], 1.0)):
        raise InvalidMass("mass is not conserved at an interior node")
    leaves = np.where((outflow == 0) & (inflow > 0))[0]
    if np.any(np.abs(p.node_t[leaves] - p.T) > _T_TOL):
        raise TimeOutOfRange("every leaf must sit at t = T")
    if set(p.tip_nodes.tolist()) != set(leaves.tolist()):
        raise NodeNotFound("tips must be attached to exactly the leaf nodes")


def leaf_masses(p: IrrigationPattern) -> np.ndarray:
    """Mass arriving at each tip (the inbound edge mass of its leaf)."""
    inflow = np.zeros(p.n_nodes)
    np.add.at(inflow, p.edge_child, p.edge_mass)
    return inflow[p.tip_nodes]


def pattern_slice(p: IrrigationPattern, t: float) -> SliceResult:
    """Atoms of mu_t: edge trajectories interpolated, coincident atoms merged."""
    if t < -_T_TOL or t > p.T + _T_TOL:
        raise TimeOutOfRange(f"t={t} outside [0, {p.T}]")
    t = min(max(t, 0.0), p.T)
    tu = p.node_t[p.edge_parent]
    tv = p.node_t[p.edge_child]
    if t == p.T:
        alive = tv == p.T
        pos = np.where(alive, p.node_x[p.edge_child], 0.0)
    else:
        alive = (tu <= t) & (t < tv)
        frac = np.where(alive, (t - tu) / np.where(alive, tv - tu, 1.0), 0.0)
        pos = p.node_x[p.edge_parent] + frac * (
            p.node_x[p.edge_child] - p.node_x[p.edge_parent])
    idx = np.where(alive)[0]
    pos, mass = pos[idx], p.edge_mass[idx]
    order = np.argsort(pos, kind="stable")
    pos, mass, idx = pos[order], mass[order], idx[order]
    # merge exactly coincident atoms, tracking contributing edges
    atoms, weights, groups = [], [], []
    for x, m, e in zip(pos, mass, idx):
        if atoms and x - atoms[-1] <= 1e-15:
            weights[-1] += m
            groups[-1].append(int(e))
        else:
            atoms.append(float(x))
            weights.append(float(m))
            groups.append([int(e)])
    measure = AtomicMeasure(np.asarray(atoms), np.asarray(weights),
                            float(np.sum(weights)))
    return SliceResult(t, measure, tuple(tuple(g) for g in groups))


def internal_energy(p: IrrigationPattern, a: float, b: float) -> tuple[float, float]:
    """(P, E_kin) on [a, b]: branch-count perimeter and exact kinetic term.

    The perimeter integrand counts distinct branch positions; between two
    consecutive node times trajectories are affine, so edges coincide exactly
    when their endpoint positions on that subinterval coincide.
    """
    if not (0.0 <= a < b <= p.T + _T_TOL):
        raise TimeOutOfRange(f"invalid interval ({a}, {b})")
    tu = p.node_t[p.edge_parent]
    tv = p.node_t[p.edge_child]
    xu = p.node_x[p.edge_parent]
    xv = p.node_x[p.edge_child]
    v = (xv - xu) / (tv - tu)
    overlap = np.clip(np.minimum(b, tv) - np.maximum(a, tu), 0.0, None)
    ekin = float(np.sum(p.edge_mass * v * v * overlap))

    cuts = np.unique(np.concatenate([[a, b], p.node_t[(p.node_t > a)
                                                      & (p.node_t < b)]]))
    perim = 0.0
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        alive = (tu <= t0) & (tv >= t1)
        if not np.any(alive):
            continue
        p0 = xu[alive] + (t0 - tu[alive]) * v[alive]
        p1 = xu[alive] + (t1 - tu[alive]) * v[alive]
        distinct = np.unique(p0 + 1j * p1).size
        perim += distinct * (t1 - t0)
    return perim, ekin


def boundary_measure(p: IrrigationPattern, mode: str = "atomic",
                     mollify_eps: Optional[float] = None):
    """Terminal measure mu_T rendered from the tips, wrapped to the torus."""
    masses = leaf_masses(p)
    xs = p.node_x[p.tip_nodes]
    if mode == "atomic":
        return canonicalize((xs, masses))
    if mode == "block":
        if np.any(p.tip_widths <= 0.0):
            raise InvalidMass("block boundary mode requires tip widths")
        # coincident identical fragments (parallel filaments) merge by mass
        agg: dict = {}
        for x, w, m in zip(xs, p.tip_widths, masses):
            key = (float(x), float(w))
            agg[key] = agg.get(key, 0.0) + float(m)
        return canonicalize_blocks([(x, w, m) for (x, w), m in agg.items()])
    if mode == "mollified":
        if mollify_eps is None:
            raise InvalidMass("mollified boundary mode requires mollify_eps")
        return MollifiedMeasure(canonicalize((xs, masses)), mollify_eps)
    raise ValueError(f"unknown boundary mode {mode!r}")


def full_energy(p: IrrigationPattern, s: float, boundary_mode: str = "atomic",
                K: int = 4096, mollify_eps: Optional[float] = None) -> EnergyBreakdown:
    """Total energy on [-T, T] of a symmetric pattern.

    Internal terms double the half-pattern values; the boundary penalty is
    twice the truncated squared H^{-s} norm of the centered tip measure (the
    two boundary measures coincide by symmetry).
    """
    from .spectral import hs_norm_sq, spectrum_of

    if not p.symmetric:
        raise InvalidMass("full_energy expects a symmetric pattern")
    if not 0.0 < s < 1.0:
        raise ValueError(f"s={s} outside (0, 1)")
    if boundary_mode == "atomic" and s <= 0.5:
        raise DivergentBoundaryNorm(
            "atomic boundary penalty diverges for s <= 1/2")
    perim, ekin = internal_energy(p, 0.0, p.T)
    bm = boundary_measure(p, boundary_mode, mollify_eps)
    norm = hs_norm_sq(spectrum_of(bm, K, centered=True), s)
    if norm.infinite:
        raise DivergentBoundaryNorm("boundary norm diverges")
    return EnergyBreakdown(2.0 * perim, 2.0 * ekin, 2.0 * norm.value)


def subsystem(p: IrrigationPattern, node: int) -> IrrigationPattern:
    """Forward subsystem emanating from a node: its descendant sub-forest."""
    if not 0 <= node < p.n_nodes:
        raise NodeNotFound(f"node {node} does not exist")
    keep_nodes = {int(node)}
    keep_edges = []
    frontier = [int(node)]
    children = {}
    for i, parent in enumerate(p.edge_parent):
        children.setdefault(int(parent), []).append(i)
    while frontier:
        cur = frontier.pop()
        for e in children.get(cur, ()):
            keep_edges.append(e)
            nxt = int(p.edge_child[e])
            keep_nodes.add(nxt)
            frontier.append(nxt)
    if not keep_edges:
        # leaf: the subsystem is its tip fragment alone; the smallest
        # representable enclosure is the inbound edge stub
        e = p.parent_edge_of(node)
        keep_edges = [e]
        keep_nodes.add(int(p.edge_parent[e]))
    remap = {old: new for new, old in enumerate(sorted(keep_nodes))}
    nodes = [(p.node_t[old], p.node_x[old]) for old in sorted(keep_nodes)]
    edges = [(remap[int(p.edge_parent[e])], remap[int(p.edge_child[e])],
              p.edge_mass[e]) for e in sorted(keep_edges)]
    tipmap = {int(n): w for n, w in zip(p.tip_nodes, p.tip_widths)}
    tips = [(remap[old], tipmap[old]) for old in sorted(keep_nodes)
            if old in tipmap]
    return make_pattern(p.T, nodes, edges, tips, symmetric=False,
                        origin=p.origin)


def induced_plan(p: IrrigationPattern, a: float, b: float):
    """Coupling between mu_a and mu_b carried by the pattern itself."""
    from .transport import MonotonePlan

    slice_a = pattern_slice(p, a)
    pos_b = pattern_slice(p, b)
    # map each edge alive at b to its position there
    edge_pos_b = {}
    for atom_idx, edges in enumerate(pos_b.branch_ids):
        for e in edges:
            edge_pos_b[e] = pos_b.measure.positions[atom_idx]
    children = {}
    for i, parent in enumerate(p.edge_parent):
        children.setdefault(int(parent), []).append(i)

    pairs = []

    def descend(edge: int, xa: float):
        if edge in edge_pos_b:
            pairs.append((xa, edge_pos_b[edge], p.edge_mass[edge]))
            return
        for e in children.get(int(p.edge_child[edge]), ()):
            descend(e, xa)

    for atom_idx, edges in enumerate(slice_a.branch_ids):
        xa = slice_a.measure.positions[atom_idx]
        for e in edges:
            descend(e, xa)
    pairs.sort()
    src = np.asarray([q[0] for q in pairs])
    tgt = np.asarray([q[1] for q in pairs])
    mss = np.asarray([q[2] for q in pairs])
    return MonotonePlan(src, tgt, mss)


# ---------------------------------------------------------------------------
# validators


def _subtree_tip_extents(p: IrrigationPattern):
    """Per node: (lo, hi) extent of the terminal fragments it irrigates."""
    masses = leaf_masses(p)
    lo = np.full(p.n_nodes, np.inf)
    hi = np.full(p.n_nodes, -np.inf)
    bary = np.zeros(p.n_nodes)
    for n, w, m in zip(p.tip_nodes, p.tip_widths, masses):
        x = p.node_x[n]
        lo[n] = x - w / 2.0
        hi[n] = x + w / 2.0
        bary[n] = x * m
    order = np.argsort(p.node_t[p.edge_child])[::-1]  # children before parents
    for e in order:
        par, ch = int(p.edge_parent[e]), int(p.edge_child[e])
        lo[par] = min(lo[par], lo[ch])
        hi[par] = max(hi[par], hi[ch])
        bary[par] += bary[ch]
    return lo, hi, bary


def _greedy_interval_count(points: np.ndarray, length: float) -> int:
    """Minimal number of intervals of given length covering sorted points."""
    count, i = 0, 0
    pts = np.sort(points)
    while i < pts.size:
        count += 1
        end = pts[i] + length
        i = int(np.searchsorted(pts, end, side="right"))
    return count


def validate(p: IrrigationPattern, checks: Optional[Iterable[str]] = None,
             cone_tol: float = 1e-9, barycenter_tol: float = 1e-8,
             equipartition_tol: float = 0.05,
             windows: Optional[list] = None) -> ValidationReport:
    """Structural and variational diagnostics; report-valued, never raises.

    Checks: no_loop, monotone_coupling, cone, barycenter, three_intervals,
    equipartition.  Witnesses name the first offending object.
    """
    all_checks = ("no_loop", "monotone_coupling", "cone", "barycenter",
                  "three_intervals", "equipartition")
    wanted = tuple(checks) if checks is not None else all_checks
    results = {}
    lo, hi, bary = _subtree_tip_extents(p)
    node_times = np.unique(p.node_t[(p.node_t > 0) & (p.node_t < p.T)])

    if "no_loop" in wanted:
        passed, witness = True, None
        counts = np.bincount(p.edge_child, minlength=p.n_nodes)
        if np.any(counts > 1):
            passed = False
            witness = f"node {int(np.argmax(counts > 1))} has two parents"
        else:
            for n in range(p.n_nodes):
                kids = p.children_of(n)
                if kids.size < 2:
                    continue
                ivals = sorted((lo[int(p.edge_child[e])],
                                hi[int(p.edge_child[e])]) for e in kids)
                for (l1, h1), (l2, h2) in zip(ivals[:-1], ivals[1:]):
                    if h1 > l2 + 1e-12:
                        passed = False
                        witness = (f"subsystems at node {n} overlap: "
                                   f"[{l1:.6g},{h1:.6g}] vs [{l2:.6g},{h2:.6g}]")
                        break
                if not passed:
                    break
        results["no_loop"] = CheckResult(passed, witness)

    if "monotone_coupling" in wanted:
        passed, witness = True, None
        # sample node times plus interior points of every inter-node interval
        # (several per interval: straight branches can cross at any one point)
        cuts = np.unique(np.concatenate([[0.0, p.T], node_times]))
        interior = np.concatenate([cuts[:-1] + f * np.diff(cuts)
                                   for f in (0.25, 0.5, 0.75)])
        sample = np.unique(np.concatenate([node_times, interior]))
        for t in sample:
            sl = pattern_slice(p, float(t))
            reach = []
            for edges in sl.branch_ids:
                kids = [int(p.edge_child[e]) for e in edges]
                reach.append((min(lo[k] for k in kids),
                              max(hi[k] for k in kids)))
            for i in range(len(reach) - 1):
                if reach[i][1] > reach[i + 1][0] + 1e-12:
                    passed = False
                    witness = (f"at t={t:.6g} branch order and tip order "
                               f"disagree between atoms {i} and {i + 1}")
                    break
            if not passed:
                break
        results["monotone_coupling"] = CheckResult(passed, witness)

    if "cone" in wanted:
        passed, witness = True, None
        children = {}
        for i, parent in enumerate(p.edge_parent):
            children.setdefault(int(parent), []).append(i)
        for n in range(p.n_nodes):
            if not children.get(n) or p.node_t[n] >= p.T - _T_TOL:
                continue
            span = p.T - p.node_t[n]
            stack = [e for e in children[n]]
            while stack:
                e = stack.pop()
                m = int(p.edge_child[e])
                frac = (p.node_t[m] - p.node_t[n]) / span
                low = p.node_x[n] + (lo[n] - p.node_x[n]) * frac
                high = p.node_x[n] + (hi[n] - p.node_x[n]) * frac
                if not (low - cone_tol <= p.node_x[m] <= high + cone_tol):
                    passed = False
                    witness = (f"descendant node {m} leaves the cone of node "
                               f"{n}: x={p.node_x[m]:.9g} not in "
                               f"[{low:.9g}, {high:.9g}]")
                    stack = []
                    break
                stack.extend(children.get(m, ()))
            if not passed:
                break
        results["cone"] = CheckResult(passed, witness)

    if "barycenter" in wanted:
        passed, witness = True, None
        worst = 0.0
        outflow = np.zeros(p.n_nodes)
        np.add.at(outflow, p.edge_parent, p.edge_mass)
        for r in p.roots():
            if p.node_t[r] > _T_TOL:
                continue
            resid = abs(outflow[r] * p.node_x[r] - bary[r])
            worst = max(worst, resid)
            if resid > barycenter_tol:
                passed = False
                witness = (f"root {int(r)}: |phi*x - tip barycenter| = "
                           f"{resid:.3e} > {barycenter_tol:.1e}")
        results["barycenter"] = CheckResult(passed, witness,
                                            {"max_residual": worst})

    if "three_intervals" in wanted:
        passed, witness = True, None
        if windows is None:
            windows = [(lo[n], hi[n]) for n in range(p.n_nodes)
                       if hi[n] > lo[n] and p.node_t[n] < p.T - _T_TOL]
        tip_pos = p.node_x[p.tip_nodes]
        sample_ts = node_times if node_times.size else np.array([p.T / 2])
        for (ja, jb) in windows:
            length = jb - ja
            inside = [int(n) for n, x in zip(p.tip_nodes, tip_pos)
                      if ja - 1e-12 <= x <= jb + 1e-12]
            if not inside:
                continue
            for t in sample_ts:
                pos = np.asarray([_position_at(p, n, float(t)) for n in inside])
                if _greedy_interval_count(pos, length + 1e-12) > 3:
                    passed = False
                    witness = (f"window [{ja:.6g},{jb:.6g}] splits into more "
                               f"than three intervals at t={t:.6g}")
                    break
            if not passed:
                break
        results["three_intervals"] = CheckResult(passed, witness)

    if "equipartition" in wanted:
        perim, ekin = internal_energy(p, 0.0, p.T)
        intensity = (perim + ekin) / p.T
        cuts = np.unique(np.concatenate([[0.0, p.T], node_times]))
        lams, widths = [], []
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            pp, ee = internal_energy(p, float(t0), float(t1))
            lams.append((pp - ee) / (t1 - t0))
            widths.append(t1 - t0)
        lams = np.asarray(lams)
        mean = float(np.sum(lams * np.asarray(widths)) / p.T)
        residual = float(np.max(np.abs(lams - mean))) if lams.size else 0.0
        results["equipartition"] = CheckResult(
            residual <= equipartition_tol * max(intensity, 1e-300),
            None if residual <= equipartition_tol * max(intensity, 1e-300)
            else f"Lambda deviates by {residual:.3e} vs budget "
                 f"{equipartition_tol * intensity:.3e}",
            {"residual": residual, "intensity": intensity, "lambda_mean": mean})

    return ValidationReport(results)


def _position_at(p: IrrigationPattern, node: int, t: float) -> float:
    """Position at time t of the trajectory through `node` (walking ancestors)."""
    cur = int(node)
    while True:
        e = p.parent_edge_of(cur)
        if e is None:
            return float(p.node_x[cur])
        par = int(p.edge_parent[e])
        t0, t1 = p.node_t[par], p.node_t[cur]
        if t >= t0:
            if t >= t1:
                return float(p.node_x[cur])
            frac = (t - t0) / (t1 - t0)
            return float(p.node_x[par] + frac * (p.node_x[cur] - p.node_x[par]))
        cur = par
