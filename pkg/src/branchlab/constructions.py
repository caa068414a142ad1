"""Deterministic competitor constructions, each with its predicted energy bound.

The refining constructions discretize displacement interpolants on dyadic
cell grids at geometrically spaced times.  Mass is routed between levels by
monotone (north-west-corner) plans, which are sparse and optimal in 1D; each
plan pair becomes its own node so the result is always a forest, with
coincident parallel filaments merged only at the measure level (the perimeter
integrand already counts distinct positions, not edges).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidDelta, InvalidMass, NotMonotone, OverlappingBlocks
from .irrigation import (
    IrrigationPattern,
    internal_energy,
    make_pattern,
    validate,
)
from .measures import AtomicMeasure
from .spectral import equispaced_dirac_norm_sq

_MIN_CELL = 1e-6


@dataclass
class ConstructionSpec:
    """Declarative recipe: kind plus kind-specific parameters (seedless)."""

    kind: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_json(cls, data: dict) -> "ConstructionSpec":
        data = dict(data)
        return cls(kind=data.pop("kind"), params=data)


@dataclass(frozen=True)
class ConstructionResult:
    pattern: IrrigationPattern
    predicted: dict
    measured: dict


# ---------------------------------------------------------------------------
# fragment profiles and exact quantile machinery
#
# A profile is a sorted list of (lo, hi, mass) fragments, lo == hi for atoms.


def _profile_total(frags) -> float:
    return float(sum(f[2] for f in frags))


def _profile_bary(frags) -> float:
    return float(sum(0.5 * (a + b) * m for a, b, m in frags)) / _profile_total(frags)


def _quantile_segments(fu, fv):
    """Pair two profiles along quantiles: [(mass, (ua, ub), (va, vb)), ...]."""
    iu = iv = 0
    qu = qv = 0.0  # consumed mass inside the current fragment
    out = []
    while iu < len(fu) and iv < len(fv):
        au, bu, mu = fu[iu]
        av, bv, mv = fv[iv]
        take = min(mu - qu, mv - qv)
        if take > 0.0:
            ua = au + (bu - au) * (qu / mu)
            ub = au + (bu - au) * ((qu + take) / mu)
            va = av + (bv - av) * (qv / mv)
            vb = av + (bv - av) * ((qv + take) / mv)
            out.append((take, (ua, ub), (va, vb)))
        qu += take
        qv += take
        if mu - qu <= 1e-15 * mu:
            iu += 1
            qu = 0.0
        if mv - qv <= 1e-15 * mv:
            iv += 1
            qv = 0.0
    return out


def _segments_cost_sq(segments) -> float:
    """Exact squared transport cost of quantile-aligned uniform segments."""
    total = 0.0
    for m, (ua, ub), (va, vb) in segments:
        a = va - ua
        b = vb - ub
        total += m * (a * a + a * b + b * b) / 3.0
    return total


def _interpolant_profile(segments, lam: float):
    frags = [((1 - lam) * ua + lam * va, (1 - lam) * ub + lam * vb, m)
             for m, (ua, ub), (va, vb) in segments]
    frags.sort(key=lambda f: (f[0], f[1]))
    return frags


def _discretize_profile(frags, lo: float, width: float, n_cells: int):
    """Cell masses of a profile on the grid [lo, lo + width) with n_cells cells."""
    cell = width / n_cells
    masses = np.zeros(n_cells)
    for a, b, m in frags:
        if b <= a:
            j = min(max(int((a - lo) / cell), 0), n_cells - 1)
            masses[j] += m
            continue
        dens = m / (b - a)
        j0 = min(max(int((a - lo) / cell), 0), n_cells - 1)
        j1 = min(max(int((b - lo) / cell), 0), n_cells - 1)
        for j in range(j0, j1 + 1):
            overlap = min(b, lo + (j + 1) * cell) - max(a, lo + j * cell)
            if overlap > 0:
                masses[j] += dens * overlap
    return masses


class _Builder:
    def __init__(self):
        self.nodes: list[tuple[float, float]] = []
        self.edges: list[tuple[int, int, float]] = []
        self.tips: list[tuple[int, float]] = []

    def node(self, t: float, x: float) -> int:
        self.nodes.append((float(t), float(x)))
        return len(self.nodes) - 1

    def edge(self, parent: int, child: int, mass: float):
        self.edges.append((parent, child, float(mass)))

    def tip(self, node: int, width: float = 0.0):
        self.tips.append((node, float(width)))


def _advance(builder: _Builder, providers, t_next: float, target_pos,
             target_mass):
    """Route provider atoms to target atoms by the monotone sparse plan.

    providers: (node_id, mass) in quantile order.  One node is created per
    plan pair, so in-degree stays one and the forest property is preserved.
    Target masses are rescaled by one global factor to the provider total
    (a few-ulp correction absorbing discretization roundoff).  Returns
    (new_providers, nodes_per_target).
    """
    provider_total = float(sum(m for _, m in providers))
    target_total = float(np.sum(np.asarray(target_mass, dtype=float)))
    if target_total <= 0.0 or provider_total <= 0.0:
        raise InvalidMass("cannot route zero mass")
    scale = provider_total / target_total
    slack = 1e-14 * provider_total
    new_providers = []
    per_target = []
    i = 0
    avail = providers[0][1]
    for pos, raw_need in zip(target_pos, target_mass):
        need = float(raw_need) * scale
        made = []
        while need > slack:
            if i >= len(providers):
                if need <= 1e-9 * provider_total:
                    break
                raise InvalidMass("provider mass exhausted before targets")
            node_id = providers[i][0]
            take = min(avail, need)
            child = builder.node(t_next, float(pos))
            builder.edge(node_id, child, take)
            new_providers.append((child, take))
            made.append(child)
            avail -= take
            need -= take
            if avail <= slack:
                i += 1
                avail = providers[i][1] if i < len(providers) else 0.0
        per_target.append(made)
    return new_providers, per_target


def _local_branch(builder: _Builder, sources, target_frags, t0: float,
                  eps: float, delta: float, depth: int):
    """Refining route from source atoms at t0 to a fragment profile at t0+eps.

    sources: (node_id, position, mass) triples of existing nodes at time t0,
    already sorted by position.  The dyadic scheme runs in a frame where the
    source barycenter is slid linearly onto the target barycenter; level
    slices are cell-grid discretizations of the displacement interpolant.
    Terminal fragments become tips (blocks when they carry width).  Returns
    the exact squared transport cost between the two profiles.
    """
    if not 0.25 < delta < 0.5:
        raise InvalidDelta(f"delta={delta} outside (1/4, 1/2)")
    target_frags = sorted(f for f in target_frags if f[2] > 0.0)
    src_frags = [(x, x, m) for _, x, m in sources]
    if any(src_frags[i][0] > src_frags[i + 1][0]
           for i in range(len(src_frags) - 1)):
        raise NotMonotone("local branch sources must be sorted by position")
    seg = _quantile_segments(src_frags, target_frags)
    w2 = _segments_cost_sq(seg)

    shift = _profile_bary(src_frags) - _profile_bary(target_frags)

    def finish(providers):
        t_pos = [0.5 * (a + b) for a, b, _ in target_frags]
        t_mass = [m for _, _, m in target_frags]
        _, per_target = _advance(builder, providers, t0 + eps, t_pos, t_mass)
        for made, (a, b, _) in zip(per_target, target_frags):
            for node in made:
                builder.tip(node, b - a)

    providers = [(n, m) for n, _, m in sources]

    # straight-frame geometry: sources translated onto the target barycenter
    seg_straight = [(m, (ua - shift, ub - shift), v) for m, (ua, ub), v in seg]
    lo = min(min(ua for _, (ua, _), _ in seg_straight),
             min(va for _, _, (va, _) in seg_straight))
    hi = max(max(ub for _, (_, ub), _ in seg_straight),
             max(vb for _, _, (_, vb) in seg_straight))
    width = hi - lo
    if width <= _MIN_CELL or depth < 1:
        finish(providers)
        return w2

    total = _profile_total(src_frags)

    def level(providers, k: int, t_local: float):
        n_cells = 2 ** k
        masses = _discretize_profile(
            _interpolant_profile(seg_straight, t_local / eps),
            lo, width, n_cells)
        centers = lo + (np.arange(n_cells) + 0.5) * (width / n_cells)
        keep = masses > 1e-14 * total
        pos = centers[keep] + shift * (1.0 - t_local / eps)
        new_providers, _ = _advance(builder, providers, t0 + t_local,
                                    pos, masses[keep])
        return new_providers

    d_eff = max(k for k in range(depth + 1) if width / 2 ** k >= _MIN_CELL)

    # down side: refinement collapsing toward the mid-time pinch; skipped for
    # a lone source atom (the interpolant stays atomic on the way down)
    if len(sources) > 1:
        for k in range(d_eff, -1, -1):
            providers = level(providers, k, delta ** k * eps / 2.0)
    else:
        providers = level(providers, 0, eps / 2.0)
    # up side: geometric refinement toward the target profile
    for k in range(1, d_eff + 1):
        providers = level(providers, k, eps * (1.0 - delta ** k / 2.0))
    finish(providers)
    return w2


def dyadic_branch(source: AtomicMeasure, target_center: float,
                  target_radius: float, eps: float, delta: float = 0.4,
                  depth: int = 10) -> ConstructionResult:
    """Refining branch from a single atom onto a uniform interval.

    Returns the fragment as a non-symmetric pattern on [0, eps], the measured
    perimeter/kinetic split, and the reference bound terms W^2/eps,
    radius^2 * mass / eps and eps (the flat d=1 perimeter factor); callers
    fit a single constant against their sum.
    """
    if len(source) != 1:
        raise InvalidMass("dyadic_branch expects a single source atom")
    c = float(source.positions[0])
    phi = float(source.masses[0])
    rho = float(target_radius)
    if rho < 0.0:
        raise InvalidMass("target radius must be nonnegative")
    builder = _Builder()
    root = builder.node(0.0, c)
    target = [(target_center - rho, target_center + rho, phi)]
    w2 = _local_branch(builder, [(root, c, phi)], target, 0.0, eps, delta,
                       depth)
    pattern = make_pattern(eps, builder.nodes, builder.edges, builder.tips,
                           symmetric=False)
    perim, ekin = internal_energy(pattern, 0.0, eps)
    predicted = {"w2_over_eps": w2 / eps, "spread": rho * rho * phi / eps,
                 "perimeter": eps}
    measured = {"perimeter": perim, "kinetic": ekin, "w2": w2,
                "internal": perim + ekin}
    return ConstructionResult(pattern, predicted, measured)


def containment_hull(source_pos: float, target_center: float,
                     target_radius: float, eps: float, t: float):
    """Sliding hull (1-t/eps) B_r(source) + (t/eps) B_r(target) at time t."""
    mid = (1.0 - t / eps) * source_pos + (t / eps) * target_center
    return mid - target_radius, mid + target_radius


def perimeter_profile(p: IrrigationPattern, times):
    """(t0, t1, P/(t1-t0)) over consecutive windows; used by level checks."""
    out = []
    for t0, t1 in zip(times[:-1], times[1:]):
        perim, _ = internal_energy(p, float(t0), float(t1))
        out.append((float(t0), float(t1), perim / (t1 - t0)))
    return out


# ---------------------------------------------------------------------------
# grid constructions


def uniform_grid(N: int, r: float, T: float, depth: int = 6,
                 delta: float = 0.4,
                 s: Optional[float] = None) -> ConstructionResult:
    """N trunks at cell centers, refined near the boundary into width-r blocks.

    The refinement occupies the top half [T/2, T].  Predicted bound terms are
    (T*N, r^2/T, 1/(N r^{1-2s})); the boundary term needs s and vanishes when
    the tips tile the torus exactly (r == 1/N).
    """
    if r > 1.0 / N + 1e-12:
        raise OverlappingBlocks(f"r={r} exceeds cell width 1/{N}")
    builder = _Builder()
    eps_b = T / 2.0
    for j in range(N):
        x = (j + 0.5) / N
        root = builder.node(0.0, x)
        if depth >= 1 and r > 0:
            mid = builder.node(T - eps_b, x)
            builder.edge(root, mid, 1.0 / N)
            _local_branch(builder, [(mid, x, 1.0 / N)],
                          [(x - r / 2.0, x + r / 2.0, 1.0 / N)],
                          T - eps_b, eps_b, delta, depth)
        else:
            leaf = builder.node(T, x)
            builder.edge(root, leaf, 1.0 / N)
            builder.tip(leaf, r)
    pattern = make_pattern(T, builder.nodes, builder.edges, builder.tips,
                           symmetric=True)
    predicted = {"trunk": T * N, "transport": r * r / T}
    if s is not None:
        predicted["boundary"] = (0.0 if abs(r - 1.0 / N) <= 1e-12
                                 else 1.0 / (N * r ** (1.0 - 2.0 * s)))
    perim, ekin = internal_energy(pattern, 0.0, T)
    return ConstructionResult(pattern, predicted,
                              {"perimeter": perim, "kinetic": ekin})


def dirac_grid(N: int, T: float, s: Optional[float] = None) -> ConstructionResult:
    """N static equispaced branches with atomic tips of weight 1/N."""
    builder = _Builder()
    for j in range(N):
        x = (j + 0.5) / N
        root = builder.node(0.0, x)
        leaf = builder.node(T, x)
        builder.edge(root, leaf, 1.0 / N)
        builder.tip(leaf, 0.0)
    pattern = make_pattern(T, builder.nodes, builder.edges, builder.tips,
                           symmetric=True)
    predicted = {"trunk": 2.0 * T * N}
    if s is not None and s > 0.5:
        predicted["boundary"] = 2.0 * equispaced_dirac_norm_sq(N, s)
    return ConstructionResult(pattern, predicted, {})


# ---------------------------------------------------------------------------
# pattern surgery shared by the competitors


def _split_at(p: IrrigationPattern, t_cut: float):
    """Split every edge crossing t_cut by inserting a node there.

    Returns builder lists (nodes, edges, tips) where the first p.n_nodes node
    ids coincide with the original ones, plus a map original-crossing-edge ->
    inserted node id.
    """
    nodes = [(float(t), float(x)) for t, x in zip(p.node_t, p.node_x)]
    edges = []
    tips = [(int(n), float(w)) for n, w in zip(p.tip_nodes, p.tip_widths)]
    cut_nodes = {}
    for i in range(p.n_edges):
        a, b = int(p.edge_parent[i]), int(p.edge_child[i])
        ta, tb = p.node_t[a], p.node_t[b]
        m = float(p.edge_mass[i])
        if ta < t_cut < tb:
            frac = (t_cut - ta) / (tb - ta)
            x_cut = p.node_x[a] + frac * (p.node_x[b] - p.node_x[a])
            nodes.append((float(t_cut), float(x_cut)))
            mid = len(nodes) - 1
            cut_nodes[i] = mid
            edges.append((a, mid, m))
            edges.append((mid, b, m))
        else:
            edges.append((a, b, m))
    return nodes, edges, tips, cut_nodes


def _ancestor_at(p: IrrigationPattern, node: int, t: float):
    """(position, carrying edge) of the trajectory through `node` at time t.

    The returned edge satisfies t in [t_parent, t_child); when the path has a
    node exactly at t the edge *leaving* it is returned.
    """
    cur = int(node)
    while True:
        e = p.parent_edge_of(cur)
        if e is None:
            return float(p.node_x[cur]), None
        par = int(p.edge_parent[e])
        t0, t1 = p.node_t[par], p.node_t[cur]
        if t >= t0:
            frac = (t - t0) / (t1 - t0) if t1 > t0 else 0.0
            return float(p.node_x[par]
                         + frac * (p.node_x[cur] - p.node_x[par])), e
        cur = par


def shrink_competitor(p: IrrigationPattern, eps: float) -> IrrigationPattern:
    """Halve the boundary-layer displacements: a trajectory on (T-eps, T]
    moves to the midpoint of its position at T-eps and its original position.

    Topology and node times are untouched, so the perimeter is preserved
    exactly; velocities halve, so the kinetic energy on (T-eps, T) scales by
    exactly 1/4; tips land on the half-way displacement interpolant (block
    widths halve with the trajectory map).
    """
    t_cut = p.T - eps
    nodes, edges, tips, cut_nodes = _split_at(p, t_cut)

    children = {}
    for parent, child, _ in edges:
        children.setdefault(parent, []).append(child)

    anchor = {}

    def propagate(node_id, anc):
        stack = [node_id]
        while stack:
            cur = stack.pop()
            anchor[cur] = anc
            stack.extend(children.get(cur, ()))

    for mid in cut_nodes.values():
        for ch in children.get(mid, ()):
            propagate(ch, nodes[mid][1])
    for node_id in range(p.n_nodes):
        t, x = nodes[node_id]
        if t > t_cut + 1e-15 and node_id not in anchor:
            anc, _ = _ancestor_at(p, node_id, t_cut)
            propagate(node_id, anc)
        elif abs(t - t_cut) <= 1e-15:
            for ch in children.get(node_id, ()):
                if ch not in anchor:
                    propagate(ch, x)

    new_nodes = list(nodes)
    for node_id, anc in anchor.items():
        t, x = nodes[node_id]
        if t > t_cut + 1e-15:
            new_nodes[node_id] = (t, 0.5 * (anc + x))
    new_tips = [(n, w / 2.0) for n, w in tips]
    return make_pattern(p.T, new_nodes, edges, new_tips,
                        symmetric=p.symmetric, origin=p.origin)


def shift_competitor(p: IrrigationPattern, eps: float,
                     eta: float) -> IrrigationPattern:
    """Mix two copies drifting apart by +-eta across the layer (T-eps, T].

    Every branch crossing T-eps splits into equal halves with velocities
    shifted by +-eta/eps, so the terminal measure becomes the symmetric
    two-point mixture and its centered spectrum gains the factor
    cos(2 pi eta k).
    """
    if not eta < 0.5:
        raise InvalidMass("eta must be < 1/2")
    t_cut = p.T - eps
    nodes, edges, tips, _ = _split_at(p, t_cut)
    keep_edges = [(a, b, m) for a, b, m in edges
                  if nodes[b][0] <= t_cut + 1e-15]
    after_edges = [(a, b, m) for a, b, m in edges
                   if nodes[b][0] > t_cut + 1e-15]

    builder_nodes = list(nodes)
    new_edges = list(keep_edges)
    new_tips = []
    for sign in (+1.0, -1.0):
        clone = {}
        for a, b, m in after_edges:
            for node_id in (a, b):
                t, x = nodes[node_id]
                if t <= t_cut + 1e-15:
                    clone[node_id] = node_id
                elif node_id not in clone:
                    builder_nodes.append(
                        (t, x + sign * eta * (t - t_cut) / eps))
                    clone[node_id] = len(builder_nodes) - 1
            new_edges.append((clone[a], clone[b], m / 2.0))
        for n, w in tips:
            new_tips.append((clone[n], w))
    return make_pattern(p.T, builder_nodes, new_edges, new_tips,
                        symmetric=p.symmetric, origin=p.origin)


# ---------------------------------------------------------------------------
# covering competitor


def covering_competitor(p: IrrigationPattern, eps: float, alpha: float,
                        M: float = 1.0, delta: float = 0.4,
                        depth: int = 10) -> ConstructionResult:
    """Rebuild the boundary layer (T-eps, T) by per-interval local branches.

    Greedy Vitali covering of supp(mu_T) at radius r = eps^{2/(2+alpha)}
    (selection skips points within 5r, intervals then grow until they touch
    or reach 5r), a three-interval split of each preimage at T-eps, and one
    refining local branch per piece.  Both end slices are preserved exactly.
    """
    report = validate(p, checks=("monotone_coupling",))
    if not report.passed("monotone_coupling"):
        raise NotMonotone("covering requires an order-preserving pattern")
    t_cut = p.T - eps
    r = eps ** (2.0 / (2.0 + alpha))

    # terminal fragments tagged with their source position at the cut
    masses_in = np.zeros(p.n_nodes)
    np.add.at(masses_in, p.edge_child, p.edge_mass)
    frags = []
    for n, w in zip(p.tip_nodes, p.tip_widths):
        x = float(p.node_x[n])
        frags.append({"lo": x - w / 2.0, "hi": x + w / 2.0,
                      "mass": float(masses_in[n]), "node": int(n)})
    frags.sort(key=lambda f: (f["lo"], f["hi"]))

    # greedy Vitali on the sorted support, then grow to disjoint intervals
    support = sorted({f["lo"] for f in frags} | {f["hi"] for f in frags})
    centers = []
    cursor = -math.inf
    for x in support:
        if x > cursor:
            centers.append(x)
            cursor = x + 5.0 * r
    intervals = []
    for i, c in enumerate(centers):
        left = c - 5.0 * r if i == 0 else max(c - 5.0 * r,
                                              (c + centers[i - 1]) / 2.0)
        right = c + 5.0 * r if i == len(centers) - 1 else min(
            c + 5.0 * r, (c + centers[i + 1]) / 2.0)
        intervals.append((left, right))

    nodes, edges, tips, cut_nodes = _split_at(p, t_cut)
    builder = _Builder()
    builder.nodes = list(nodes)
    builder.edges = [(a, b, m) for a, b, m in edges
                     if nodes[b][0] <= t_cut + 1e-15]

    def source_of(tip_node: int, share: float):
        pos, edge = _ancestor_at(p, tip_node, t_cut)
        if edge is None:
            raise NotMonotone("tip path does not reach the cut")
        if edge in cut_nodes:
            return cut_nodes[edge], pos
        # the path has a node exactly at the cut: the edge starts there
        return int(p.edge_parent[edge]), pos

    total_w2 = 0.0
    n_pieces = 0
    for (ja, jb) in intervals:
        # clip fragments to the interval; straddling blocks split by length
        members = []
        for f in frags:
            lo = max(f["lo"], ja)
            hi = min(f["hi"], jb)
            if hi < lo or (hi == lo and not ja <= f["lo"] <= jb):
                continue
            if f["hi"] > f["lo"]:
                share = f["mass"] * (hi - lo) / (f["hi"] - f["lo"])
            else:
                share = f["mass"]
            if share <= 0.0:
                continue
            members.append({"lo": lo, "hi": hi, "mass": share,
                            "node": f["node"]})
        if not members:
            continue
        length = jb - ja
        # three-interval split of the preimage: greedy clusters of sources
        tagged = []
        for mem in members:
            node_id, pos = source_of(mem["node"], mem["mass"])
            tagged.append((pos, node_id, mem))
        tagged.sort(key=lambda q: (q[0], q[1], q[2]["lo"]))
        groups = []
        for q in tagged:
            if groups and q[0] - groups[-1][0][0] <= length:
                groups[-1].append(q)
            else:
                groups.append([q])
        if len(groups) > 3:
            raise NotMonotone(
                f"preimage of [{ja:.4g},{jb:.4g}] splits into {len(groups)} "
                "intervals")
        for grp in groups:
            sources = [(node_id, pos, mem["mass"])
                       for pos, node_id, mem in grp]
            target = sorted((mem["lo"], mem["hi"], mem["mass"])
                            for _, _, mem in grp)
            total_w2 += _local_branch(builder, sources, target, t_cut, eps,
                                      delta, depth)
            n_pieces += 1

    pattern = make_pattern(p.T, builder.nodes, builder.edges, builder.tips,
                           symmetric=p.symmetric, origin=p.origin)
    perim, ekin = internal_energy(pattern, t_cut, p.T)
    predicted = {"w2_over_eps": total_w2 / eps, "spread": r * r / eps,
                 "count": r ** (-alpha) * eps, "r": r, "pieces": n_pieces}
    measured = {"perimeter": perim, "kinetic": ekin,
                "internal": perim + ekin, "w2": total_w2}
    return ConstructionResult(pattern, predicted, measured)


# ---------------------------------------------------------------------------
# spec-driven dispatch


def build_construction(spec: ConstructionSpec) -> ConstructionResult:
    kind = spec.kind
    params = dict(spec.params)
    if kind == "uniform_grid":
        return uniform_grid(**params)
    if kind == "dirac_grid":
        return dirac_grid(**params)
    if kind == "dyadic_branch":
        pos = float(params.pop("source_pos"))
        mass = float(params.pop("source_mass", 1.0))
        source = AtomicMeasure(np.asarray([pos]), np.asarray([mass]), mass)
        return dyadic_branch(source, **params)
    raise ValueError(f"unknown construction kind {kind!r}")
