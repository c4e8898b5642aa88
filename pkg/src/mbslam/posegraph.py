"""Multi-body pose graph: one camera chain plus one chain per vehicle track.

Nodes hold world-frame poses. An edge from A to B carries a measurement
``T_B^A`` and a 6x6 information matrix, and its residual is
``log(Z^-1 A^-1 B)``. Node updates are right-multiplicative,
``T <- T exp(delta)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import se3
from .errors import DisconnectedGraphError, MissingLoopElementError, ParseError
from .se3 import Pose

log = logging.getLogger(__name__)

CAMERA = "camera"
VEHICLE = "vehicle"


class NodeId(NamedTuple):
    kind: str
    track: int
    frame: int

    def __str__(self):
        return f"c{self.frame}" if self.kind == CAMERA else f"v{self.track}.{self.frame}"


def camera_node(frame: int) -> NodeId:
    return NodeId(CAMERA, -1, int(frame))


def vehicle_node(track: int, frame: int) -> NodeId:
    return NodeId(VEHICLE, int(track), int(frame))


class Category(str, Enum):
    CC = "CC"
    CV = "CV"
    VV = "VV"


ALL_CATEGORIES = frozenset(Category)


@dataclass(frozen=True, eq=False)
class GraphEdge:
    source: NodeId
    target: NodeId
    measurement: Pose
    category: Category
    information: np.ndarray = field(default_factory=lambda: np.eye(6))
    depth: float = math.nan  # vehicle depth used for confidence, metres

    def __post_init__(self):
        info = np.array(self.information, dtype=float)
        if info.shape != (6, 6):
            raise ValueError("information must be 6x6")
        if not np.allclose(info, info.T, atol=1e-12, rtol=0):
            raise ValueError("information must be symmetric")
        if np.linalg.eigvalsh(info).min() < -1e-12 * max(1.0, np.abs(info).max()):
            raise ValueError("information must be positive semidefinite")
        info.setflags(write=False)
        object.__setattr__(self, "information", info)
        expected = {
            Category.CC: (CAMERA, CAMERA),
            Category.CV: (CAMERA, VEHICLE),
            Category.VV: (VEHICLE, VEHICLE),
        }[Category(self.category)]
        object.__setattr__(self, "category", Category(self.category))
        if (self.source.kind, self.target.kind) != expected:
            raise ValueError(f"{self.category.value} edge cannot join {self.source} and {self.target}")
        if self.category is Category.CV and self.source.frame != self.target.frame:
            raise ValueError("CV edges join a camera and a vehicle in the same frame")
        if self.category is Category.VV and self.source.track != self.target.track:
            raise ValueError("VV edges stay within one track")
        if self.category in (Category.CC, Category.VV) and self.target.frame != self.source.frame + 1:
            raise ValueError(f"{self.category.value} edges join consecutive frames")

    @property
    def key(self) -> tuple[NodeId, NodeId]:
        return self.source, self.target


@dataclass(frozen=True)
class ConfidenceConfig:
    lambda_cc: float = 1e6
    lambda_cv_near: float = 10.0
    lambda_cv_far: float = 1.0
    lambda_vv_near: float = 1.0
    lambda_vv_far: float = 10.0
    near_far_depth: float = 45.0

    def __post_init__(self):
        for name in ("lambda_cc", "lambda_cv_near", "lambda_cv_far", "lambda_vv_near", "lambda_vv_far"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.near_far_depth > 0:
            raise ValueError("near_far_depth must be positive")


@dataclass(eq=False)
class MultiPoseGraph:
    """Node estimates keyed by :class:`NodeId` plus the edge list.

    ``frozen`` nodes are held fixed by the optimizer in addition to the
    anchor; ``flagged`` records nodes frozen because edge removal cut them
    off from the anchor.
    """

    nodes: dict[NodeId, Pose]
    edges: list[GraphEdge]
    anchor: NodeId
    frozen: frozenset = frozenset()
    flagged: frozenset = frozenset()

    def __post_init__(self):
        if self.anchor not in self.nodes:
            raise ValueError(f"anchor {self.anchor} is not a node")
        seen = set()
        for e in self.edges:
            for n in e.key:
                if n not in self.nodes:
                    raise ValueError(f"edge endpoint {n} is not a node")
            if e.key in seen:
                raise ValueError(f"duplicate edge {e.source} -> {e.target}")
            seen.add(e.key)

    def edge(self, source: NodeId, target: NodeId) -> GraphEdge:
        for e in self.edges:
            if e.key == (source, target):
                return e
        raise MissingLoopElementError(f"no edge {source} -> {target}")

    def counts(self) -> dict[str, int]:
        out = {"camera_nodes": 0, "vehicle_nodes": 0, "CC": 0, "CV": 0, "VV": 0}
        for n in self.nodes:
            out["camera_nodes" if n.kind == CAMERA else "vehicle_nodes"] += 1
        for e in self.edges:
            out[e.category.value] += 1
        return out

    def with_estimates(self, estimates: Mapping[NodeId, Pose]) -> "MultiPoseGraph":
        nodes = {n: estimates.get(n, p) for n, p in self.nodes.items()}
        return replace(self, nodes=nodes)

    def trajectory(self, track: int | None = None) -> dict[int, Pose]:
        """``{frame: pose}`` for the camera (``track=None``) or one vehicle track."""
        kind = CAMERA if track is None else VEHICLE
        tid = -1 if track is None else track
        return {n.frame: p for n, p in self.nodes.items() if n.kind == kind and n.track == tid}

    def tracks(self) -> list[int]:
        return sorted({n.track for n in self.nodes if n.kind == VEHICLE})


# Residuals ------------------------------------------------------------------


def edge_error(measurement: Pose, a: Pose, b: Pose) -> Pose:
    return se3.inverse(measurement) @ se3.inverse(a) @ b


def _residual_rt(Rz, tz, Ra, ta, Rb, tb) -> np.ndarray:
    # log(Z^-1 A^-1 B) on raw arrays; the optimizer's hot path
    RE = Rz.T @ (Ra.T @ Rb)
    tE = Rz.T @ (Ra.T @ (tb - ta) - tz)
    w = se3.so3_log(RE)
    return np.concatenate([w, se3.so3_left_jacobian_inv(w) @ tE])


def edge_residual(edge: GraphEdge, estimates: Mapping[NodeId, Pose]) -> np.ndarray:
    a, b, z = estimates[edge.source], estimates[edge.target], edge.measurement
    return _residual_rt(z.R, z.t, a.R, a.t, b.R, b.t)


def edge_jacobians(measurement: Pose, a: Pose, b: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual and its derivatives with respect to right perturbations of ``a`` and ``b``."""
    r = _residual_rt(measurement.R, measurement.t, a.R, a.t, b.R, b.t)
    Jr_inv = se3.right_jacobian_inv(r)
    # adjoint of B^-1 A
    R = b.R.T @ a.R
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = R
    Ad[3:, 3:] = R
    Ad[3:, :3] = se3.hat(b.R.T @ (a.t - b.t)) @ R
    return r, -Jr_inv @ Ad, Jr_inv


def edge_cost(edge: GraphEdge, estimates: Mapping[NodeId, Pose]) -> float:
    r = edge_residual(edge, estimates)
    return float(r @ edge.information @ r)


def total_cost(graph: MultiPoseGraph, estimates: Mapping[NodeId, Pose] | None = None) -> float:
    est = graph.nodes if estimates is None else estimates
    return math.fsum(edge_cost(e, est) for e in graph.edges)


def cycle_residual(graph: MultiPoseGraph, frame_prev: int, frame_curr: int, track: int) -> np.ndarray:
    """Loop closure error of the two-frame camera/vehicle cycle, from measurements only.

    Composes ``T_c1^c0 T_v1^c1 T_v0^v1 T_c0^v0``; this is the identity when
    the four measurements agree.
    """
    c0, c1 = camera_node(frame_prev), camera_node(frame_curr)
    v0, v1 = vehicle_node(track, frame_prev), vehicle_node(track, frame_curr)
    cc = graph.edge(c0, c1).measurement
    cv1 = graph.edge(c1, v1).measurement
    vv = graph.edge(v0, v1).measurement
    cv0 = graph.edge(c0, v0).measurement
    return se3.log(cc @ cv1 @ se3.inverse(vv) @ se3.inverse(cv0))


def loops(graph: MultiPoseGraph) -> list[tuple[int, int, int]]:
    """``(frame_prev, frame_curr, track)`` for every complete two-frame loop."""
    keys = {e.key for e in graph.edges}
    out = []
    for e in graph.edges:
        if e.category is not Category.VV:
            continue
        t, f0, f1 = e.source.track, e.source.frame, e.target.frame
        c0, c1 = camera_node(f0), camera_node(f1)
        if {(c0, c1), (c1, e.target), (c0, e.source)} <= keys:
            out.append((f0, f1, t))
    return sorted(out)


# Confidence -----------------------------------------------------------------


def scale_information(base: np.ndarray, lam: float) -> np.ndarray:
    if not lam > 0:
        raise ValueError("confidence scale must be positive")
    return lam * np.asarray(base, dtype=float)


def confidence_for(category: Category, depth: float, cfg: ConfidenceConfig) -> float:
    category = Category(category)
    if category is Category.CC:
        return cfg.lambda_cc
    near = depth < cfg.near_far_depth
    if category is Category.CV:
        return cfg.lambda_cv_near if near else cfg.lambda_cv_far
    return cfg.lambda_vv_near if near else cfg.lambda_vv_far


def assign_confidence(edge: GraphEdge, depth: float, cfg: ConfidenceConfig, base: np.ndarray | None = None) -> GraphEdge:
    base = np.eye(6) if base is None else base
    lam = confidence_for(edge.category, depth, cfg)
    return replace(edge, information=scale_information(base, lam), depth=float(depth))


# Connectivity ---------------------------------------------------------------


def _components(nodes: Iterable[NodeId], edges: Iterable[GraphEdge]) -> list[list[NodeId]]:
    nodes = list(nodes)
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        ra, rb = find(e.source), find(e.target)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[NodeId, list[NodeId]] = {}
    for n in nodes:
        groups.setdefault(find(n), []).append(n)
    return [sorted(g) for g in groups.values()]


def _gauge_nodes(graph: MultiPoseGraph) -> tuple[frozenset, frozenset]:
    """Nodes to hold fixed, and the subset that are cut off from the anchor."""
    fixed = set(graph.frozen) | {graph.anchor}
    cut = set()
    for comp in _components(graph.nodes, graph.edges):
        if graph.anchor in comp:
            continue
        cut.update(comp)
        if not fixed.intersection(comp):
            fixed.add(comp[0])
    return frozenset(fixed), frozenset(cut)


def ablate_edges(graph: MultiPoseGraph, keep: Iterable, *, strict: bool = False) -> MultiPoseGraph:
    """Copy of ``graph`` holding only edges in the ``keep`` categories.

    Nodes that lose their connection to the anchor are flagged. A node left
    with no edges is frozen; any other cut-off component is anchored at its
    earliest node so its internal edges can still be optimized. With
    ``strict`` a disconnection raises :class:`DisconnectedGraphError`.
    """
    keep = frozenset(Category(k) for k in keep)
    if not keep:
        raise ValueError("keep at least one edge category")
    edges = [e for e in graph.edges if e.category in keep]
    comps = _components(graph.nodes, edges)
    cut = [n for comp in comps if graph.anchor not in comp for n in comp]
    if cut and strict:
        raise DisconnectedGraphError(f"{len(cut)} nodes disconnected from {graph.anchor}", cut)
    frozen = set(graph.frozen)
    for comp in comps:
        if graph.anchor in comp:
            continue
        frozen.add(comp[0])
    return MultiPoseGraph(dict(graph.nodes), edges, graph.anchor, frozenset(frozen), frozenset(graph.flagged) | frozenset(cut))


# Optimizer ------------------------------------------------------------------

DAMPING_INIT = 1e-4
DAMPING_MIN = 1e-9
DAMPING_MAX = 1e6
RELATIVE_TOL = 1e-9
ABSOLUTE_TOL = 1e-18


@dataclass
class OptimizationReport:
    status: str  # converged | max_iterations | stalled | singular
    iterations: int
    costs: list[float]  # cost after each accepted step, starting with the initial cost
    residuals: dict[tuple[NodeId, NodeId], np.ndarray]

    @property
    def initial_cost(self) -> float:
        return self.costs[0]

    @property
    def final_cost(self) -> float:
        return self.costs[-1]


@dataclass
class OptimizationResult:
    graph: MultiPoseGraph
    report: OptimizationReport

    @property
    def estimates(self) -> dict[NodeId, Pose]:
        return self.graph.nodes


_BLOCK_ROWS = np.repeat(np.arange(6), 6)
_BLOCK_COLS = np.tile(np.arange(6), 6)


def _linearize(graph: MultiPoseGraph, est, index: dict[NodeId, int]):
    n = 6 * len(index)
    rows, cols, vals = [], [], []
    g = np.zeros(n)
    cost = 0.0
    for e in graph.edges:
        r, Ja, Jb = edge_jacobians(e.measurement, est[e.source], est[e.target])
        W = e.information
        cost += float(r @ W @ r)
        blocks = [(index.get(e.source), Ja), (index.get(e.target), Jb)]
        for i, Ji in blocks:
            if i is None:
                continue
            g[6 * i : 6 * i + 6] += Ji.T @ (W @ r)
            for j, Jj in blocks:
                if j is None:
                    continue
                rows.append(_BLOCK_ROWS + 6 * i)
                cols.append(_BLOCK_COLS + 6 * j)
                vals.append((Ji.T @ W @ Jj).ravel())
    if rows:
        H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsc()
    else:
        H = sp.csc_matrix((n, n))
    return H, g, cost


def _retract(est, index, delta) -> dict[NodeId, Pose]:
    out = dict(est)
    for node, i in index.items():
        out[node] = est[node] @ se3.exp(delta[6 * i : 6 * i + 6])
    return out


def _safe_cost(graph, est) -> float:
    try:
        return total_cost(graph, est)
    except ValueError:  # degenerate rotation in a trial step
        return math.inf


def optimize(graph: MultiPoseGraph, max_iterations: int = 100) -> OptimizationResult:
    """Levenberg-Marquardt on the sum of weighted squared edge residuals.

    Only cost-decreasing steps are accepted, so the returned cost never
    exceeds the initial one. The anchor and frozen nodes keep their exact
    input poses. Every linear solve counts towards ``max_iterations``.
    """
    if max_iterations < 0:
        raise ValueError("max_iterations must be non-negative")
    fixed, cut = _gauge_nodes(graph)
    if not cut <= graph.flagged:
        raise DisconnectedGraphError(f"{len(cut)} nodes are not connected to the anchor {graph.anchor}", sorted(cut))
    free = [n for n in graph.nodes if n not in fixed]
    index = {n: i for i, n in enumerate(free)}

    est = dict(graph.nodes)
    H, g, cost = _linearize(graph, est, index)
    costs = [cost]
    mu = DAMPING_INIT
    status = "max_iterations"
    iterations = 0
    if cost <= ABSOLUTE_TOL or not free:
        status = "converged"
    else:
        eye = sp.identity(H.shape[0], format="csc")
        while iterations < max_iterations:
            iterations += 1
            try:
                with np.errstate(all="ignore"):
                    delta = spla.spsolve(H + mu * eye, -g)
                ok = np.all(np.isfinite(delta))
            except (RuntimeError, ValueError):
                ok = False
            if not ok:
                if mu >= DAMPING_MAX:
                    status = "singular"
                    break
                mu = min(mu * 10.0, DAMPING_MAX)
                continue
            trial = _retract(est, index, delta)
            new_cost = _safe_cost(graph, trial)
            if new_cost < cost:
                rel = (cost - new_cost) / cost
                est = trial
                mu = max(mu / 10.0, DAMPING_MIN)
                H, g, cost = _linearize(graph, est, index)
                costs.append(cost)
                if rel < RELATIVE_TOL or cost <= ABSOLUTE_TOL:
                    status = "converged"
                    break
            else:
                if mu >= DAMPING_MAX:
                    status = "stalled"
                    break
                mu = min(mu * 10.0, DAMPING_MAX)
    residuals = {e.key: edge_residual(e, est) for e in graph.edges}
    log.debug("optimize: %s after %d iterations, cost %.6g -> %.6g", status, iterations, costs[0], costs[-1])
    return OptimizationResult(graph.with_estimates(est), OptimizationReport(status, iterations, costs, residuals))


# Text dump ------------------------------------------------------------------


def _node_token(n: NodeId) -> str:
    return f"{n.kind} {n.track} {n.frame}"


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def dump_graph(graph: MultiPoseGraph) -> str:
    """Text snapshot of a graph.

    ``anchor <kind> <track> <frame>``,
    ``node <kind> <track> <frame> <frozen> <12 pose floats>``, and
    ``edge <cat> <source kind track frame> <target kind track frame> <depth> <12 floats> <36 information floats>``.
    Camera nodes use track ``-1``.
    """
    from .formats import pose_to_row

    lines = [f"anchor {_node_token(graph.anchor)}"]
    for n, p in graph.nodes.items():
        lines.append(f"node {_node_token(n)} {int(n in graph.frozen)} {int(n in graph.flagged)} {_fmt(pose_to_row(p))}")
    for e in graph.edges:
        lines.append(
            f"edge {e.category.value} {_node_token(e.source)} {_node_token(e.target)} {_fmt([e.depth])} "
            f"{_fmt(pose_to_row(e.measurement))} {_fmt(e.information.ravel())}"
        )
    return "\n".join(lines) + "\n"


def parse_graph(text: str, path="<graph>") -> MultiPoseGraph:
    from .formats import row_to_pose

    def node(tokens, lineno):
        kind, track, frame = tokens
        if kind not in (CAMERA, VEHICLE):
            raise ParseError(path, lineno, f"unknown node kind {kind!r}")
        try:
            return NodeId(kind, int(track), int(frame))
        except ValueError:
            raise ParseError(path, lineno, "node track and frame must be integers") from None

    anchor = None
    nodes: dict[NodeId, Pose] = {}
    frozen, flagged = set(), set()
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        try:
            if tok[0] == "anchor" and len(tok) == 4:
                anchor = node(tok[1:4], lineno)
            elif tok[0] == "node" and len(tok) == 18:
                n = node(tok[1:4], lineno)
                if tok[4] == "1":
                    frozen.add(n)
                if tok[5] == "1":
                    flagged.add(n)
                nodes[n] = row_to_pose([float(v) for v in tok[6:]])
            elif tok[0] == "edge" and len(tok) == 57:
                src, dst = node(tok[2:5], lineno), node(tok[5:8], lineno)
                vals = [float(v) for v in tok[8:]]
                edges.append(GraphEdge(src, dst, row_to_pose(vals[1:13]), Category(tok[1]),
                                       np.array(vals[13:]).reshape(6, 6), vals[0]))
            else:
                raise ParseError(path, lineno, f"unrecognized record {tok[0]!r} with {len(tok)} fields")
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    if anchor is None:
        raise ParseError(path, 0, "missing anchor record")
    return MultiPoseGraph(nodes, edges, anchor, frozenset(frozen), frozenset(flagged))
