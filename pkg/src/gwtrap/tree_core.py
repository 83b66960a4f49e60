"""Weighted rooted ordered trees stored in a breadth-first arena.

A tree holds one bias beta > 1 per edge. The weight of a vertex v is the
product of the biases along the root-to-v path (1 for the root); the weight
of the tree is the sum of the vertex weights. Child order is significant:
it induces the usual lexicographic order on vertices, under which the
breadth-first arena is also sorted level by level.

Trees are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import json
import math
import sys

import numpy as np

VertexId = int

#: Trees deeper than this are rejected at construction. Q**10_000 overflows a
#: double, and subcritical samples never come anywhere near the cap.
DEFAULT_DEPTH_CAP = 10_000


class TreeFormatError(ValueError):
    """A tree document cannot be parsed, or a bias is outside (1, inf)."""


class TreeStructureError(ValueError):
    """An operation was applied to a vertex that does not support it."""


class WeightedTree:
    """Finite rooted ordered tree with per-edge biases in (1, inf).

    Vertices are indexed 0..n-1 in breadth-first (= level-by-level
    lexicographic) order, the root being vertex 0. The children of any
    vertex occupy a contiguous index range, so the whole structure is two
    flat arrays: ``counts[v]`` (number of children of v) and ``biases[v]``
    (bias of the edge from v's parent to v; NaN at the root).
    """

    __slots__ = (
        "counts",
        "biases",
        "level_starts",
        "weights",
        "parents",
        "_child_start",
        "_walk_cache",
    )

    def __init__(self, counts, biases, *, depth_cap: int = DEFAULT_DEPTH_CAP):
        counts = np.ascontiguousarray(counts, dtype=np.int64)
        biases = np.ascontiguousarray(biases, dtype=np.float64)
        n = counts.shape[0]
        if n == 0:
            raise TreeStructureError("a tree has at least its root")
        if biases.shape[0] != n:
            raise TreeStructureError("counts and biases must have equal length")
        if np.any(counts < 0):
            raise TreeStructureError("negative child count")
        if int(counts.sum()) != n - 1:
            raise TreeStructureError("child counts do not describe a single tree")
        if n > 1:
            edge = biases[1:]
            if not (np.all(np.isfinite(edge)) and np.all(edge > 1.0)):
                raise TreeFormatError("every bias must be a finite number > 1")

        # Level boundaries: level d occupies [level_starts[d], level_starts[d+1]).
        starts = [0, 1]
        while starts[-1] < n:
            lo, hi = starts[-2], starts[-1]
            starts.append(hi + int(counts[lo:hi].sum()))
            if len(starts) - 2 > depth_cap:
                raise TreeStructureError(
                    f"tree depth exceeds cap {depth_cap}; deeper trees risk "
                    "weight overflow"
                )
        level_starts = np.asarray(starts, dtype=np.int64)

        # Single root-to-leaf pass for the vertex weights.
        weights = np.empty(n, dtype=np.float64)
        weights[0] = 1.0
        for d in range(len(starts) - 2):
            lo, hi = starts[d], starts[d + 1]
            clo, chi = starts[d + 1], starts[d + 2]
            if clo == chi:
                break
            weights[clo:chi] = np.repeat(weights[lo:hi], counts[lo:hi]) * biases[clo:chi]
        if not np.all(np.isfinite(weights)):
            raise TreeStructureError("bias products overflow double precision")

        parents = np.empty(n, dtype=np.int64)
        parents[0] = -1
        if n > 1:
            parents[1:] = np.repeat(np.arange(n, dtype=np.int64), counts)

        child_start = np.empty(n, dtype=np.int64)
        child_start[0] = 1
        if n > 1:
            child_start[1:] = 1 + np.cumsum(counts[:-1])

        for arr in (counts, biases, level_starts, weights, parents, child_start):
            arr.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "level_starts", level_starts)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "_child_start", child_start)
        object.__setattr__(self, "_walk_cache", None)

    def __setattr__(self, name, value):
        raise AttributeError("WeightedTree is immutable")

    # -- basic structure ----------------------------------------------------

    @property
    def root(self) -> VertexId:
        return 0

    @property
    def n_vertices(self) -> int:
        return int(self.counts.shape[0])

    @property
    def n_edges(self) -> int:
        return self.n_vertices - 1

    def parent(self, v: VertexId) -> VertexId | None:
        self._check_vertex(v)
        return None if v == 0 else int(self.parents[v])

    def children(self, v: VertexId) -> range:
        self._check_vertex(v)
        lo = int(self._child_start[v])
        return range(lo, lo + int(self.counts[v]))

    def bias(self, v: VertexId) -> float:
        """Bias of the edge joining v to its parent."""
        self._check_vertex(v)
        if v == 0:
            raise TreeStructureError("the root has no parent edge")
        return float(self.biases[v])

    def vertex_depth(self, v: VertexId) -> int:
        self._check_vertex(v)
        return int(np.searchsorted(self.level_starts, v, side="right")) - 1

    def level(self, d: int) -> range:
        """Vertices at depth d, in lexicographic order."""
        if not 0 <= d <= self.depth_value():
            raise TreeStructureError(f"no level {d} in a tree of depth {self.depth_value()}")
        return range(int(self.level_starts[d]), int(self.level_starts[d + 1]))

    def depth_value(self) -> int:
        return int(self.level_starts.shape[0]) - 2

    def is_leaf(self, v: VertexId) -> bool:
        self._check_vertex(v)
        return int(self.counts[v]) == 0

    def path_from_root(self, v: VertexId) -> list[VertexId]:
        self._check_vertex(v)
        path = [v]
        while v != 0:
            v = int(self.parents[v])
            path.append(v)
        path.reverse()
        return path

    def subtree_level_blocks(self, v: VertexId):
        """Yield (lo, hi) index ranges of v's descendants, one per level.

        Descendants of a vertex are contiguous within every level of the
        breadth-first arena, which keeps subtree extraction vectorised.
        """
        self._check_vertex(v)
        lo, hi = v, v + 1
        while lo < hi:
            yield lo, hi
            if int(self.counts[lo:hi].sum()) == 0:
                return
            new_lo = int(self._child_start[lo])
            new_hi = int(self._child_start[hi - 1] + self.counts[hi - 1])
            lo, hi = new_lo, new_hi

    def subtree_vertices(self, v: VertexId) -> list[VertexId]:
        out: list[VertexId] = []
        for lo, hi in self.subtree_level_blocks(v):
            out.extend(range(lo, hi))
        return out

    def extract_subtree(self, v: VertexId) -> "WeightedTree":
        """Copy of the descendant tree of v, re-rooted at v."""
        counts_parts = []
        biases_parts = []
        for lo, hi in self.subtree_level_blocks(v):
            counts_parts.append(self.counts[lo:hi])
            biases_parts.append(self.biases[lo:hi])
        counts = np.concatenate(counts_parts)
        biases = np.concatenate(biases_parts)
        biases = biases.copy()
        biases[0] = np.nan
        return WeightedTree(counts, biases)

    def _check_vertex(self, v) -> None:
        if not isinstance(v, (int, np.integer)):
            raise TreeStructureError(f"vertex id must be an integer, got {type(v).__name__}")
        if not 0 <= v < self.n_vertices:
            raise TreeStructureError(f"vertex {v} not in tree of size {self.n_vertices}")

    # -- equality is structural: same shape, same child order, same biases --

    def __eq__(self, other):
        if not isinstance(other, WeightedTree):
            return NotImplemented
        return (
            self.n_vertices == other.n_vertices
            and bool(np.array_equal(self.counts, other.counts))
            and bool(np.array_equal(self.biases[1:], other.biases[1:]))
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"WeightedTree(n={self.n_vertices}, depth={self.depth_value()}, "
            f"weight={total_weight(self):.6g})"
        )


# -- construction ------------------------------------------------------------


def tree_from_nested(doc: dict, *, depth_cap: int = DEFAULT_DEPTH_CAP) -> WeightedTree:
    """Build a tree from the nested document form used by (de)serialize."""
    counts: list[int] = []
    biases: list[float] = [float("nan")]
    if not isinstance(doc, dict):
        raise TreeFormatError(f"expected an object at $, got {type(doc).__name__}")
    queue: list[tuple[dict, str, bool]] = [(doc, "$", True)]
    head = 0
    while head < len(queue):
        node, path, is_root = queue[head]
        head += 1
        if not isinstance(node, dict):
            raise TreeFormatError(f"expected an object at {path}, got {type(node).__name__}")
        allowed = {"children"} if is_root else {"bias", "children"}
        extra = set(node) - allowed
        if extra:
            raise TreeFormatError(f"unexpected keys {sorted(extra)} at {path}")
        if not is_root:
            if "bias" not in node:
                raise TreeFormatError(f"missing bias at {path}")
            b = node["bias"]
            if not isinstance(b, (int, float)) or isinstance(b, bool):
                raise TreeFormatError(f"bias at {path} is not a number")
            b = float(b)
            if not (math.isfinite(b) and b > 1.0):
                raise TreeFormatError(f"bias {b!r} at {path} is outside (1, inf)")
            biases.append(b)
        kids = node.get("children", [])
        if not isinstance(kids, list):
            raise TreeFormatError(f"children at {path} must be an array")
        counts.append(len(kids))
        for j, kid in enumerate(kids):
            queue.append((kid, f"{path}.children[{j}]", False))
    return WeightedTree(np.asarray(counts), np.asarray(biases), depth_cap=depth_cap)


def tree_to_nested(tree: WeightedTree) -> dict:
    """Nested plain-python form: {"bias": b, "children": [...]} per vertex."""
    nodes: list[dict] = []
    for v in range(tree.n_vertices):
        node: dict = {} if v == 0 else {"bias": float(tree.biases[v])}
        node["children"] = []
        nodes.append(node)
        if v != 0:
            nodes[int(tree.parents[v])]["children"].append(node)
    return nodes[0]


def serialize(tree: WeightedTree) -> str:
    """JSON text for the tree; child order is significant and preserved.

    Written iteratively so that document depth is bounded only by the tree
    depth cap, not the interpreter recursion limit.
    """
    parts: list[str] = []
    # stack entries: ("open", v) emits the vertex header, ("close", tail) a suffix
    stack: list[tuple[str, object]] = [("open", 0)]
    while stack:
        kind, payload = stack.pop()
        if kind == "close":
            parts.append(payload)  # type: ignore[arg-type]
            continue
        v = payload
        if v == 0:
            parts.append('{"children":[')
        else:
            parts.append('{"bias":%s,"children":[' % repr(float(tree.biases[v])))
        stack.append(("close", "]}"))
        kids = list(tree.children(v))
        for idx in range(len(kids) - 1, -1, -1):
            if idx != len(kids) - 1:
                stack.append(("close", ","))
            stack.append(("open", kids[idx]))
    return "".join(parts)


def deserialize(text: str, *, depth_cap: int = DEFAULT_DEPTH_CAP) -> WeightedTree:
    """Parse a tree document; raises TreeFormatError with the failing position."""
    old_limit = sys.getrecursionlimit()
    # The C JSON scanner charges recursion per nesting level.
    sys.setrecursionlimit(max(old_limit, 10 * depth_cap + 1_000))
    try:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise TreeFormatError(
                f"parse error at line {err.lineno}, column {err.colno}: {err.msg}"
            ) from err
    finally:
        sys.setrecursionlimit(old_limit)
    return tree_from_nested(doc, depth_cap=depth_cap)


# -- weight and depth operations ----------------------------------------------


def vertex_weight(tree: WeightedTree, v: VertexId) -> float:
    """Product of the biases along the root-to-v path; 1 at the root."""
    tree._check_vertex(v)
    return float(tree.weights[v])


def total_weight(tree: WeightedTree) -> float:
    """Sum of the vertex weights over the whole tree, root included.

    Equals 1 plus the total edge conductance, each edge conducting the
    weight of its lower endpoint.
    """
    return float(np.sum(tree.weights))


def relative_weight(tree: WeightedTree, u: VertexId, v: VertexId) -> float:
    """Product of the biases along the path from u down to its descendant v.

    Computed by an explicit product over the path, independently of the
    cached root weights, so that weight(v) == weight(u) * relative_weight
    is a checkable identity rather than a tautology.
    """
    tree._check_vertex(u)
    tree._check_vertex(v)
    prod = 1.0
    w = v
    while w != u:
        if w == 0:
            raise TreeStructureError(f"vertex {v} is not a descendant of {u}")
        prod *= float(tree.biases[w])
        w = int(tree.parents[w])
    return prod


def depth(tree: WeightedTree) -> int:
    """Maximal distance from the root to any vertex."""
    return tree.depth_value()


def find_v_base(tree: WeightedTree) -> VertexId:
    """Lexicographically minimal vertex of maximal depth.

    Within a level the arena is in lexicographic order, so this is the
    first vertex of the deepest level; it agrees with the first maximal
    depth vertex met in depth-first order respecting child order.
    """
    return int(tree.level_starts[tree.depth_value()])


def find_v_child(tree: WeightedTree) -> VertexId:
    """The root's neighbour on the path to the base vertex."""
    if tree.depth_value() < 1:
        raise TreeStructureError("a singleton tree has no child of the root")
    v = find_v_base(tree)
    while int(tree.parents[v]) != 0:
        v = int(tree.parents[v])
    return v


def subtree_weight(tree: WeightedTree, v: VertexId) -> float:
    """Total weight of the descendant tree of v, re-rooted at v."""
    tree._check_vertex(v)
    total = 0.0
    rel = np.ones(1, dtype=np.float64)
    blocks = tree.subtree_level_blocks(v)
    for lo, hi in blocks:
        total += float(np.sum(rel))
        if int(tree.counts[lo:hi].sum()) == 0:
            break
        clo = int(tree._child_start[lo])
        chi = int(tree._child_start[hi - 1] + tree.counts[hi - 1])
        rel = np.repeat(rel, tree.counts[lo:hi]) * tree.biases[clo:chi]
    return total


def omega_star(tree: WeightedTree) -> float:
    """Weight of the descendant tree of v_child, computed relative to v_child."""
    return subtree_weight(tree, find_v_child(tree))


def mu_phi(tree: WeightedTree) -> float:
    """Sum of the biases on the root's child edges (conductance at the root)."""
    kids = tree.children(0)
    return float(np.sum(tree.biases[kids.start : kids.stop]))
