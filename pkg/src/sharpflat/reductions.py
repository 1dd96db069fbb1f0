"""Padded-tree codings of graphs, order recovery from automorphisms, and
cross-cutting equivalence-relation experiments.

Trees are rooted at node 0 with nodes numbered in breadth-first order of a
canonical form (children sorted by subtree code), so equal graphs produce
byte-identical trees.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .errors import GuardError, ParseError, StructureError, ValidationFailure
from .groups import Perm, PermGroup, automorphism_group, cyclic_group, divides_check, exponent, generate, structure_isomorphism
from .structures import FinStructure, Vocabulary


@dataclass(frozen=True)
class Graph:
    """A finite simple graph on vertices 0..k-1."""

    k: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for a, b in self.edges:
            if a == b:
                raise StructureError(f"loop at {a}")
            if not (0 <= a < self.k and 0 <= b < self.k and a < b):
                raise StructureError(f"edge {(a, b)} out of range or not normalized")

    def adjacent(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    @staticmethod
    def make(k: int, edges) -> Graph:
        return Graph(k, frozenset((min(a, b), max(a, b)) for a, b in edges))


def parse_graph(text: str) -> Graph:
    """Edge-list format: ``k; (i,j); (i,j); ...`` with '#' comments."""
    body = "\n".join(line.split("#", 1)[0] for line in text.splitlines())
    parts = [p.strip() for p in body.split(";") if p.strip()]
    if not parts:
        raise ParseError("empty graph file")
    try:
        k = int(parts[0])
    except ValueError as e:
        raise ParseError(f"expected a vertex count, got {parts[0]!r}") from e
    edges = set()
    for p in parts[1:]:
        if not (p.startswith("(") and p.endswith(")")):
            raise ParseError(f"expected an edge '(i,j)', got {p!r}")
        try:
            a, b = (int(x) for x in p[1:-1].split(","))
        except ValueError as e:
            raise ParseError(f"malformed edge {p!r}") from e
        edges.add((min(a, b), max(a, b)))
    return Graph(k, frozenset(edges))


def serialize_graph(g: Graph) -> str:
    return f"{g.k};" + "".join(f" ({a},{b});" for a, b in sorted(g.edges))


def graphs_isomorphic(g1: Graph, g2: Graph) -> bool:
    if g1.k != g2.k or len(g1.edges) != len(g2.edges):
        return False
    for images in itertools.permutations(range(g1.k)):
        if all(g2.adjacent(images[a], images[b]) == g1.adjacent(a, b) for a in range(g1.k) for b in range(a + 1, g1.k)):
            return True
    return False


# ---------------------------------------------------------------------------
# Padded trees


@dataclass(frozen=True)
class PaddedTree:
    """A rooted tree as a parent array (parent[0] = -1), BFS numbered."""

    parents: tuple[int, ...]
    p: int  # declared padding multiplicity

    def __post_init__(self):
        if not self.parents or self.parents[0] != -1:
            raise StructureError("node 0 must be the root")
        for i, par in enumerate(self.parents[1:], start=1):
            if not 0 <= par < i:
                raise StructureError("parents must precede children in BFS numbering")

    @property
    def size(self) -> int:
        return len(self.parents)

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.parents]
        for i, par in enumerate(self.parents[1:], start=1):
            out[par].append(i)
        return out

    def ancestors_with_self(self, b: int) -> list[int]:
        path = [b]
        while self.parents[path[-1]] != -1:
            path.append(self.parents[path[-1]])
        return path


def subtree_codes(tree: PaddedTree) -> list[tuple]:
    """Canonical (sorted-children) code of each node's subtree."""
    children = tree.children()
    codes: list[tuple | None] = [None] * tree.size
    for v in range(tree.size - 1, -1, -1):
        codes[v] = tuple(sorted(codes[c] for c in children[v]))
    return codes  # type: ignore[return-value]


def is_padded(tree: PaddedTree, p: int | None = None) -> bool:
    """Every child's subtree shape repeats at least p times among its siblings."""
    p = tree.p if p is None else p
    codes = subtree_codes(tree)
    for kids in tree.children():
        counts: dict[tuple, int] = {}
        for c in kids:
            counts[codes[c]] = counts.get(codes[c], 0) + 1
        if kids and min(counts.values()) < p:
            return False
    return True


# Nested-list intermediate form used while building trees: a node is a list
# of child nodes.


def _canon(node: list) -> tuple:
    return tuple(sorted(_canon(c) for c in node))


def _from_nested(node: list, p: int) -> PaddedTree:
    """Number a nested tree in BFS order with children sorted by code."""
    parents = [-1]
    queue = [(node, 0)]
    while queue:
        current, idx = queue.pop(0)
        for child in sorted(current, key=_canon):
            parents.append(idx)
            queue.append((child, len(parents) - 1))
    return PaddedTree(tuple(parents), p)


def _star(leaves: int) -> list:
    return [[] for _ in range(leaves)]


def graph_to_padded_tree(g: Graph, p: int = 3, guard: int = 5) -> PaddedTree:
    """Code a graph as a padded tree whose shape remembers it up to isomorphism.

    For every vertex ordering, the upper adjacency triangle gives a bit
    string; each distinct string becomes a branch carrying, per position with
    a 1-bit, p copies of a star gadget whose leaf count names the position.
    Every achieved string occurs for exactly |Aut(g)| orderings, so the set
    of distinct strings already determines the multiset and two graphs get
    isomorphic trees exactly when they are isomorphic.  Every child class has
    multiplicity at least p by construction, so the tree is padded.
    """
    if g.k > guard:
        raise GuardError(f"graph on {g.k} vertices exceeds the coding guard {guard}")
    if p < 2:
        raise StructureError("padding multiplicity must be at least 2")
    positions = list(itertools.combinations(range(g.k), 2))
    strings = set()
    for images in itertools.permutations(range(g.k)):
        strings.add(tuple(int(g.adjacent(images[i], images[j])) for i, j in positions))
    root: list = []
    for s in sorted(strings):
        branch: list = []
        for d, bit in enumerate(s, start=1):
            if bit:
                branch.extend(_star(p - 1 + d) for _ in range(p))
        root.extend(branch for _ in range(p))
    return _from_nested(root, p)


def tree_automorphism_generators(tree: PaddedTree) -> list[tuple[int, ...]]:
    """A generating set of Aut(tree) whose point stabilizers are generated by
    the generators that fix the point.

    For every node and every class of same-shape children, adjacent sibling
    swaps generate the symmetric group on the class, and the skip swaps
    (i, i+2) keep that true after deleting any one member; the wreath
    structure of tree automorphism groups then gives the stabilizer property
    for every point.
    """
    codes = subtree_codes(tree)
    children = tree.children()

    def matching(a: int, b: int, images: list[int]):
        # canonical bijection between two same-code subtrees
        images[a], images[b] = b, a
        kids_a = sorted(children[a], key=lambda c: (codes[c], c))
        kids_b = sorted(children[b], key=lambda c: (codes[c], c))
        for ca, cb in zip(kids_a, kids_b):
            matching(ca, cb, images)

    gens: list[tuple[int, ...]] = []
    for v in range(tree.size):
        classes: dict[tuple, list[int]] = {}
        for c in children[v]:
            classes.setdefault(codes[c], []).append(c)
        for members in classes.values():
            for gap in (1, 2):
                for i in range(len(members) - gap):
                    images = list(range(tree.size))
                    matching(members[i], members[i + gap], images)
                    gens.append(tuple(images))
    return gens


# ---------------------------------------------------------------------------
# Order recovery from the automorphism group


class _SegmentAnd:
    """Range-AND over a list of bitmasks, for excluded-index queries."""

    def __init__(self, masks: list[int], universe: int):
        self.n = max(1, len(masks))
        self.full = universe
        size = 1
        while size < self.n:
            size *= 2
        self.size = size
        self.tree = [universe] * (2 * size)
        for i, m in enumerate(masks):
            self.tree[size + i] = m
        for i in range(size - 1, 0, -1):
            self.tree[i] = self.tree[2 * i] & self.tree[2 * i + 1]

    def query(self, lo: int, hi: int) -> int:
        """AND of masks[lo:hi]."""
        out = self.full
        lo += self.size
        hi += self.size
        while lo < hi:
            if lo & 1:
                out &= self.tree[lo]
                lo += 1
            if hi & 1:
                hi -= 1
                out &= self.tree[hi]
            lo //= 2
            hi //= 2
        return out

    def and_excluding(self, excluded: list[int]) -> int:
        out = self.full
        prev = 0
        for e in excluded:
            out &= self.query(prev, e)
            prev = e + 1
        return out & self.query(prev, self.n)


def recover_order(gens: list[tuple[int, ...]], n: int) -> list[int]:
    """Column bitmasks of the relation "every automorphism fixing b fixes a".

    Column b has bit a set iff a is fixed by the stabilizer of b.  Requires a
    generating family with the stabilizer property (see
    tree_automorphism_generators): the stabilizer of b is generated by the
    generators fixing b, so its fixed points are the intersection of theirs.
    """
    full = (1 << n) - 1
    fix_masks = []
    moving: list[list[int]] = [[] for _ in range(n)]
    for gi, g in enumerate(gens):
        mask = 0
        for i in range(n):
            if g[i] == i:
                mask |= 1 << i
            else:
                moving[i].append(gi)
        fix_masks.append(mask)
    seg = _SegmentAnd(fix_masks, full)
    return [seg.and_excluding(moving[b]) for b in range(n)]


def recover_order_exhaustive(group: PermGroup) -> list[int]:
    """The same relation by literal quantification over all elements."""
    n = group.degree
    columns = []
    for b in range(n):
        stab = [p for p in group.elements if p.images[b] == b]
        mask = 0
        for a in range(n):
            if all(p.images[a] == a for p in stab):
                mask |= 1 << a
        columns.append(mask)
    return columns


def ancestor_columns(tree: PaddedTree) -> list[int]:
    out = []
    for b in range(tree.size):
        mask = 0
        for a in tree.ancestors_with_self(b):
            mask |= 1 << a
        out.append(mask)
    return out


def order_to_parents(columns: list[int]) -> list[int] | None:
    """Parent array (original numbering) of a recovered tree order, or None
    if the relation is not a tree order."""
    n = len(columns)
    depths = [bin(c).count("1") for c in columns]
    parents = [-1] * n
    roots = [b for b in range(n) if depths[b] == 1]
    if len(roots) != 1 or columns[roots[0]] != 1 << roots[0]:
        return None
    for b in range(n):
        if b == roots[0]:
            continue
        above = [a for a in range(n) if columns[b] >> a & 1 and a != b]
        if not above:
            return None
        parent = max(above, key=lambda a: depths[a])
        if depths[parent] != depths[b] - 1:
            return None
        parents[b] = parent
    return parents


def _match_parents(parents1: list[int], parents2: list[int]) -> tuple[int, ...] | None:
    """A shape isomorphism between two rooted parent arrays, or None."""
    if len(parents1) != len(parents2):
        return None
    n = len(parents1)
    kids1: list[list[int]] = [[] for _ in range(n)]
    kids2: list[list[int]] = [[] for _ in range(n)]
    root1 = root2 = -1
    for i in range(n):
        if parents1[i] == -1:
            root1 = i
        else:
            kids1[parents1[i]].append(i)
        if parents2[i] == -1:
            root2 = i
        else:
            kids2[parents2[i]].append(i)

    def code(v: int, kids) -> tuple:
        return tuple(sorted(code(c, kids) for c in kids[v]))

    codes1 = {v: code(v, kids1) for v in range(n)}
    codes2 = {v: code(v, kids2) for v in range(n)}
    if codes1[root1] != codes2[root2]:
        return None
    images = [0] * n

    def match(a: int, b: int):
        images[a] = b
        for ca, cb in zip(sorted(kids1[a], key=lambda c: (codes1[c], c)),
                          sorted(kids2[b], key=lambda c: (codes2[c], c))):
            match(ca, cb)

    match(root1, root2)
    return tuple(images)


def trees_equal_shape(t1: PaddedTree, t2: PaddedTree) -> bool:
    return t1.size == t2.size and subtree_codes(t1)[0] == subtree_codes(t2)[0]


def tree_matching_bijection(t1: PaddedTree, t2: PaddedTree) -> tuple[int, ...] | None:
    """A shape isomorphism t1 -> t2 by canonical matching, or None."""
    if not trees_equal_shape(t1, t2):
        return None
    codes1, codes2 = subtree_codes(t1), subtree_codes(t2)
    kids1, kids2 = t1.children(), t2.children()
    images = [0] * t1.size

    def match(a: int, b: int):
        images[a] = b
        for ca, cb in zip(sorted(kids1[a], key=lambda c: (codes1[c], c)),
                          sorted(kids2[b], key=lambda c: (codes2[c], c))):
            match(ca, cb)

    match(0, 0)
    return tuple(images)


def is_tree_automorphism(tree: PaddedTree, images: tuple[int, ...]) -> bool:
    return all(
        (tree.parents[images[i]] == (images[tree.parents[i]] if tree.parents[i] != -1 else -1))
        for i in range(tree.size)
    ) and sorted(images) == list(range(tree.size))


@dataclass(frozen=True)
class PipelineReport:
    graphs_isomorphic: bool
    codes_conjugate: bool
    order_recovery_ok: bool
    conjugator_verified: bool

    @property
    def agree(self) -> bool:
        return self.graphs_isomorphic == self.codes_conjugate

    def to_dict(self) -> dict:
        return {
            "graphs_isomorphic": self.graphs_isomorphic,
            "codes_conjugate": self.codes_conjugate,
            "order_recovery_ok": self.order_recovery_ok,
            "conjugator_verified": self.conjugator_verified,
            "agreement": self.agree,
        }


def fs_pipeline_check(g1: Graph, g2: Graph, p: int = 3) -> PipelineReport:
    """Decide graph isomorphism against conjugacy of the coded tree groups.

    Both trees' ancestor orders are recovered from their automorphism groups;
    conjugacy of the groups inside the symmetric group on the nodes holds
    exactly when the recovered orders are isomorphic, and any order
    isomorphism is verified to conjugate the generator sets both ways.
    """
    t1 = graph_to_padded_tree(g1, p)
    t2 = graph_to_padded_tree(g2, p)
    giso = graphs_isomorphic(g1, g2)
    if t1.size != t2.size:
        return PipelineReport(giso, False, True, False)
    gens1 = tree_automorphism_generators(t1)
    gens2 = tree_automorphism_generators(t2)
    columns1 = recover_order(gens1, t1.size)
    columns2 = recover_order(gens2, t2.size)
    parents1 = order_to_parents(columns1)
    parents2 = order_to_parents(columns2)
    recovery_ok = (
        parents1 is not None
        and parents2 is not None
        and columns1 == ancestor_columns(t1)
        and columns2 == ancestor_columns(t2)
    )
    delta = None
    if parents1 is not None and parents2 is not None:
        delta = _match_parents(parents1, parents2)
    verified = False
    if delta is not None:
        inv = [0] * len(delta)
        for i, j in enumerate(delta):
            inv[j] = i
        verified = all(
            is_tree_automorphism(t2, tuple(delta[g[inv[i]]] for i in range(t2.size)))
            for g in gens1
        ) and all(
            is_tree_automorphism(t1, tuple(inv[g[delta[i]]] for i in range(t1.size)))
            for g in gens2
        )
    return PipelineReport(giso, delta is not None and verified, recovery_ok, verified)


def blind_conjugacy_oracle(t1: PaddedTree, t2: PaddedTree, guard: int = 8) -> bool:
    """Search the full symmetric group for a conjugator of the two groups."""
    if t1.size > guard or t2.size > guard:
        raise GuardError(f"blind conjugacy search guarded to {guard} nodes")
    if t1.size != t2.size:
        return False
    a1 = generate([Perm(g) for g in tree_automorphism_generators(t1)] or [], degree=t1.size)
    a2_set = set(generate([Perm(g) for g in tree_automorphism_generators(t2)] or [], degree=t2.size).elements)
    if len(a1.elements) != len(a2_set):
        return False
    for images in itertools.permutations(range(t1.size)):
        delta = Perm(images)
        dinv = delta.inverse()
        if all(delta * g * dinv in a2_set for g in a1.generators or a1.elements):
            return True
    return False


# ---------------------------------------------------------------------------
# Cross-cutting equivalence relations


@dataclass(frozen=True)
class CrossCutSpec:
    """Class counts per relation plus a multiplicity for every cell."""

    h: tuple[int, ...]
    mult: tuple[tuple[tuple[int, ...], int], ...] = ()  # sparse overrides, default 1

    def __post_init__(self):
        if not self.h or any(v < 2 for v in self.h):
            raise StructureError("every relation needs at least 2 classes")
        for cell, m in self.mult:
            if len(cell) != len(self.h) or any(not 0 <= c < self.h[i] for i, c in enumerate(cell)):
                raise StructureError(f"cell {cell} out of range")
            if m < 1:
                raise StructureError("multiplicities must be positive")

    def cells(self) -> list[tuple[int, ...]]:
        return sorted(itertools.product(*(range(v) for v in self.h)))

    def multiplicity(self, cell: tuple[int, ...]) -> int:
        return dict(self.mult).get(cell, 1)

    @property
    def atomic(self) -> bool:
        return all(m == 1 for _, m in self.mult)


@dataclass(frozen=True)
class CrossCut:
    spec: CrossCutSpec
    structure: FinStructure
    cell_of: tuple[tuple[int, ...], ...]  # cell of each element


def build_cross_cut(spec: CrossCutSpec, guard: int = 32) -> CrossCut:
    """Disjoint copies of every cell, with E_n reading off coordinate n.

    All intersections of the relations are realized with their full product
    class counts, which is verified before returning.
    """
    cells = spec.cells()
    universe = []
    for cell in cells:
        universe.extend([cell] * spec.multiplicity(cell))
    if len(universe) > guard:
        raise GuardError(f"cross-cut of size {len(universe)} exceeds guard {guard}")
    n_rel = len(spec.h)
    vocab = Vocabulary(relations=tuple((f"E{i}", 2) for i in range(n_rel)))
    relations = {}
    for i in range(n_rel):
        relations[f"E{i}"] = frozenset(
            (a, b)
            for a in range(len(universe))
            for b in range(len(universe))
            if universe[a][i] == universe[b][i]
        )
    structure = FinStructure(vocab, len(universe), relations)
    for coords in itertools.chain.from_iterable(
        itertools.combinations(range(n_rel), r) for r in range(1, n_rel + 1)
    ):
        seen = {tuple(c[i] for i in coords) for c in universe}
        want = math.prod(spec.h[i] for i in coords)
        if len(seen) != want:
            raise ValidationFailure(f"intersection over {coords} has {len(seen)} classes, expected {want}")
    return CrossCut(spec, structure, tuple(universe))


@dataclass(frozen=True)
class ExponentReport:
    h: tuple[int, ...]
    size: int
    aut_order: int
    exponent: int
    bound: int  # K! for K = max class count
    divides: bool
    obstruction_prime: int
    obstruction_divides: bool  # whether C_q still divides Aut (expected False)

    def to_dict(self) -> dict:
        return {
            "h": list(self.h),
            "size": self.size,
            "aut_order": self.aut_order,
            "exponent": self.exponent,
            "bound": self.bound,
            "divides": self.divides,
            "obstruction_prime": self.obstruction_prime,
            "obstruction_divides": self.obstruction_divides,
        }


def _next_prime(n: int) -> int:
    candidate = n + 1
    while any(candidate % d == 0 for d in range(2, candidate)):
        candidate += 1
    return candidate


def exponent_experiment(spec: CrossCutSpec, guard: int = 32) -> ExponentReport:
    """Measure the automorphism group of an all-singleton cross-cut.

    Reports whether the exponent divides K! for K the largest class count,
    and exhibits the dividing obstruction against a cyclic group of prime
    order above K.
    """
    if not spec.atomic:
        raise StructureError("the exponent experiment needs all multiplicities equal to 1")
    cc = build_cross_cut(spec, guard)
    aut = automorphism_group(cc.structure, guard)
    e = exponent(aut)
    k = max(spec.h)
    bound = math.factorial(k)
    q = _next_prime(k)
    obstruction = divides_check(aut, cyclic_group(q))
    return ExponentReport(spec.h, cc.structure.size, aut.order, e, bound, bound % e == 0, q, obstruction is not None)


def quotient_coloring(cc: CrossCut) -> FinStructure:
    """Collapse the intersection of all the relations and color by class size.

    The universe becomes the set of realized cells, the relations are
    induced, and a unary predicate per realized size marks how many elements
    each cell had.
    """
    cells = cc.spec.cells()
    index = {cell: i for i, cell in enumerate(cells)}
    sizes = {cell: 0 for cell in cells}
    for cell in cc.cell_of:
        sizes[cell] += 1
    n_rel = len(cc.spec.h)
    realized = sorted(set(sizes.values()))
    vocab = Vocabulary(
        relations=tuple((f"E{i}", 2) for i in range(n_rel)) + tuple((f"U{m}", 1) for m in realized)
    )
    relations = {}
    for i in range(n_rel):
        relations[f"E{i}"] = frozenset(
            (index[a], index[b]) for a in cells for b in cells if a[i] == b[i]
        )
    for m in realized:
        relations[f"U{m}"] = frozenset((index[c],) for c in cells if sizes[c] == m)
    return FinStructure(vocab, len(cells), relations)


def quotient_preserves_isomorphism(cc1: CrossCut, cc2: CrossCut) -> bool:
    """Whether the coloring preserves and reflects isomorphism for a pair."""
    direct = structure_isomorphism(cc1.structure, cc2.structure) is not None
    q1, q2 = quotient_coloring(cc1), quotient_coloring(cc2)
    quotient = q1.vocab == q2.vocab and structure_isomorphism(q1, q2) is not None
    return direct == quotient
