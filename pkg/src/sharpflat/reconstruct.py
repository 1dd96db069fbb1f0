"""Recovering a structure and sharp system from a finite flat structure.

The construction walks a chain of points a_0 <= a_1 <= ... with a_i at level
i, extending until every point of the input is a generalized projection of
the chain top.  The top's diagram then yields the structure (variables modulo
forced equalities) and the generalized projections yield the covering maps,
whose kernels recover the system.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .backforth import TruncatedSystem, compute_F_infinity
from .errors import FlatnessError, StructureError, TruncationError
from .flat import (
    FlatStructure,
    Flattening,
    flat_isomorphism,
    flatten,
    surjective_homomorphisms,
)
from .groups import automorphism_group, structure_isomorphism
from .structures import FinStructure, qf_type, relabel_structure, serialize_structure


class ChainProjector:
    """Generalized projections of flat points by arbitrary index maps.

    A one-step doubled point (the unique extension asserting x_j equals the
    new last variable) exists and is unique in any flat structure, so an
    arbitrary map m -> n can be evaluated with intermediate levels never
    exceeding max(m, n): drop to the support, append doubled coordinates,
    then permute.  This stays inside the truncation where the blowup-based
    route would overflow.
    """

    def __init__(self, b: FlatStructure):
        self.b = b
        self._one_step: dict[tuple[int, int], int] = {}
        self._levels = {n: b.level(n) for n in range(b.n_max + 1)}

    def one_step_double(self, a: int, j: int) -> int:
        """The unique point above a of the next level with x_j = x_m."""
        key = (a, j)
        if key in self._one_step:
            return self._one_step[key]
        m = self.b.arity_of(a)
        if m + 1 > self.b.n_max:
            raise TruncationError(f"doubling needs level {m + 1} beyond n_max={self.b.n_max}")
        initial = tuple(range(m))
        witnesses = [
            c
            for c in self._levels[m + 1]
            if self.b.proj[c][initial] == a and self.b.diagram_of(c).same_class(j, m)
        ]
        if not witnesses:
            raise FlatnessError(f"no doubled point above {a} for coordinate {j}")
        if len(witnesses) > 1:
            raise FlatnessError(f"multiple doubled points above {a} for coordinate {j}")
        self._one_step[key] = witnesses[0]
        return witnesses[0]

    def project(self, a: int, h: tuple[int, ...]) -> int:
        """The point standing for the retupling of a along h (any map)."""
        m = self.b.arity_of(a)
        if any(not 0 <= v < m for v in h):
            raise StructureError(f"index map {h} out of range for arity {m}")
        if len(h) > self.b.n_max:
            raise TruncationError(f"projection target arity {len(h)} beyond n_max={self.b.n_max}")
        supp = tuple(sorted(set(h)))
        cur = self.b.proj[a][supp]
        rank = {v: i for i, v in enumerate(supp)}
        slots: list[int] = []  # source slot in cur for each output position
        seen: set[int] = set()
        appended = len(supp)
        for v in h:
            r = rank[v]
            if r in seen:
                cur = self.one_step_double(cur, r)
                slots.append(appended)
                appended += 1
            else:
                seen.add(r)
                slots.append(r)
        return self.b.proj[cur][tuple(slots)]

    def reach_table(self, a: int) -> dict[tuple[int, ...], int]:
        """Every generalized projection of a, keyed by the index map."""
        m = self.b.arity_of(a)
        table: dict[tuple[int, ...], int] = {}
        for ell in range(self.b.n_max + 1):
            for h in itertools.product(range(m), repeat=ell):
                table[h] = self.project(a, h)
        return table


@dataclass(frozen=True)
class CoveringChain:
    elements: tuple[int, ...]  # chain[i] sits at level i
    closed: bool

    @property
    def top(self) -> int:
        return self.elements[-1]


def build_covering_chain(b: FlatStructure, variant: int = 0) -> CoveringChain:
    """Greedily extend a chain until it reaches every point of b.

    At each step the least (variant 0) or greatest (variant 1) next-level
    point above the current top that makes the least unreached point's next
    truncation reachable is chosen, so the construction is deterministic; the
    variant only changes tie-breaking, for uniqueness experiments.  The
    closure flag records that every extension requirement over the final top
    is discharged by some generalized projection compatible with it.
    """
    roots = b.level(0)
    if len(roots) != 1:
        raise FlatnessError(f"expected exactly one point of arity 0, found {len(roots)}")
    proj = ChainProjector(b)
    chain = [roots[0]]
    reached = set(proj.reach_table(chain[-1]).values())
    while len(reached) < len(b.elements):
        missing = min(x for x in range(len(b.elements)) if x not in reached)
        # least truncation of the missing point that is still unreached
        trunc = missing
        for j in range(b.arity_of(missing), 0, -1):
            lower = b.proj[missing][tuple(range(j - 1))]
            if lower in reached:
                break
            trunc = lower
        top = chain[-1]
        n = b.arity_of(top)
        if n + 1 > b.n_max:
            raise TruncationError("truncation too small: chain cannot grow to reach every point")
        fiber = [w for w in b.level(n + 1) if b.proj[w][tuple(range(n))] == top]
        candidates = [w for w in fiber if trunc in set(proj.reach_table(w).values())]
        if not candidates:
            raise TruncationError("truncation too small: no extension reaches the next point")
        chain.append(max(candidates) if variant else min(candidates))
        reached = set(proj.reach_table(chain[-1]).values())
    top = chain[-1]
    table = proj.reach_table(top)
    closed = _closure_holds(b, top, table)
    return CoveringChain(tuple(chain), closed)


def _closure_holds(b: FlatStructure, top: int, table: dict[tuple[int, ...], int]) -> bool:
    """Every point above a projection of the top is reached compatibly."""
    n = b.arity_of(top)
    for k in range(n + 1):
        for fv in itertools.permutations(range(n), k):
            base = b.proj[top][fv]
            for c in range(len(b.elements)):
                ell = b.arity_of(c)
                if ell < k or b.proj[c][tuple(range(k))] != base:
                    continue
                if not any(
                    table[h] == c
                    for h in itertools.product(range(n), repeat=ell)
                    if h[:k] == fv
                ):
                    return False
    return True


@dataclass(frozen=True)
class Reconstruction:
    structure: FinStructure
    system: TruncatedSystem
    cov: tuple[dict[tuple[int, ...], int], ...]  # per arity: element tuples -> flat point
    chain: CoveringChain
    source: FlatStructure

    def cover_of(self, t: tuple[int, ...]) -> int:
        return self.cov[len(t)][t]

    def preimage(self, x: int) -> tuple[int, ...]:
        """The least tuple covering the point x."""
        for t in sorted(self.cov[self.source.arity_of(x)]):
            if self.cov[self.source.arity_of(x)][t] == x:
                return t
        raise FlatnessError(f"point {x} is not covered")


def reconstruct(b: FlatStructure, variant: int = 0) -> Reconstruction:
    """A structure and sharp system whose flattening is isomorphic to b.

    The top diagram of a covering chain is a complete type; its variables
    modulo the forced equalities form the universe, relations and constants
    are read off the diagram, the covering maps are generalized projections
    of the top, and the system is their kernel.
    """
    chain = build_covering_chain(b, variant)
    if not chain.closed:
        raise TruncationError("covering chain reaches every point but is not closed")
    proj = ChainProjector(b)
    top = chain.top
    diagram = b.diagram_of(top)
    n = b.arity_of(top)
    reps = sorted(set(diagram.eq))
    elem_of_var = {i: reps.index(diagram.eq[i]) for i in range(n)}
    var_of_elem = {e: reps[e] for e in range(len(reps))}
    size = len(reps)
    relations = {}
    for name, arity in b.vocab.relations:
        tuples = set()
        for t in itertools.product(range(size), repeat=arity):
            idx = tuple(var_of_elem[e] for e in t)
            if (name, idx) in diagram.atoms:
                tuples.add(t)
        relations[name] = frozenset(tuples)
    constants = {}
    for c in b.vocab.constants:
        bound = sorted(i for (name, i) in diagram.consts if name == c)
        if not bound:
            raise TruncationError(f"constant {c!r} is not realized by the chain top")
        constants[c] = elem_of_var[bound[0]]
    m = FinStructure(b.vocab, size, relations, constants, {})
    cov = []
    raw = []
    for ell in range(b.n_max + 1):
        table = {}
        part = {}
        for t in itertools.product(range(size), repeat=ell):
            h = tuple(var_of_elem[e] for e in t)
            table[t] = proj.project(top, h)
            part[t] = table[t]
        cov.append(table)
        raw.append(part)
        if set(table.values()) != set(b.level(ell)):
            raise FlatnessError(f"covering map at arity {ell} is not onto the level")
    system = TruncatedSystem.normalize(m, b.n_max, raw)
    return Reconstruction(m, system, tuple(cov), chain, b)


# ---------------------------------------------------------------------------
# Round trips


def roundtrip_check(b: FlatStructure) -> bool:
    """flatten(reconstruct(b)) is isomorphic to b."""
    rec = reconstruct(b)
    again = flatten(rec.structure, rec.system)
    return flat_isomorphism(again.flat, b) is not None


def sharp_isomorphism_between(
    m1: FinStructure, s1: TruncatedSystem, m2: FinStructure, s2: TruncatedSystem
) -> tuple[int, ...] | None:
    """A structure isomorphism m1 -> m2 carrying s1 classes onto s2 classes."""
    if s1.n_max != s2.n_max:
        return None
    if any(s1.class_count(k) != s2.class_count(k) for k in range(s1.n_max + 1)):
        return None
    base = structure_isomorphism(m1, m2)
    if base is None:
        return None
    # every isomorphism is base composed with an automorphism of m1; class
    # counts are equal, so forward pair preservation already forces a
    # bijection between the classes
    for sigma in automorphism_group(m1).elements:
        phi = tuple(base.images[sigma.images[i]] for i in range(m1.size))
        if all(
            s2.related(tuple(phi[i] for i in a), tuple(phi[i] for i in bb))
            for k in range(s1.n_max + 1)
            for a, bb in s1.pairs(k)
        ):
            return phi
    return None


def roundtrip_sharp(m: FinStructure, system: TruncatedSystem) -> bool:
    """reconstruct(flatten(m, system)) is isomorphic to (m, system)."""
    fl = flatten(m, system)
    rec = reconstruct(fl.flat)
    return sharp_isomorphism_between(m, system, rec.structure, rec.system) is not None


# ---------------------------------------------------------------------------
# Canonical forms and the canonical homomorphism


def canonical_relabeling(m: FinStructure) -> tuple[int, ...]:
    """The permutation giving the least serialized relabeling of m."""
    best = None
    best_images = None
    for images in itertools.permutations(range(m.size)):
        text = serialize_structure(relabel_structure(m, images))
        if best is None or text < best:
            best = text
            best_images = images
    return best_images


def canonical_structure(m: FinStructure) -> FinStructure:
    return relabel_structure(m, canonical_relabeling(m))


def canonical_form(b: FlatStructure) -> FlatStructure:
    """The flattening of the canonically relabeled reconstruction under the
    largest sharp system.

    Two flat structures get the same canonical form exactly when their
    reconstructions are isomorphic; the operation is idempotent and forgets
    any refinement of the largest system.
    """
    rec = reconstruct(b)
    mc = canonical_structure(rec.structure)
    return flatten(mc, compute_F_infinity(mc, b.n_max)).flat


def cmap(b: FlatStructure) -> tuple[dict[int, int], FlatStructure]:
    """The canonical homomorphism onto the canonical form.

    Sends each point to the class of (the relabeling of) any covering tuple;
    well defined because the largest system only merges classes.
    """
    rec = reconstruct(b)
    images = canonical_relabeling(rec.structure)
    mc = relabel_structure(rec.structure, images)
    target = flatten(mc, compute_F_infinity(mc, b.n_max))
    mapping = {}
    for x in range(len(b.elements)):
        t = rec.preimage(x)
        mapping[x] = target.element_of(tuple(images[i] for i in t))
    return mapping, target.flat


def is_surjective_homomorphism(b1: FlatStructure, b2: FlatStructure, mapping: dict[int, int]) -> bool:
    """Arity-, diagram- and projection-preserving and onto."""
    if set(mapping.values()) != set(range(len(b2.elements))):
        return False
    for x in range(len(b1.elements)):
        y = mapping[x]
        if b1.arity_of(x) != b2.arity_of(y) or b1.diagram_of(x) != b2.diagram_of(y):
            return False
        for values, sub in b1.proj[x].items():
            if b2.proj[y][values] != mapping[sub]:
                return False
    return True


def cmap_unique(b: FlatStructure, cap: int = 32) -> bool:
    """Exhaustively confirm there is exactly one onto homomorphism to the
    canonical form (small inputs only)."""
    if len(b.elements) > cap:
        raise TruncationError("exhaustive homomorphism search guarded to small structures")
    _, target = cmap(b)
    return len(surjective_homomorphisms(b, target)) == 1
