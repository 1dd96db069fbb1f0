"""Finite permutation groups, subgroup codes, and the code/system dictionary.

Permutations are image tuples on 0..degree-1; groups materialize their
element sets (desk scale only) with a canonical sorted ordering, so searches
return deterministic least witnesses.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .backforth import TruncatedSystem, validate_sharp
from .errors import GuardError, StructureError, ValidationFailure
from .flat import FlatStructure, Flattening, flat_automorphisms
from .structures import FinStructure, Vocabulary, qf_type


@dataclass(frozen=True)
class Perm:
    images: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.images) != list(range(len(self.images))):
            raise StructureError(f"{self.images} is not a permutation")

    @property
    def degree(self) -> int:
        return len(self.images)

    def __call__(self, i: int) -> int:
        return self.images[i]

    def apply(self, t: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(self.images[i] for i in t)

    def __mul__(self, other: Perm) -> Perm:
        """Function composition: (p * q)(x) = p(q(x))."""
        if self.degree != other.degree:
            raise StructureError("degree mismatch")
        return Perm(tuple(self.images[other.images[i]] for i in range(self.degree)))

    def inverse(self) -> Perm:
        inv = [0] * self.degree
        for i, j in enumerate(self.images):
            inv[j] = i
        return Perm(tuple(inv))

    @staticmethod
    def identity(degree: int) -> Perm:
        return Perm(tuple(range(degree)))

    def cycles(self) -> list[tuple[int, ...]]:
        seen = set()
        out = []
        for start in range(self.degree):
            if start in seen or self.images[start] == start:
                seen.add(start)
                continue
            cyc = [start]
            seen.add(start)
            j = self.images[start]
            while j != start:
                cyc.append(j)
                seen.add(j)
                j = self.images[j]
            out.append(tuple(cyc))
        return out

    def cycle_type(self) -> tuple[int, ...]:
        lengths = sorted(len(c) for c in self.cycles())
        fixed = self.degree - sum(lengths)
        return tuple(sorted(lengths + [1] * fixed))

    def order(self) -> int:
        return math.lcm(*(len(c) for c in self.cycles())) if self.cycles() else 1

    def __str__(self) -> str:
        cycs = self.cycles()
        if not cycs:
            return "id"
        return "".join("(" + " ".join(map(str, c)) + ")" for c in cycs)


def parse_perm(text: str, degree: int) -> Perm:
    """Parse cycle notation like ``(0 1)(2 3)``; digits may also be packed ``(01)``."""
    text = text.strip()
    if text in ("id", "()", "e", ""):
        return Perm.identity(degree)
    images = list(range(degree))
    depth = 0
    cycles: list[list[int]] = []
    current: list[str] = []
    for ch in text:
        if ch == "(":
            if depth:
                raise StructureError(f"nested parenthesis in {text!r}")
            depth = 1
            current = []
        elif ch == ")":
            if not depth:
                raise StructureError(f"unbalanced parenthesis in {text!r}")
            depth = 0
            parts = "".join(current).replace(",", " ").split()
            if len(parts) == 1 and len(parts[0]) > 1:
                parts = list(parts[0])  # packed single digits
            cycles.append([int(p) for p in parts])
        elif depth:
            current.append(ch)
        elif not ch.isspace():
            raise StructureError(f"unexpected character {ch!r} in {text!r}")
    for cyc in cycles:
        if any(not 0 <= v < degree for v in cyc):
            raise StructureError(f"cycle entry out of range in {text!r}")
        if len(set(cyc)) != len(cyc):
            raise StructureError(f"repeated entry in cycle {cyc}")
        for i, v in enumerate(cyc):
            images[v] = cyc[(i + 1) % len(cyc)]
    return Perm(tuple(images))


@dataclass(frozen=True)
class PermGroup:
    degree: int
    generators: tuple[Perm, ...]
    elements: tuple[Perm, ...]  # sorted by image tuple

    def __post_init__(self):
        if Perm.identity(self.degree) not in self.elements:
            raise StructureError("a group contains the identity")

    @property
    def order(self) -> int:
        return len(self.elements)

    def __contains__(self, p: Perm) -> bool:
        return p in set(self.elements)

    def contains_group(self, other: PermGroup) -> bool:
        mine = set(self.elements)
        return all(p in mine for p in other.elements)

    def conjugate(self, delta: Perm) -> PermGroup:
        elems = tuple(sorted((delta * p * delta.inverse() for p in self.elements), key=lambda q: q.images))
        gens = tuple(delta * g * delta.inverse() for g in self.generators)
        return PermGroup(self.degree, gens, elems)

    def element_orders(self) -> list[int]:
        return [p.order() for p in self.elements]

    def describe(self) -> str:
        gens = ", ".join(str(g) for g in self.generators) or "id"
        return f"<{gens}> of order {self.order} on {self.degree} points"


def generate(gens: list[Perm], degree: int | None = None, cap: int = 20000) -> PermGroup:
    """Close a generator list under composition and inverse."""
    if degree is None:
        if not gens:
            raise StructureError("need a degree when there are no generators")
        degree = gens[0].degree
    if any(g.degree != degree for g in gens):
        raise StructureError("generator degrees do not match")
    ident = Perm.identity(degree)
    elements = {ident}
    frontier = [ident]
    while frontier:
        nxt = []
        for p in frontier:
            for g in gens:
                q = p * g
                if q not in elements:
                    elements.add(q)
                    nxt.append(q)
                    if len(elements) > cap:
                        raise GuardError(f"closure exceeded the element cap {cap}")
        frontier = nxt
    return PermGroup(degree, tuple(gens), tuple(sorted(elements, key=lambda q: q.images)))


def symmetric_group(degree: int, cap: int = 20000) -> PermGroup:
    if degree == 1:
        return generate([], degree=1)
    gens = [Perm(tuple([1, 0] + list(range(2, degree))))]
    if degree > 2:
        gens.append(Perm(tuple(list(range(1, degree)) + [0])))
    return generate(gens, degree, cap)


def cyclic_group(degree: int) -> PermGroup:
    if degree == 1:
        return generate([], degree=1)
    return generate([Perm(tuple(list(range(1, degree)) + [0]))], degree)


def subgroups(group: PermGroup, guard: int = 48) -> list[PermGroup]:
    """All subgroups, by closing generator sets one added element at a time.

    Every subgroup is reachable from the trivial one through a chain of
    single-generator additions, so breadth-first growth with deduplication by
    element set enumerates them all.  Desk scale only.
    """
    if group.order > guard:
        raise GuardError(f"group order {group.order} exceeds subgroup enumeration guard {guard}")
    trivial = generate([], degree=group.degree)
    seen = {trivial.elements: trivial}
    frontier = [trivial]
    while frontier:
        nxt = []
        for h in frontier:
            for g in group.elements:
                if g in h:
                    continue
                grown = generate(list(h.generators) + [g], group.degree)
                if grown.elements not in seen:
                    seen[grown.elements] = grown
                    nxt.append(grown)
        frontier = nxt
    return sorted(seen.values(), key=lambda h: (h.order, tuple(p.images for p in h.elements)))


# ---------------------------------------------------------------------------
# Automorphism groups of finite structures


def automorphism_group(m: FinStructure, guard: int = 32) -> PermGroup:
    """All relation- and constant-preserving permutations, by backtracking.

    Partial maps are extended point by point; a partial map survives only if
    every relation atom whose arguments are already assigned is preserved in
    both directions.  The guard bounds the universe size, not the search.
    """
    if m.size > guard:
        raise GuardError(f"size {m.size} exceeds automorphism guard {guard}")
    rel_items = [(m.relations[name], arity) for name, arity in m.vocab.relations]
    fixed = {m.constants[c] for c in m.vocab.constants}
    autos: list[Perm] = []
    images: list[int] = []
    used = [False] * m.size

    def consistent(i: int, y: int) -> bool:
        if i in fixed or y in fixed:
            if not (i in fixed and i == y):
                return False
        assigned = list(range(i + 1))
        for interp, arity in rel_items:
            for t in itertools.product(assigned, repeat=arity):
                if i not in t:
                    continue
                img = tuple(images[v] if v < i else y for v in t)
                if (t in interp) != (img in interp):
                    return False
        return True

    def extend(i: int):
        if i == m.size:
            autos.append(Perm(tuple(images)))
            return
        for y in range(m.size):
            if used[y]:
                continue
            if consistent(i, y):
                images.append(y)
                used[y] = True
                extend(i + 1)
                used[y] = False
                images.pop()

    extend(0)
    return PermGroup(m.size, tuple(autos), tuple(sorted(autos, key=lambda p: p.images)))


def structure_isomorphism(m1: FinStructure, m2: FinStructure) -> Perm | None:
    """A vocabulary-preserving isomorphism m1 -> m2, or None (backtracking)."""
    if m1.vocab != m2.vocab or m1.size != m2.size:
        return None
    rel_names = [name for name, _ in m1.vocab.relations]
    images: list[int] = []
    used = [False] * m2.size

    def consistent(i: int, y: int) -> bool:
        for c in m1.vocab.constants:
            if m1.constants[c] == i and m2.constants[c] != y:
                return False
            if m2.constants[c] == y and m1.constants[c] != i:
                return False
        assigned = list(range(i + 1))
        for name in rel_names:
            arity = m1.vocab.relation_arity(name)
            i1, i2 = m1.relations[name], m2.relations[name]
            for t in itertools.product(assigned, repeat=arity):
                if i not in t:
                    continue
                img = tuple(images[v] if v < i else y for v in t)
                if (t in i1) != (img in i2):
                    return False
        return True

    def extend(i: int) -> Perm | None:
        if i == m1.size:
            return Perm(tuple(images))
        for y in range(m2.size):
            if used[y]:
                continue
            if consistent(i, y):
                images.append(y)
                used[y] = True
                found = extend(i + 1)
                if found is not None:
                    return found
                used[y] = False
                images.pop()
        return None

    return extend(0)


# ---------------------------------------------------------------------------
# Codes of permutation sets


@dataclass(frozen=True)
class SubgroupCode:
    """Per-arity sets of tuple pairs realized by some permutation of a set C."""

    degree: int
    n_max: int
    pairs: tuple[frozenset[tuple[tuple[int, ...], tuple[int, ...]]], ...]

    def arity_pairs(self, k: int) -> frozenset:
        return self.pairs[k]


def code_of(perms: list[Perm] | PermGroup, n_max: int) -> SubgroupCode:
    """The code of a permutation set: (a, b) is in iff some sigma maps a to b."""
    if isinstance(perms, PermGroup):
        degree = perms.degree
        members = perms.elements
    else:
        if not perms:
            raise StructureError("cannot code an empty set of permutations")
        degree = perms[0].degree
        members = tuple(perms)
    levels = []
    for k in range(n_max + 1):
        pairs = set()
        for t in itertools.product(range(degree), repeat=k):
            for sigma in members:
                pairs.add((t, sigma.apply(t)))
        levels.append(frozenset(pairs))
    return SubgroupCode(degree, n_max, tuple(levels))


def group_of_code(code: SubgroupCode, strict: bool = True) -> list[Perm]:
    """All permutations whose full graph lies inside the code.

    Faithful only when n_max >= degree (a full-length tuple pins the
    permutation); below that, strict mode refuses to guess.
    """
    if code.n_max < code.degree:
        if strict:
            raise ValidationFailure(
                f"code with n_max={code.n_max} < degree={code.degree} cannot be decoded faithfully"
            )
    out = []
    for images in itertools.permutations(range(code.degree)):
        sigma = Perm(images)
        if all(
            (t, sigma.apply(t)) in code.pairs[k]
            for k in range(code.n_max + 1)
            for t in itertools.product(range(code.degree), repeat=k)
        ):
            out.append(sigma)
    return out


def code_as_system(code: SubgroupCode) -> TruncatedSystem:
    """View a code over the pure-equality structure as a truncated system.

    Fails if some arity slice is not an equivalence relation.
    """
    m = FinStructure(Vocabulary(), code.degree)
    raw = []
    for k in range(code.n_max + 1):
        parent = {t: t for t in itertools.product(range(code.degree), repeat=k)}

        def find(t):
            while parent[t] != t:
                parent[t] = parent[parent[t]]
                t = parent[t]
            return t

        for a, b in code.pairs[k]:
            if (a, a) not in code.pairs[k] or (b, a) not in code.pairs[k]:
                raise ValidationFailure(f"arity-{k} slice is not an equivalence relation at {(a, b)}")
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        # transitive closure must not add pairs beyond the code itself
        raw.append({t: find(t) for t in parent})
        for a in parent:
            for b in parent:
                if (raw[k][a] == raw[k][b]) != ((a, b) in code.pairs[k]):
                    raise ValidationFailure(f"arity-{k} slice is not transitively closed at {(a, b)}")
    return TruncatedSystem.normalize(m, code.n_max, raw)


def system_as_code(system: TruncatedSystem) -> SubgroupCode:
    levels = []
    for k in range(system.n_max + 1):
        levels.append(frozenset(system.pairs(k)))
    return SubgroupCode(system.structure.size, system.n_max, tuple(levels))


def is_sharp_code(code: SubgroupCode) -> bool:
    """Whether the code is a sharp back-and-forth system over pure equality."""
    try:
        system = code_as_system(code)
    except ValidationFailure:
        return False
    return validate_sharp(system).ok


def subgroup_system(m: FinStructure, h: PermGroup, n_max: int) -> TruncatedSystem:
    """The sharp system whose classes are the diagonal orbits of h <= Aut(m)."""
    if h.degree != m.size:
        raise StructureError("subgroup degree does not match the structure size")
    raw = []
    for k in range(n_max + 1):
        part: dict[tuple[int, ...], int] = {}
        for t in sorted(m.tuples(k)):
            if t in part:
                continue
            cid = len(set(part.values()))
            for sigma in h.elements:
                part[sigma.apply(t)] = cid
            part[t] = cid
        raw.append(part)
    return TruncatedSystem.normalize(m, n_max, raw)


# ---------------------------------------------------------------------------
# Fix, conjugacy, and the bireduction


def fix(m: FinStructure, system: TruncatedSystem, guard: int = 32) -> PermGroup:
    """Automorphisms moving every tuple within its own class."""
    aut = automorphism_group(m, guard)
    members = []
    for sigma in aut.elements:
        if all(
            system.class_of(t) == system.class_of(sigma.apply(t))
            for k in range(system.n_max + 1)
            for t in m.tuples(k)
        ):
            members.append(sigma)
    return PermGroup(m.size, tuple(members), tuple(sorted(members, key=lambda p: p.images)))


def conjugacy_test(h1: PermGroup, h2: PermGroup, g: PermGroup) -> Perm | None:
    """The least delta in g with delta h1 delta^-1 = h2, or None.

    Pruned by order and by the multiset of cycle types, which conjugation
    preserves.
    """
    if not g.contains_group(h1) or not g.contains_group(h2):
        raise ValidationFailure("conjugacy test needs both subgroups inside the ambient group")
    if h1.order != h2.order:
        return None
    if sorted(p.cycle_type() for p in h1.elements) != sorted(p.cycle_type() for p in h2.elements):
        return None
    target = set(h2.elements)
    for delta in g.elements:
        dinv = delta.inverse()
        if all((delta * p * dinv) in target for p in h1.elements):
            return delta
    return None


def sharp_isomorphism(m: FinStructure, s1: TruncatedSystem, s2: TruncatedSystem) -> Perm | None:
    """An automorphism of m carrying every class of s1 onto a class of s2."""
    if s1.n_max != s2.n_max:
        raise StructureError("systems truncated at different arities")
    aut = automorphism_group(m)
    for sigma in aut.elements:
        if all(
            s2.related(sigma.apply(a), sigma.apply(b))
            for k in range(s1.n_max + 1)
            for a, b in s1.pairs(k)
        ) and all(
            s1.related(sigma.inverse().apply(a), sigma.inverse().apply(b))
            for k in range(s2.n_max + 1)
            for a, b in s2.pairs(k)
        ):
            return sigma
    return None


@dataclass(frozen=True)
class BireductionReport:
    isomorphic: bool
    conjugate: bool
    iso_witness: Perm | None
    conj_witness: Perm | None

    @property
    def agree(self) -> bool:
        return self.isomorphic == self.conjugate

    def to_dict(self) -> dict:
        return {
            "isomorphic": self.isomorphic,
            "conjugate": self.conjugate,
            "agree": self.agree,
            "iso_witness": str(self.iso_witness) if self.iso_witness else None,
            "conj_witness": str(self.conj_witness) if self.conj_witness else None,
        }


def bireduction_check(m: FinStructure, s1: TruncatedSystem, s2: TruncatedSystem) -> BireductionReport:
    """Compare expansion isomorphism with conjugacy of the fixing subgroups.

    The two sides must agree; a disagreeing report is a bug certificate for
    one of the two searches.
    """
    iso = sharp_isomorphism(m, s1, s2)
    aut = automorphism_group(m)
    conj = conjugacy_test(fix(m, s1), fix(m, s2), aut)
    return BireductionReport(iso is not None, conj is not None, iso, conj)


# ---------------------------------------------------------------------------
# The induced action on a flattening


@dataclass(frozen=True)
class InducedAction:
    domain: PermGroup  # automorphisms of the expansion (M, S)
    images: dict[Perm, Perm]  # induced permutation of the flat points
    image_group: PermGroup
    flat_auts: tuple[Perm, ...]  # independently enumerated Aut of the flattening

    @property
    def surjective(self) -> bool:
        return set(self.images.values()) == set(self.flat_auts)


def expansion_automorphisms(m: FinStructure, system: TruncatedSystem) -> PermGroup:
    """Automorphisms of m preserving every class relation (not pointwise)."""
    aut = automorphism_group(m)
    members = []
    for sigma in aut.elements:
        if all(
            system.related(sigma.apply(a), sigma.apply(b))
            for k in range(system.n_max + 1)
            for a, b in system.pairs(k)
        ):
            members.append(sigma)
    return PermGroup(m.size, tuple(members), tuple(sorted(members, key=lambda p: p.images)))


def induced_flat_action(m: FinStructure, system: TruncatedSystem, flattening: Flattening) -> InducedAction:
    """The map sending an expansion automorphism to its action on classes.

    Verified to be a homomorphism; the image is compared against the
    automorphisms of the flat structure enumerated by backtracking.
    """
    domain = expansion_automorphisms(m, system)
    b = flattening.flat
    reps: dict[int, tuple[int, ...]] = {}
    for n in range(system.n_max + 1):
        for cid, members in system.class_members(n).items():
            reps[flattening.class_elements[(n, cid)]] = min(members)
    images: dict[Perm, Perm] = {}
    for sigma in domain.elements:
        flat_images = [0] * len(b.elements)
        for x, rep in reps.items():
            flat_images[x] = flattening.element_of(sigma.apply(rep))
        images[sigma] = Perm(tuple(flat_images))
    for p in domain.elements:
        for q in domain.elements:
            if images[p * q] != images[p] * images[q]:
                raise ValidationFailure(f"induced action is not a homomorphism at {p}, {q}")
    flat_auts = tuple(
        Perm(tuple(phi[x] for x in range(len(b.elements)))) for phi in flat_automorphisms(b)
    )
    image_elems = tuple(sorted(set(images.values()), key=lambda p: p.images))
    image_group = PermGroup(len(b.elements), image_elems, image_elems)
    return InducedAction(domain, images, image_group, flat_auts)


# ---------------------------------------------------------------------------
# Exponents and dividing


def exponent(group: PermGroup) -> int:
    """Least e with sigma^e = id for every sigma: the lcm of element orders."""
    return math.lcm(*group.element_orders()) if group.order else 1


def _generating_sequence(group: PermGroup) -> list[Perm]:
    gens: list[Perm] = []
    span = generate([], degree=group.degree)
    for p in group.elements:
        if p not in span:
            gens.append(p)
            span = generate(gens, group.degree)
            if span.order == group.order:
                break
    return gens


def _hom_from_gen_images(group: PermGroup, gens: list[Perm], images: list[Perm]) -> dict[Perm, Perm] | None:
    """Extend generator images to a homomorphism, or None on conflict."""
    ident = Perm.identity(group.degree)
    mapping = {ident: Perm.identity(images[0].degree) if images else ident}
    frontier = [ident]
    while frontier:
        nxt = []
        for x in frontier:
            for g, h in zip(gens, images):
                y = x * g
                fy = mapping[x] * h
                if y in mapping:
                    if mapping[y] != fy:
                        return None
                else:
                    mapping[y] = fy
                    nxt.append(y)
        frontier = nxt
    if len(mapping) != group.order:
        return None
    for a in group.elements:
        for b in group.elements:
            if mapping[a * b] != mapping[a] * mapping[b]:
                return None
    return mapping


def divides_check(g: PermGroup, h: PermGroup, guard: int = 48) -> tuple[PermGroup, dict[Perm, Perm]] | None:
    """A subgroup of g with a surjective homomorphism onto h, or None.

    Fast negative: an element order in h that does not divide the exponent of
    g rules out any surjection from any subgroup.  Otherwise subgroups are
    searched in canonical order and homomorphisms by backtracking over
    generator images; the first witness is returned.
    """
    exp_g = exponent(g)
    if any(exp_g % o for o in h.element_orders()):
        return None
    for sub in subgroups(g, guard):
        if sub.order % h.order:
            continue
        gens = _generating_sequence(sub)
        if not gens:
            if h.order == 1:
                return sub, {Perm.identity(g.degree): Perm.identity(h.degree)}
            continue
        candidates: list[list[Perm]] = []
        for gen in gens:
            cands = [p for p in h.elements if gen.order() % p.order() == 0]
            candidates.append(cands)

        def backtrack(idx: int, chosen: list[Perm]):
            if idx == len(gens):
                mapping = _hom_from_gen_images(sub, gens, chosen)
                if mapping is None:
                    return None
                if len(set(mapping.values())) == h.order:
                    return mapping
                return None
            for cand in candidates[idx]:
                found = backtrack(idx + 1, chosen + [cand])
                if found is not None:
                    return found
            return None

        mapping = backtrack(0, [])
        if mapping is not None:
            return sub, mapping
    return None
