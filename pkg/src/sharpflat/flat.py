"""Flat structures: typed points with diagrams and projection tables.

A flat structure has points partitioned by arity into levels U_0..U_n_max;
each point carries the complete quantifier-free diagram of the tuples it
stands for, and for every injective f: k -> n a hardwired projection to U_k.
Flattening a sharp system produces one; the axiom checker recognizes the
abstract ones (in bounded mode, with skipped instances counted).
"""
from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field

from .backforth import Report, TruncatedSystem, validate_sharp
from .errors import FlatnessError, StructureError, TruncationError, ValidationFailure
from .structures import (
    And,
    ConstEq,
    Exists,
    FinStructure,
    Forall,
    Formula,
    Not,
    Or,
    QfDiagram,
    Rel,
    SubseqMap,
    VarEq,
    Vocabulary,
    all_subseq_maps,
    diagram_satisfies,
    is_quantifier_free,
    qf_type,
    subsequence,
)


@dataclass(frozen=True)
class FlatElement:
    arity: int
    diagram: QfDiagram


@dataclass(frozen=True)
class FlatStructure:
    vocab: Vocabulary
    n_max: int
    elements: tuple[FlatElement, ...]
    # per element: injective map (as its value tuple) -> image element id
    proj: tuple[dict[tuple[int, ...], int], ...]

    def __post_init__(self):
        for e in self.elements:
            if not 0 <= e.arity <= self.n_max:
                raise StructureError(f"element arity {e.arity} outside 0..{self.n_max}")
            if e.diagram.arity != e.arity:
                raise StructureError("diagram arity does not match element arity")

    def arity_of(self, x: int) -> int:
        return self.elements[x].arity

    def diagram_of(self, x: int) -> QfDiagram:
        return self.elements[x].diagram

    def level(self, n: int) -> list[int]:
        return [i for i, e in enumerate(self.elements) if e.arity == n]

    def project(self, x: int, values: tuple[int, ...]) -> int:
        try:
            return self.proj[x][values]
        except KeyError:
            raise FlatnessError(f"element {x} has no projection entry for {values}") from None

    def below(self, x: int, y: int) -> bool:
        """x <= y: x is the initial-segment projection of y."""
        return self.project(y, tuple(range(self.arity_of(x)))) == x

    def fiber(self, x: int) -> list[int]:
        """Elements of the next level whose initial-segment projection is x."""
        n = self.arity_of(x)
        key = tuple(range(n))
        return [w for w in self.level(n + 1) if self.proj[w].get(key) == x]


@dataclass(frozen=True)
class Flattening:
    """A flat structure together with the quotient maps that produced it."""

    flat: FlatStructure
    structure: FinStructure
    system: TruncatedSystem
    # element id of each (arity, class id)
    class_elements: dict[tuple[int, int], int]

    def element_of(self, t: tuple[int, ...]) -> int:
        return self.class_elements[(len(t), self.system.class_of(t))]


def flatten(m: FinStructure, system: TruncatedSystem) -> Flattening:
    """The flat structure whose level-n points are the E_n classes.

    The diagram of a class is the diagram of any member (the system is
    validated first, so this is well defined), and projections send the class
    of a tuple to the class of its subsequence.  Element ids are canonical:
    levels in arity order, classes in canonical id order within a level.
    """
    report = validate_sharp(system)
    if not report.ok:
        raise ValidationFailure(f"system is not sharp: {report.clause} at {report.witness}")
    if system.structure is not m and system.structure != m:
        raise StructureError("system was built on a different structure")
    elements: list[FlatElement] = []
    class_elements: dict[tuple[int, int], int] = {}
    reps: list[tuple[int, ...]] = []
    for n in range(system.n_max + 1):
        members = system.class_members(n)
        for cid in sorted(members):
            class_elements[(n, cid)] = len(elements)
            rep = min(members[cid])
            reps.append(rep)
            elements.append(FlatElement(n, qf_type(m, rep)))
    proj: list[dict[tuple[int, ...], int]] = []
    for x, rep in enumerate(reps):
        n = len(rep)
        table = {}
        for f in all_subseq_maps(n):
            sub = subsequence(rep, f)
            table[f.values] = class_elements[(f.k, system.class_of(sub))]
        proj.append(table)
    flat = FlatStructure(m.vocab, system.n_max, tuple(elements), tuple(proj))
    return Flattening(flat, m, system, class_elements)


# ---------------------------------------------------------------------------
# Formula translation and evaluation on flat structures


@dataclass(frozen=True)
class FLeaf:
    """A quantifier-free test, decided by the diagram of a level-n point."""

    n: int
    qf: Formula


@dataclass(frozen=True)
class FNot:
    sub: FlatFormula

    @property
    def n(self) -> int:
        return self.sub.n


@dataclass(frozen=True)
class FAnd:
    subs: tuple[FlatFormula, ...]
    n: int


@dataclass(frozen=True)
class FOr:
    subs: tuple[FlatFormula, ...]
    n: int


@dataclass(frozen=True)
class FExists:
    """Witness search one level up, tied back by the initial-segment projection."""

    n: int
    body: FlatFormula


FlatFormula = FLeaf | FNot | FAnd | FOr | FExists


def translate(phi: Formula) -> FlatFormula:
    """Structural translation of a formula into its single-point form.

    Quantifier-free subformulas become diagram tests; an existential over the
    next variable becomes a search of the level above, constrained to project
    back onto the current point.  Universals are rewritten as negated
    existentials first.
    """
    if is_quantifier_free(phi):
        return FLeaf(phi.n, phi)
    if isinstance(phi, Not):
        return FNot(translate(phi.sub))
    if isinstance(phi, And):
        return FAnd(tuple(translate(s) for s in phi.subs), phi.n)
    if isinstance(phi, Or):
        return FOr(tuple(translate(s) for s in phi.subs), phi.n)
    if isinstance(phi, Exists):
        return FExists(phi.n, translate(phi.body))
    if isinstance(phi, Forall):
        return FNot(FExists(phi.n, translate(Not(phi.body))))
    raise StructureError(f"not a formula node: {phi!r}")


def flat_formula_depth(ff: FlatFormula) -> int:
    """Greatest arity the evaluation of ff can touch."""
    if isinstance(ff, FLeaf):
        return ff.n
    if isinstance(ff, FNot):
        return flat_formula_depth(ff.sub)
    if isinstance(ff, (FAnd, FOr)):
        return max((flat_formula_depth(s) for s in ff.subs), default=ff.n)
    return flat_formula_depth(ff.body)


def eval_flat(b: FlatStructure, ff: FlatFormula, x: int) -> bool:
    """Evaluate a translated formula at a point of the matching level."""
    if b.arity_of(x) != ff.n:
        raise StructureError(f"point has arity {b.arity_of(x)}, formula expects {ff.n}")
    return _eval_flat(b, ff, x)


def _eval_flat(b: FlatStructure, ff: FlatFormula, x: int) -> bool:
    if isinstance(ff, FLeaf):
        return diagram_satisfies(b.diagram_of(x), ff.qf)
    if isinstance(ff, FNot):
        return not _eval_flat(b, ff.sub, x)
    if isinstance(ff, FAnd):
        return all(_eval_flat(b, s, x) for s in ff.subs)
    if isinstance(ff, FOr):
        return any(_eval_flat(b, s, x) for s in ff.subs)
    if isinstance(ff, FExists):
        if ff.n + 1 > b.n_max:
            raise TruncationError(f"existential descent needs level {ff.n + 1} beyond n_max={b.n_max}")
        key = tuple(range(ff.n))
        return any(
            _eval_flat(b, ff.body, w)
            for w in b.level(ff.n + 1)
            if b.proj[w][key] == x
        )
    raise StructureError(f"not a flat formula node: {ff!r}")


# ---------------------------------------------------------------------------
# Axiom checker


@functools.lru_cache(maxsize=None)
def _pullback(diagram: QfDiagram, values: tuple[int, ...], vocab: Vocabulary) -> QfDiagram:
    return diagram.pullback(values, vocab)


def check_flat_axioms(b: FlatStructure) -> Report:
    """Check the seven axiom groups of flat structures, in bounded mode.

    Amalgamation and duplication instances whose target level exceeds n_max
    are skipped and counted, as are function-axiom sentences whose quantifier
    depth does not fit.  The first failure is reported with a witness.
    """
    skipped = {"amalgamation": 0, "duplication": 0, "functions": 0}
    levels = {n: b.level(n) for n in range(b.n_max + 1)}

    # 1a: levels partition the universe (structural) and U_0 is a single point.
    if len(levels[0]) != 1:
        return Report(False, "structural-1a", tuple(levels[0]),
                      f"expected exactly one point of arity 0, found {len(levels[0])}", skipped)
    root = levels[0][0]

    # 1b: a total projection per injective map, landing in the right level.
    for x, e in enumerate(b.elements):
        expected = {f.values: f.k for f in all_subseq_maps(e.arity)}
        if set(b.proj[x]) != set(expected):
            missing = set(expected) - set(b.proj[x])
            extra = set(b.proj[x]) - set(expected)
            return Report(False, "structural-1b", (x, tuple(sorted(missing | extra))),
                          "projection table does not match the injective maps", skipped)
        for values, k in expected.items():
            y = b.proj[x][values]
            if not 0 <= y < len(b.elements) or b.arity_of(y) != k:
                return Report(False, "structural-1b", (x, values),
                              f"projection by {values} does not land in level {k}", skipped)

    # 1c: the identity map projects to the point itself.
    for x, e in enumerate(b.elements):
        if b.proj[x][tuple(range(e.arity))] != x:
            return Report(False, "structural-1c", (x,), "identity projection is not the identity", skipped)

    # 1d: diagrams are complete quantifier-free types (constructive witness).
    for x, e in enumerate(b.elements):
        if not e.diagram.realizable(b.vocab):
            return Report(False, "structural-1d", (x,), "diagram is not a realizable complete type", skipped)

    # 2a: contravariant composition of projections.
    for x in range(len(b.elements)):
        for g_values, mid in b.proj[x].items():
            for f_values, target in b.proj[mid].items():
                comp = tuple(g_values[v] for v in f_values)
                if b.proj[x][comp] != target:
                    return Report(False, "relational-2a", (x, g_values, f_values),
                                  "projection composition fails", skipped)

    # 2b: the diagram of a projection is the pullback of the diagram.
    for x, e in enumerate(b.elements):
        for f in all_subseq_maps(e.arity):
            want = _pullback(e.diagram, f.values, b.vocab)
            if b.diagram_of(b.proj[x][f.values]) != want:
                return Report(False, "relational-2b", (x, f.values),
                              "projected diagram is not the pullback", skipped)

    # 3: equal-variable maps project equally.
    for x, e in enumerate(b.elements):
        n = e.arity
        for k in range(1, n + 1):
            for fv in itertools.permutations(range(n), k):
                for gv in itertools.permutations(range(n), k):
                    if fv >= gv:
                        continue
                    if all(e.diagram.same_class(fv[i], gv[i]) for i in range(k)):
                        if b.proj[x][fv] != b.proj[x][gv]:
                            return Report(False, "equality", (x, fv, gv),
                                          "diagram forces equal projections", skipped)

    # 4: amalgamation over initial segments, within the arity bound.
    above: dict[int, dict[int, list[int]]] = {x: {} for x in range(len(b.elements))}
    for y, e in enumerate(b.elements):
        for k in range(e.arity + 1):
            x = b.proj[y][tuple(range(k))]
            above[x].setdefault(e.arity, []).append(y)
    for a, e in enumerate(b.elements):
        k = e.arity
        for n in sorted(above[a]):
            for m_ in sorted(above[a]):
                if n + m_ - k > b.n_max:
                    skipped["amalgamation"] += len(above[a][n]) * len(above[a][m_])
                    continue
                v = tuple(list(range(k)) + [n + i - k for i in range(k, m_)])
                for x in above[a][n]:
                    over_x = above[x].get(n + m_ - k, [])
                    for c in above[a][m_]:
                        if not any(b.proj[d][v] == c for d in over_x):
                            return Report(False, "amalgamation", (a, x, c),
                                          "no amalgam above the two extensions", skipped)

    # 5: duplication: every level-1 point has a doubled point above it.
    if b.n_max < 2:
        skipped["duplication"] += len(levels[1])
    else:
        for a in levels[1]:
            found = any(
                b.proj[w][(0,)] == a and b.proj[w][(1,)] == a and b.diagram_of(w).same_class(0, 1)
                for w in levels[2]
            )
            if not found:
                return Report(False, "duplication", (a,), "no doubled point above", skipped)

    # 6: constants are realized at level 1 over the root.
    for c in b.vocab.constants:
        found = any(
            (c, 0) in b.diagram_of(w).consts and b.proj[w][()] == root
            for w in levels[1]
        )
        if not found:
            return Report(False, "constants", (c,), f"no level-1 point realizing x0 = {c}", skipped)

    # 7: function graphs are total and functional, via translated sentences.
    for name, k in b.vocab.function_graphs:
        if k + 1 > b.n_max:
            skipped["functions"] += 1
        else:
            totality: Formula = Exists(Rel(name, tuple(range(k + 1)), k + 1))
            for _ in range(k):
                totality = Forall(totality)
            if not eval_flat(b, translate(totality), root):
                return Report(False, "functions", (name, "totality"),
                              f"graph relation {name!r} is not total", skipped)
        if k + 2 > b.n_max:
            skipped["functions"] += 1
        else:
            body = Or(
                (
                    Not(Rel(name, tuple(range(k + 1)), k + 2)),
                    Not(Rel(name, tuple(range(k)) + (k + 1,), k + 2)),
                    VarEq(k, k + 1, k + 2),
                )
            )
            functional: Formula = body
            for _ in range(k + 2):
                functional = Forall(functional)
            if not eval_flat(b, translate(functional), root):
                return Report(False, "functions", (name, "functionality"),
                              f"graph relation {name!r} is not functional", skipped)
    return Report(True, skipped=skipped)


# ---------------------------------------------------------------------------
# Blowups and generalized projections


def blowup(b: FlatStructure, a: int, fstar: tuple[int, ...]) -> int:
    """The unique point of level m+n extending a with x_{fstar(i)} = x_{m+i}.

    ``fstar`` is an arbitrary (not necessarily injective) map n -> m given by
    its value tuple.  The witness is found by exhaustive search; no witness
    means the input is not flat, several mean it is corrupt.
    """
    m = b.arity_of(a)
    n = len(fstar)
    if any(not 0 <= v < m for v in fstar):
        raise StructureError(f"blowup map {fstar} out of range for arity {m}")
    if m + n > b.n_max:
        raise TruncationError(f"blowup needs level {m + n} beyond n_max={b.n_max}")
    witnesses = []
    for c in b.level(m + n):
        if b.proj[c][tuple(range(m))] != a:
            continue
        d = b.diagram_of(c)
        if all(d.same_class(fstar[i], m + i) for i in range(n)):
            witnesses.append(c)
    if not witnesses:
        raise FlatnessError(f"no blowup witness for element {a} by {fstar}")
    if len(witnesses) > 1:
        raise FlatnessError(f"multiple blowup witnesses for element {a} by {fstar}: {witnesses}")
    return witnesses[0]


def gen_projection(b: FlatStructure, a: int, fstar: tuple[int, ...]) -> int:
    """The generalized projection by an arbitrary map: blow up, then shift.

    For injective maps this agrees with the hardwired projection table.
    """
    m = b.arity_of(a)
    n = len(fstar)
    c = blowup(b, a, fstar)
    shift = tuple(m + i for i in range(n))
    return b.proj[c][shift]


# ---------------------------------------------------------------------------
# Hausdorff detection by color refinement


@dataclass(frozen=True)
class HausdorffResult:
    hausdorff: bool
    witness: tuple[int, int] | None = None


def hausdorff_check(b: FlatStructure) -> HausdorffResult:
    """Decide whether translated formulas separate all points.

    Color refinement: points start colored by (arity, diagram) and are
    refined by the colors of their projections (kept labeled by the
    projection map) and by the set of colors in the fiber one level up.
    These features track exactly what single-point formulas can express, so
    the fixpoint coloring is discrete iff the structure is Hausdorff.  When
    it is not, a non-separated pair is returned.
    """
    n_elems = len(b.elements)
    palette: dict = {}
    colors = []
    for e in b.elements:
        key = (e.arity, e.diagram)
        colors.append(palette.setdefault(key, len(palette)))
    fibers: list[list[int]] = [[] for _ in range(n_elems)]
    for w, e in enumerate(b.elements):
        if e.arity >= 1:
            fibers[b.proj[w][tuple(range(e.arity - 1))]].append(w)
    while True:
        palette = {}
        nxt = []
        for x, e in enumerate(b.elements):
            feature = (
                colors[x],
                tuple(sorted((values, colors[y]) for values, y in b.proj[x].items())),
                frozenset(colors[w] for w in fibers[x]),
            )
            nxt.append(palette.setdefault(feature, len(palette)))
        if len(set(nxt)) == len(set(colors)):
            colors = nxt
            break
        colors = nxt
    seen: dict[int, int] = {}
    for x in range(n_elems):
        if colors[x] in seen:
            return HausdorffResult(False, (seen[colors[x]], x))
        seen[colors[x]] = x
    return HausdorffResult(True)


# ---------------------------------------------------------------------------
# Isomorphisms, automorphisms, surjective homomorphisms (backtracking)


def _flat_maps(b1: FlatStructure, b2: FlatStructure, *, injective: bool, limit: int | None):
    """Backtracking search for structure-preserving maps b1 -> b2.

    Maps must preserve arity and diagram and commute with every projection.
    Elements are assigned in order of ascending arity, so all proper
    projections of an element are already pinned when it is tried.
    """
    if b1.vocab != b2.vocab or b1.n_max != b2.n_max:
        return
    order = sorted(range(len(b1.elements)), key=lambda x: (b1.arity_of(x), x))
    candidates: list[list[int]] = []
    by_key: dict = {}
    for y, e in enumerate(b2.elements):
        by_key.setdefault((e.arity, e.diagram), []).append(y)
    for x in order:
        e = b1.elements[x]
        candidates.append(by_key.get((e.arity, e.diagram), []))
    assignment: dict[int, int] = {}
    used: set[int] = set()
    results: list[dict[int, int]] = []

    def commutes_fully() -> bool:
        return all(
            b2.proj[assignment[x]][values] == assignment[sub]
            for x in range(len(b1.elements))
            for values, sub in b1.proj[x].items()
        )

    def extend(pos: int) -> bool:
        if pos == len(order):
            if commutes_fully():
                results.append(dict(assignment))
            return limit is not None and len(results) >= limit
        x = order[pos]
        for y in candidates[pos]:
            if injective and y in used:
                continue
            ok = True
            for values, sub in b1.proj[x].items():
                # same-arity permutation projections may target ids assigned
                # later; those are caught by the final full check
                if sub in assignment and b2.proj[y][values] != assignment[sub]:
                    ok = False
                    break
            if ok:
                assignment[x] = y
                used.add(y)
                if extend(pos + 1):
                    return True
                used.discard(y)
                del assignment[x]
        return False

    extend(0)
    yield from results


def flat_isomorphism(b1: FlatStructure, b2: FlatStructure) -> dict[int, int] | None:
    """An isomorphism b1 -> b2, or None.  Same-size check makes it onto."""
    if len(b1.elements) != len(b2.elements):
        return None
    for phi in _flat_maps(b1, b2, injective=True, limit=1):
        return phi
    return None


def flat_automorphisms(b: FlatStructure) -> list[dict[int, int]]:
    return list(_flat_maps(b, b, injective=True, limit=None))


def surjective_homomorphisms(b1: FlatStructure, b2: FlatStructure) -> list[dict[int, int]]:
    """All arity-, diagram- and projection-preserving onto maps b1 -> b2."""
    out = []
    n2 = len(b2.elements)
    for phi in _flat_maps(b1, b2, injective=False, limit=None):
        if len(set(phi.values())) == n2:
            out.append(phi)
    return out


# ---------------------------------------------------------------------------
# JSON serialization


def _diagram_to_doc(d: QfDiagram) -> dict:
    return {
        "arity": d.arity,
        "eq": list(d.eq),
        "atoms": sorted([name, list(idx)] for name, idx in d.atoms),
        "consts": sorted([c, i] for c, i in d.consts),
    }


def _diagram_from_doc(doc: dict) -> QfDiagram:
    return QfDiagram(
        doc["arity"],
        tuple(doc["eq"]),
        frozenset((name, tuple(idx)) for name, idx in doc["atoms"]),
        frozenset((c, i) for c, i in doc["consts"]),
    )


def flat_to_json(b: FlatStructure) -> str:
    doc = {
        "n_max": b.n_max,
        "vocab": {
            "relations": [list(r) for r in b.vocab.relations],
            "constants": list(b.vocab.constants),
            "function_graphs": [list(g) for g in b.vocab.function_graphs],
        },
        "elements": [
            {
                "arity": e.arity,
                "diagram": _diagram_to_doc(e.diagram),
                "proj": {",".join(map(str, values)): y for values, y in sorted(b.proj[x].items())},
            }
            for x, e in enumerate(b.elements)
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def flat_from_json(text: str) -> FlatStructure:
    doc = json.loads(text)
    vocab = Vocabulary(
        relations=tuple((n, a) for n, a in doc["vocab"]["relations"]),
        constants=tuple(doc["vocab"]["constants"]),
        function_graphs=tuple((n, a) for n, a in doc["vocab"].get("function_graphs", [])),
    )
    elements = []
    proj = []
    for spec in doc["elements"]:
        elements.append(FlatElement(spec["arity"], _diagram_from_doc(spec["diagram"])))
        table = {}
        for key, y in spec["proj"].items():
            values = tuple(int(v) for v in key.split(",")) if key else ()
            table[values] = y
        proj.append(table)
    return FlatStructure(vocab, doc["n_max"], tuple(elements), tuple(proj))
