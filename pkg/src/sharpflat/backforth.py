"""Back-and-forth systems on finite structures, truncated at a top arity.

A system stores, for every arity k <= n_max, a partition of the k-tuples of
the carrier.  Class ids are canonical: the class of the lexicographically
least tuple gets the least id, so equal systems have equal representations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .errors import GuardError, StructureError, ValidationFailure
from .structures import FinStructure, SubseqMap, all_subseq_maps, qf_type, subsequence


def _canonical_classes(tuples, key) -> dict[tuple[int, ...], int]:
    """Partition ``tuples`` by ``key`` with canonical (least-member-first) ids."""
    groups: dict = {}
    for t in tuples:
        groups.setdefault(key(t), []).append(t)
    out: dict[tuple[int, ...], int] = {}
    for cid, members in enumerate(sorted(groups.values(), key=lambda ms: min(ms))):
        for t in members:
            out[t] = cid
    return out


@dataclass(frozen=True)
class TruncatedSystem:
    """Arity-indexed tuple equivalences E_0..E_{n_max} on a finite structure."""

    structure: FinStructure
    n_max: int
    classes: tuple[dict[tuple[int, ...], int], ...]

    def __post_init__(self):
        if self.n_max < 1:
            raise StructureError("n_max must be at least 1")
        if len(self.classes) != self.n_max + 1:
            raise StructureError("need one partition per arity 0..n_max")
        if self.classes[0] != {(): 0}:
            raise StructureError("E_0 must be the single class of the empty tuple")
        for k in range(self.n_max + 1):
            expected = self.structure.size**k
            if len(self.classes[k]) != expected:
                raise StructureError(f"E_{k} must partition all {expected} tuples")

    def class_of(self, t: tuple[int, ...]) -> int:
        return self.classes[len(t)][t]

    def related(self, a: tuple[int, ...], b: tuple[int, ...]) -> bool:
        if len(a) != len(b):
            raise StructureError("tuples of unequal length are never related")
        return self.classes[len(a)][a] == self.classes[len(a)][b]

    def class_count(self, k: int) -> int:
        return len(set(self.classes[k].values()))

    def class_members(self, k: int) -> dict[int, list[tuple[int, ...]]]:
        members: dict[int, list] = {}
        for t in sorted(self.classes[k]):
            members.setdefault(self.classes[k][t], []).append(t)
        return members

    def pairs(self, k: int):
        """All related ordered pairs at arity k."""
        for members in self.class_members(k).values():
            for a in members:
                for b in members:
                    yield (a, b)

    def same_partitions(self, other: TruncatedSystem) -> bool:
        """Partition-for-partition equality (class ids are canonical)."""
        return self.n_max == other.n_max and self.classes == other.classes

    def refines(self, other: TruncatedSystem) -> bool:
        """Every class of self is contained in a class of other."""
        if self.n_max > other.n_max:
            return False
        for k in range(self.n_max + 1):
            rep: dict[int, int] = {}
            for t, cid in self.classes[k].items():
                ocid = other.classes[k][t]
                if rep.setdefault(cid, ocid) != ocid:
                    return False
        return True

    @staticmethod
    def from_key(structure: FinStructure, n_max: int, key) -> TruncatedSystem:
        classes = tuple(
            _canonical_classes(itertools.product(range(structure.size), repeat=k), key)
            for k in range(n_max + 1)
        )
        return TruncatedSystem(structure, n_max, classes)

    @staticmethod
    def normalize(structure: FinStructure, n_max: int, raw: list[dict[tuple[int, ...], int]]) -> TruncatedSystem:
        classes = tuple(
            _canonical_classes(raw[k].keys(), lambda t, k=k: raw[k][t]) for k in range(n_max + 1)
        )
        return TruncatedSystem(structure, n_max, classes)


@dataclass(frozen=True)
class Report:
    """Outcome of a semantic check; failures carry the first witness found."""

    ok: bool
    clause: str | None = None
    witness: tuple | None = None
    detail: str = ""
    skipped: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "clause": self.clause,
            "witness": repr(self.witness) if self.witness is not None else None,
            "detail": self.detail,
            "skipped": dict(self.skipped),
        }


def validate_sharp(system: TruncatedSystem) -> Report:
    """Check q.f.-elementarity, downward closure and the extension property.

    Violations are report content, not errors; the first violated clause is
    returned with a concrete witness pair.
    """
    m = system.structure
    for k in range(system.n_max + 1):
        for cid, members in system.class_members(k).items():
            base = qf_type(m, members[0])
            for t in members[1:]:
                if qf_type(m, t) != base:
                    return Report(False, "qf-elementarity", (members[0], t),
                                  f"E_{k} relates tuples with different diagrams")
    for n in range(system.n_max + 1):
        fmaps = [f for f in all_subseq_maps(n) if f.k < n]
        for cid, members in system.class_members(n).items():
            for f in fmaps:
                base = system.class_of(subsequence(members[0], f))
                for t in members[1:]:
                    if system.class_of(subsequence(t, f)) != base:
                        return Report(False, "downward-closure", (members[0], t),
                                      f"projections by {f.values} land in different E_{f.k} classes")
    for k in range(system.n_max):
        for cid, members in system.class_members(k).items():
            def ext_profile(t):
                return {system.class_of(t + (c,)) for c in range(m.size)}
            base = ext_profile(members[0])
            for t in members[1:]:
                if ext_profile(t) != base:
                    return Report(False, "extension", (members[0], t),
                                  f"one-point extensions from E_{k} reach different E_{k + 1} classes")
    return Report(True)


def validate_backforth_pairs(pairs: set, m: FinStructure, n_max: int) -> Report:
    """Check a raw pair set against the defining back-and-forth clauses.

    The extension clause is only enforced below the truncation arity.
    """
    if not pairs:
        return Report(False, "non-empty", None, "a back-and-forth system is a non-empty set of pairs")
    for a, b in pairs:
        if len(a) != len(b):
            raise StructureError(f"pair {(a, b)} has mismatched lengths")
        if len(a) > n_max:
            raise StructureError(f"pair {(a, b)} exceeds n_max={n_max}")
        if qf_type(m, a) != qf_type(m, b):
            return Report(False, "qf-elementarity", (a, b), "pair is not q.f.-elementary")
    for a, b in sorted(pairs):
        if len(a) >= n_max:
            continue
        for c in range(m.size):
            if not any((a + (c,), b + (d,)) in pairs for d in range(m.size)):
                return Report(False, "extension", (a, b), f"no partner for extension by {c}")
        for d in range(m.size):
            if not any((a + (c,), b + (d,)) in pairs for c in range(m.size)):
                return Report(False, "extension", (a, b), f"no partner for dual extension by {d}")
    return Report(True)


def downward_closure(pairs: set) -> set:
    """Close a pair set under all subsequence maps applied to both sides."""
    closed = set()
    for a, b in pairs:
        if len(a) != len(b):
            raise StructureError(f"pair {(a, b)} has mismatched lengths")
        for f in all_subseq_maps(len(a)):
            closed.add((subsequence(a, f), subsequence(b, f)))
    return closed


def sharp_closure(pairs: set, m: FinStructure, n_max: int) -> TruncatedSystem:
    """Smallest sharp truncated system containing a back-and-forth pair set.

    Per arity, this is the reflexive-symmetric-transitive closure of the
    downward closure.  The input is validated first and rejected if it fails
    the back-and-forth clauses.
    """
    report = validate_backforth_pairs(pairs, m, n_max)
    if not report.ok:
        raise ValidationFailure(f"input is not a back-and-forth system: {report.clause} at {report.witness}")
    closed = downward_closure(pairs)
    raw = []
    for k in range(n_max + 1):
        parent: dict[tuple[int, ...], tuple[int, ...]] = {t: t for t in m.tuples(k)}

        def find(t):
            while parent[t] != t:
                parent[t] = parent[parent[t]]
                t = parent[t]
            return t

        for a, b in closed:
            if len(a) == k:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        raw.append({t: find(t) for t in parent})
    classes = tuple(_canonical_classes(raw[k].keys(), lambda t, k=k: raw[k][t]) for k in range(n_max + 1))
    return TruncatedSystem(m, n_max, classes)


def compute_F_infinity(m: FinStructure, n_max: int) -> TruncatedSystem:
    """The largest sharp truncated system, by refinement to a fixpoint.

    Start from equality of quantifier-free diagrams and repeatedly refine
    every arity by (a) the classes of all proper subsequences and (b), below
    the top arity, the set of classes reachable by one-point extensions.
    Both features are preserved by any sharp system, so the fixpoint contains
    every sharp truncated system on m; by the same token the fixpoint itself
    satisfies downward closure and the extension property.
    """
    if n_max < 1:
        raise StructureError("n_max must be at least 1")
    current: list[dict[tuple[int, ...], int]] = []
    for k in range(n_max + 1):
        diagrams: dict = {}
        part: dict[tuple[int, ...], int] = {}
        for t in m.tuples(k):
            d = qf_type(m, t)
            part[t] = diagrams.setdefault(d, len(diagrams))
        current.append(part)
    proper_maps = [[f for f in all_subseq_maps(n) if f.k < n] for n in range(n_max + 1)]
    while True:
        nxt: list[dict[tuple[int, ...], int]] = []
        changed = False
        for k in range(n_max + 1):
            def signature(t):
                down = tuple(current[f.k][subsequence(t, f)] for f in proper_maps[k])
                if k < n_max:
                    up = frozenset(current[k + 1][t + (c,)] for c in range(m.size))
                else:
                    up = None
                return (current[k][t], down, up)

            sigs: dict = {}
            part = {}
            for t in m.tuples(k):
                s = signature(t)
                part[t] = sigs.setdefault(s, len(sigs))
            if len(sigs) != len(set(current[k].values())):
                changed = True
            nxt.append(part)
        current = nxt
        if not changed:
            break
    return TruncatedSystem.normalize(m, n_max, current)


def automorphisms_bruteforce(m: FinStructure, guard: int = 8) -> list[tuple[int, ...]]:
    """All automorphisms of m by filtering the full symmetric group."""
    if m.size > guard:
        raise GuardError(f"size {m.size} exceeds automorphism enumeration guard {guard}")
    autos = []
    for images in itertools.permutations(range(m.size)):
        if any(images[m.constants[c]] != m.constants[c] for c in m.vocab.constants):
            continue
        ok = True
        for name, arity in m.vocab.relations:
            interp = m.relations[name]
            if any((tuple(images[i] for i in t) in interp) != (t in interp) for t in m.tuples(arity)):
                ok = False
                break
        if ok:
            autos.append(images)
    return autos


def orbit_oracle(m: FinStructure, n_max: int, guard: int = 8) -> TruncatedSystem:
    """Independent oracle: E_k as diagonal automorphism-orbit equivalence.

    On a finite structure, tuples are back-and-forth equivalent exactly when
    an automorphism carries one to the other, so this pins down the largest
    sharp system without any refinement machinery.
    """
    autos = automorphisms_bruteforce(m, guard)
    raw = []
    for k in range(n_max + 1):
        part: dict[tuple[int, ...], int] = {}
        for t in sorted(m.tuples(k)):
            if t in part:
                continue
            cid = len(set(part.values()))
            for sigma in autos:
                part[tuple(sigma[i] for i in t)] = cid
            part[t] = cid
        raw.append(part)
    return TruncatedSystem.normalize(m, n_max, raw)


# ---------------------------------------------------------------------------
# JSON serialization: per arity, a map from tuple (as list) to class id.


def system_to_json_doc(system: TruncatedSystem) -> dict:
    return {
        "n_max": system.n_max,
        "size": system.structure.size,
        "classes": {
            str(k): [[list(t), cid] for t, cid in sorted(system.classes[k].items())]
            for k in range(system.n_max + 1)
        },
    }


def system_from_json_doc(doc: dict, structure: FinStructure) -> TruncatedSystem:
    if doc.get("size") != structure.size:
        raise StructureError("system size does not match the carrier structure")
    n_max = doc["n_max"]
    classes = []
    for k in range(n_max + 1):
        classes.append({tuple(t): cid for t, cid in doc["classes"][str(k)]})
    return TruncatedSystem.normalize(structure, n_max, classes)
