"""Finite relational structures, quantifier-free diagrams, and a formula AST.

Universes are always 0..size-1.  Tuples of elements are plain python tuples;
the empty tuple is legal everywhere (arity 0).  All values are immutable after
construction and every operation is pure.
"""
from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field

from .errors import ParseError, StructureError


@dataclass(frozen=True)
class Vocabulary:
    """A finite vocabulary of relation, constant and function symbols.

    Function symbols are accepted only as input to :func:`relationalize`;
    everything downstream assumes a purely relational+constants vocabulary.
    ``function_graphs`` records relations that arose as graphs of functions,
    so the flat-axiom checker knows to test totality/functionality for them.
    """

    relations: tuple[tuple[str, int], ...] = ()
    constants: tuple[str, ...] = ()
    functions: tuple[tuple[str, int], ...] = ()
    function_graphs: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        names = [n for n, _ in self.relations] + list(self.constants)
        names += [n for n, _ in self.functions]
        if len(names) != len(set(names)):
            raise StructureError("symbol names must be unique across all kinds")
        for name, arity in self.relations + self.functions:
            if arity < 1:
                raise StructureError(f"arity of {name!r} must be positive")
        for name, arity in self.function_graphs:
            if (name, arity + 1) not in self.relations:
                raise StructureError(f"function graph {name!r} has no matching relation")

    def relation_arity(self, name: str) -> int:
        for n, a in self.relations:
            if n == name:
                return a
        raise StructureError(f"unknown relation {name!r}")

    def sorted_relations(self) -> tuple[tuple[str, int], ...]:
        return tuple(sorted(self.relations))


@dataclass(frozen=True)
class FinStructure:
    """A finite structure: relation interpretations as tuple sets, constants as elements."""

    vocab: Vocabulary
    size: int
    relations: dict[str, frozenset[tuple[int, ...]]] = field(default_factory=dict)
    constants: dict[str, int] = field(default_factory=dict)
    functions: dict[str, dict[tuple[int, ...], int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.size < 1:
            raise StructureError("size must be at least 1")
        declared = dict(self.vocab.relations)
        for name, tuples in self.relations.items():
            if name not in declared:
                raise StructureError(f"unknown relation {name!r}")
            for t in tuples:
                if len(t) != declared[name]:
                    raise StructureError(f"tuple {t} has wrong arity for {name!r}")
                if any(not 0 <= i < self.size for i in t):
                    raise StructureError(f"tuple {t} of {name!r}: index out of range")
        for name in declared:
            self.relations.setdefault(name, frozenset())
        for name, value in self.constants.items():
            if name not in self.vocab.constants:
                raise StructureError(f"unknown constant {name!r}")
            if not 0 <= value < self.size:
                raise StructureError(f"constant {name!r} = {value}: index out of range")
        for name in self.vocab.constants:
            if name not in self.constants:
                raise StructureError(f"constant {name!r} not interpreted")
        declared_funs = dict(self.vocab.functions)
        for name, table in self.functions.items():
            if name not in declared_funs:
                raise StructureError(f"unknown function {name!r}")
            arity = declared_funs[name]
            for args in itertools.product(range(self.size), repeat=arity):
                if args not in table:
                    raise StructureError(f"function {name!r} not total: missing {args}")
                if not 0 <= table[args] < self.size:
                    raise StructureError(f"function {name!r}({args}): value out of range")
        for name in declared_funs:
            if name not in self.functions:
                raise StructureError(f"function {name!r} not interpreted")

    def holds(self, relation: str, args: tuple[int, ...]) -> bool:
        return args in self.relations[relation]

    def universe(self) -> range:
        return range(self.size)

    def tuples(self, arity: int):
        return itertools.product(range(self.size), repeat=arity)


@dataclass(frozen=True)
class SubseqMap:
    """An injective map k -> n picking out a subsequence of an n-tuple."""

    n: int
    values: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.values)) != len(self.values):
            raise StructureError(f"subsequence map {self.values} not injective")
        if any(not 0 <= v < self.n for v in self.values):
            raise StructureError(f"subsequence map {self.values} out of range for n={self.n}")

    @property
    def k(self) -> int:
        return len(self.values)

    @staticmethod
    def identity(n: int) -> SubseqMap:
        return SubseqMap(n, tuple(range(n)))

    @staticmethod
    def initial(k: int, n: int) -> SubseqMap:
        """The inclusion of the first k coordinates into n."""
        if k > n:
            raise StructureError(f"initial segment map needs k <= n, got {k} > {n}")
        return SubseqMap(n, tuple(range(k)))

    @staticmethod
    def shift(ell: int, n: int) -> SubseqMap:
        """The ell-shift n -> n+ell, i |-> ell+i."""
        return SubseqMap(n + ell, tuple(ell + i for i in range(n)))

    def compose(self, inner: SubseqMap) -> SubseqMap:
        """self o inner, where inner: k -> self.k and self: self.k -> self.n."""
        if inner.n != self.k:
            raise StructureError("subsequence maps not composable")
        return SubseqMap(self.n, tuple(self.values[v] for v in inner.values))


@functools.lru_cache(maxsize=None)
def all_subseq_maps(n: int) -> tuple[SubseqMap, ...]:
    """Every injective map k -> n for every k <= n, in a fixed canonical order."""
    maps = []
    for k in range(n + 1):
        for values in itertools.permutations(range(n), k):
            maps.append(SubseqMap(n, values))
    return tuple(maps)


def subsequence(t: tuple[int, ...], f: SubseqMap) -> tuple[int, ...]:
    """The subsequence (t[f(0)], ..., t[f(k-1)])."""
    if len(t) != f.n:
        raise StructureError(f"tuple of length {len(t)} does not match map domain n={f.n}")
    return tuple(t[v] for v in f.values)


def apply_map(t: tuple[int, ...], values: tuple[int, ...]) -> tuple[int, ...]:
    """Like subsequence but for an arbitrary (not necessarily injective) index map."""
    return tuple(t[v] for v in values)


# ---------------------------------------------------------------------------
# Quantifier-free diagrams


@dataclass(frozen=True)
class QfDiagram:
    """The complete atomic diagram of an n-tuple.

    ``eq[i]`` is the least index equality-equivalent to i.  ``atoms`` holds
    every true relation atom over variable indices (absent means false), and
    ``consts`` every true assertion x_i = c as a (name, i) pair.  Complete
    means: any quantifier-free formula over variables x_0..x_{n-1} is decided.
    """

    arity: int
    eq: tuple[int, ...]
    atoms: frozenset[tuple[str, tuple[int, ...]]]
    consts: frozenset[tuple[str, int]]

    def same_class(self, i: int, j: int) -> bool:
        return self.eq[i] == self.eq[j]

    def pullback(self, values: tuple[int, ...], vocab: Vocabulary) -> QfDiagram:
        """The diagram of the retupled sequence (x_{values[0]}, ...).

        ``values`` may repeat indices; the result is the diagram any tuple t
        with this diagram induces on (t[values[0]], ..., t[values[k-1]]).
        """
        k = len(values)
        eq = _canonical_eq([[self.eq[values[i]] == self.eq[values[j]] for j in range(k)] for i in range(k)])
        atoms = set()
        for name, r in vocab.relations:
            for idx in itertools.product(range(k), repeat=r):
                if (name, tuple(values[i] for i in idx)) in self.atoms:
                    atoms.add((name, idx))
        consts = frozenset((c, i) for i in range(k) for c in vocab.constants if (c, values[i]) in self.consts)
        return QfDiagram(k, eq, frozenset(atoms), consts)

    def realizable(self, vocab: Vocabulary) -> bool:
        """Whether some finite structure and tuple satisfy exactly these atoms.

        Checked constructively: atoms must be invariant under substituting
        equality-equivalent indices, and no constant may be asserted equal to
        two inequivalent variables.  The quotient of the variables (plus a
        fresh point per unbound constant) is then a witness.
        """
        n = self.arity
        for name, idx in self.atoms:
            for alt in itertools.product(*[[j for j in range(n) if self.eq[j] == self.eq[i]] for i in idx]):
                if (name, alt) not in self.atoms:
                    return False
        for c in vocab.constants:
            bound = {self.eq[i] for (name, i) in self.consts if name == c}
            if len(bound) > 1:
                return False
            for name, i in self.consts:
                if name == c:
                    for j in range(n):
                        if self.eq[j] == self.eq[i] and (c, j) not in self.consts:
                            return False
        return True


def _canonical_eq(related) -> tuple[int, ...]:
    n = len(related)
    return tuple(min(j for j in range(n) if related[i][j]) for i in range(n))


def qf_type(m: FinStructure, t: tuple[int, ...]) -> QfDiagram:
    """The complete quantifier-free diagram of the tuple t in m."""
    n = len(t)
    if any(not 0 <= a < m.size for a in t):
        raise StructureError(f"tuple {t} out of range for size {m.size}")
    eq = _canonical_eq([[t[i] == t[j] for j in range(n)] for i in range(n)])
    atoms = set()
    for name, r in m.vocab.relations:
        interp = m.relations[name]
        for idx in itertools.product(range(n), repeat=r):
            if tuple(t[i] for i in idx) in interp:
                atoms.add((name, idx))
    consts = frozenset((c, i) for i in range(n) for c in m.vocab.constants if t[i] == m.constants[c])
    return QfDiagram(n, eq, frozenset(atoms), consts)


# ---------------------------------------------------------------------------
# Formulas

# Each node carries ``n``, the number of free variable slots x_0..x_{n-1};
# quantifiers always bind the next slot: Exists(body) with body.n == n+1 has
# free bound n.  A node may declare more slots than it mentions (padding).


@dataclass(frozen=True)
class Rel:
    name: str
    args: tuple[int, ...]
    n: int

    def __post_init__(self):
        if any(not 0 <= a < self.n for a in self.args):
            raise StructureError(f"relation argument out of free-variable bound {self.n}")


@dataclass(frozen=True)
class VarEq:
    i: int
    j: int
    n: int

    def __post_init__(self):
        if not (0 <= self.i < self.n and 0 <= self.j < self.n):
            raise StructureError(f"variable index out of free-variable bound {self.n}")


@dataclass(frozen=True)
class ConstEq:
    i: int
    const: str
    n: int

    def __post_init__(self):
        if not 0 <= self.i < self.n:
            raise StructureError(f"variable index out of free-variable bound {self.n}")


@dataclass(frozen=True)
class Not:
    sub: Formula

    @property
    def n(self) -> int:
        return self.sub.n


@dataclass(frozen=True)
class And:
    subs: tuple[Formula, ...]
    n: int = -1

    def __post_init__(self):
        if self.n == -1:
            object.__setattr__(self, "n", max((s.n for s in self.subs), default=0))
        if any(s.n > self.n for s in self.subs):
            raise StructureError("conjunct exceeds declared free-variable bound")


@dataclass(frozen=True)
class Or:
    subs: tuple[Formula, ...]
    n: int = -1

    def __post_init__(self):
        if self.n == -1:
            object.__setattr__(self, "n", max((s.n for s in self.subs), default=0))
        if any(s.n > self.n for s in self.subs):
            raise StructureError("disjunct exceeds declared free-variable bound")


@dataclass(frozen=True)
class Exists:
    body: Formula

    def __post_init__(self):
        if self.body.n < 1:
            raise StructureError("quantifier needs a variable slot to bind")

    @property
    def n(self) -> int:
        return self.body.n - 1


@dataclass(frozen=True)
class Forall:
    body: Formula

    def __post_init__(self):
        if self.body.n < 1:
            raise StructureError("quantifier needs a variable slot to bind")

    @property
    def n(self) -> int:
        return self.body.n - 1


Formula = Rel | VarEq | ConstEq | Not | And | Or | Exists | Forall


def is_quantifier_free(phi: Formula) -> bool:
    if isinstance(phi, (Rel, VarEq, ConstEq)):
        return True
    if isinstance(phi, Not):
        return is_quantifier_free(phi.sub)
    if isinstance(phi, (And, Or)):
        return all(is_quantifier_free(s) for s in phi.subs)
    return False


def quantifier_rank(phi: Formula) -> int:
    if isinstance(phi, (Rel, VarEq, ConstEq)):
        return 0
    if isinstance(phi, Not):
        return quantifier_rank(phi.sub)
    if isinstance(phi, (And, Or)):
        return max((quantifier_rank(s) for s in phi.subs), default=0)
    return 1 + quantifier_rank(phi.body)


def eval_formula(m: FinStructure, phi: Formula, t: tuple[int, ...]) -> bool:
    """Tarskian satisfaction; quantifiers range over the whole universe."""
    if len(t) < phi.n:
        raise StructureError(f"assignment of length {len(t)} below free-variable bound {phi.n}")
    if isinstance(phi, Rel):
        return m.holds(phi.name, tuple(t[a] for a in phi.args))
    if isinstance(phi, VarEq):
        return t[phi.i] == t[phi.j]
    if isinstance(phi, ConstEq):
        return t[phi.i] == m.constants[phi.const]
    if isinstance(phi, Not):
        return not eval_formula(m, phi.sub, t)
    if isinstance(phi, And):
        return all(eval_formula(m, s, t) for s in phi.subs)
    if isinstance(phi, Or):
        return any(eval_formula(m, s, t) for s in phi.subs)
    if isinstance(phi, Exists):
        base = t[: phi.n]
        return any(eval_formula(m, phi.body, base + (c,)) for c in range(m.size))
    if isinstance(phi, Forall):
        base = t[: phi.n]
        return all(eval_formula(m, phi.body, base + (c,)) for c in range(m.size))
    raise StructureError(f"not a formula node: {phi!r}")


def diagram_satisfies(diagram: QfDiagram, phi: Formula) -> bool:
    """Decide a quantifier-free formula from a complete diagram alone."""
    if isinstance(phi, Rel):
        return (phi.name, phi.args) in diagram.atoms
    if isinstance(phi, VarEq):
        return diagram.same_class(phi.i, phi.j)
    if isinstance(phi, ConstEq):
        return (phi.const, phi.i) in diagram.consts
    if isinstance(phi, Not):
        return not diagram_satisfies(diagram, phi.sub)
    if isinstance(phi, And):
        return all(diagram_satisfies(diagram, s) for s in phi.subs)
    if isinstance(phi, Or):
        return any(diagram_satisfies(diagram, s) for s in phi.subs)
    raise StructureError("diagram evaluation needs a quantifier-free formula")


# ---------------------------------------------------------------------------
# Relationalizing function symbols


def relationalize(m: FinStructure) -> FinStructure:
    """Replace each k-ary function by its (k+1)-ary graph relation.

    Structures without function symbols are returned unchanged.  The output
    vocabulary records the graph relations so downstream axiom checks can
    assert totality and functionality for them.
    """
    if not m.vocab.functions:
        return m
    relations = list(m.vocab.relations)
    graphs = list(m.vocab.function_graphs)
    interp = dict(m.relations)
    for name, arity in m.vocab.functions:
        relations.append((name, arity + 1))
        graphs.append((name, arity))
        interp[name] = frozenset(args + (val,) for args, val in m.functions[name].items())
    vocab = Vocabulary(
        relations=tuple(relations),
        constants=m.vocab.constants,
        functions=(),
        function_graphs=tuple(graphs),
    )
    return FinStructure(vocab, m.size, interp, dict(m.constants), {})


# ---------------------------------------------------------------------------
# On-disk structure format
#
#   size <m>;
#   rel <name>/<arity> {(i,...),...};
#   const <name> = <i>;
#   fun <name>/<arity> {(args...)-><val>,...};
#
# Whitespace-insensitive; '#' begins a comment to end of line.  A JSON mirror
# of the same schema is accepted for files with a .json extension.


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def _advance(self, k: int):
        for _ in range(k):
            if self.pos < len(self.text) and self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def skip_ws(self):
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "#":
                while self.pos < len(self.text) and self.text[self.pos] != "\n":
                    self._advance(1)
            elif ch.isspace():
                self._advance(1)
            else:
                break

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def error(self, msg: str) -> ParseError:
        return ParseError(msg, self.line, self.col)

    def expect(self, literal: str):
        self.skip_ws()
        if not self.text.startswith(literal, self.pos):
            raise self.error(f"expected {literal!r}")
        self._advance(len(literal))

    def word(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self._advance(1)
        if self.pos == start:
            raise self.error("expected an identifier")
        return self.text[start : self.pos]

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self._advance(1)
        if self.pos == start:
            raise self.error("expected an integer")
        return int(self.text[start : self.pos])

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)


def _parse_tuple(tok: _Tokenizer) -> tuple[int, ...]:
    tok.expect("(")
    items = []
    if tok.peek() != ")":
        items.append(tok.integer())
        while tok.peek() == ",":
            tok.expect(",")
            items.append(tok.integer())
    tok.expect(")")
    return tuple(items)


def parse_structure(text: str) -> FinStructure:
    """Parse the text structure format; raises ParseError / StructureError."""
    tok = _Tokenizer(text)
    tok.expect("size")
    size = tok.integer()
    tok.expect(";")
    relations: list[tuple[str, int]] = []
    constants: list[str] = []
    functions: list[tuple[str, int]] = []
    rel_interp: dict[str, frozenset] = {}
    const_interp: dict[str, int] = {}
    fun_interp: dict[str, dict] = {}
    while not tok.at_end():
        kind = tok.word()
        if kind == "rel":
            name = tok.word()
            tok.expect("/")
            arity = tok.integer()
            tok.expect("{")
            tuples = set()
            if tok.peek() == "(":
                tuples.add(_parse_tuple(tok))
                while tok.peek() == ",":
                    tok.expect(",")
                    tuples.add(_parse_tuple(tok))
            tok.expect("}")
            tok.expect(";")
            relations.append((name, arity))
            rel_interp[name] = frozenset(tuples)
        elif kind == "const":
            name = tok.word()
            tok.expect("=")
            const_interp[name] = tok.integer()
            tok.expect(";")
            constants.append(name)
        elif kind == "fun":
            name = tok.word()
            tok.expect("/")
            arity = tok.integer()
            tok.expect("{")
            table = {}
            while tok.peek() == "(":
                args = _parse_tuple(tok)
                tok.expect("->")
                table[args] = tok.integer()
                if tok.peek() == ",":
                    tok.expect(",")
            tok.expect("}")
            tok.expect(";")
            functions.append((name, arity))
            fun_interp[name] = table
        else:
            raise tok.error(f"unknown declaration {kind!r}")
    vocab = Vocabulary(tuple(sorted(relations)), tuple(sorted(constants)), tuple(sorted(functions)))
    return FinStructure(vocab, size, rel_interp, const_interp, fun_interp)


def serialize_structure(m: FinStructure) -> str:
    """Canonical text form: sorted symbols, sorted tuples."""
    lines = [f"size {m.size};"]
    for name, arity in sorted(m.vocab.relations):
        body = ",".join("(" + ",".join(map(str, t)) + ")" for t in sorted(m.relations[name]))
        lines.append(f"rel {name}/{arity} {{{body}}};")
    for name in sorted(m.vocab.constants):
        lines.append(f"const {name} = {m.constants[name]};")
    for name, arity in sorted(m.vocab.functions):
        body = ",".join(
            "(" + ",".join(map(str, args)) + ")->" + str(val)
            for args, val in sorted(m.functions[name].items())
        )
        lines.append(f"fun {name}/{arity} {{{body}}};")
    return "\n".join(lines) + "\n"


def structure_to_json(m: FinStructure) -> str:
    doc = {
        "size": m.size,
        "relations": {
            name: {"arity": arity, "tuples": sorted(map(list, m.relations[name]))}
            for name, arity in sorted(m.vocab.relations)
        },
        "constants": {name: m.constants[name] for name in sorted(m.vocab.constants)},
        "functions": {
            name: {"arity": arity, "table": [list(args) + [val] for args, val in sorted(m.functions[name].items())]}
            for name, arity in sorted(m.vocab.functions)
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def structure_from_json(text: str) -> FinStructure:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(str(e)) from e
    try:
        relations = tuple(sorted((name, spec["arity"]) for name, spec in doc.get("relations", {}).items()))
        rel_interp = {
            name: frozenset(tuple(t) for t in spec["tuples"]) for name, spec in doc.get("relations", {}).items()
        }
        constants = tuple(sorted(doc.get("constants", {})))
        functions = tuple(sorted((name, spec["arity"]) for name, spec in doc.get("functions", {}).items()))
        fun_interp = {
            name: {tuple(row[:-1]): row[-1] for row in spec["table"]}
            for name, spec in doc.get("functions", {}).items()
        }
        vocab = Vocabulary(relations, constants, functions)
        return FinStructure(vocab, doc["size"], rel_interp, doc.get("constants", {}), fun_interp)
    except (KeyError, TypeError) as e:
        raise ParseError(f"malformed structure document: {e}") from e


def relabel_structure(m: FinStructure, images: tuple[int, ...]) -> FinStructure:
    """The isomorphic copy of m along the permutation i -> images[i]."""
    if sorted(images) != list(range(m.size)):
        raise StructureError(f"{images} is not a permutation of the universe")
    relations = {
        name: frozenset(tuple(images[i] for i in t) for t in tuples)
        for name, tuples in m.relations.items()
    }
    constants = {name: images[v] for name, v in m.constants.items()}
    functions = {
        name: {tuple(images[i] for i in args): images[val] for args, val in table.items()}
        for name, table in m.functions.items()
    }
    return FinStructure(m.vocab, m.size, relations, constants, functions)


def load_structure(path: str) -> FinStructure:
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        return structure_from_json(text)
    return parse_structure(text)
