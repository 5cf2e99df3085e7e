"""AMR graphs in Penman notation: parsing, validation and serialization.

A graph is stored as a root variable, a variable -> concept map and an ordered
list of ``(source, relation, target)`` edges. Targets are either variable names
(``str``) or :class:`Constant` values. Relations are stored without the leading
colon and inverse roles (``ARG0-of``) are kept exactly as written.

    >>> g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))")
    >>> g.edges
    (('w', 'ARG0', 'b'), ('w', 'ARG1', 'g'), ('g', 'ARG0', 'b'))
    >>> serialize_penman(g, indent=None)
    '(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))'
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Union

__all__ = [
    "AmrGraph",
    "Constant",
    "Violation",
    "PenmanError",
    "PenmanSyntaxError",
    "UnbalancedParens",
    "DuplicateVariableConcept",
    "DanglingReference",
    "EmptyGraph",
    "InvalidGraph",
    "parse_penman",
    "serialize_penman",
    "validate",
    "read_penman",
    "iter_penman_blocks",
    "load_penman_file",
]

# bare symbols that look like variables are treated as (possibly dangling)
# references; anything else unquoted is a constant (numbers, -, imperative, ...)
_VARIABLE_STRICT = re.compile(r"^[a-z][0-9]*$|^[a-z]+[0-9]+$")


class PenmanError(ValueError):
    """Base class for Penman ingestion errors."""


class PenmanSyntaxError(PenmanError):
    pass


class UnbalancedParens(PenmanSyntaxError):
    pass


class DuplicateVariableConcept(PenmanError):
    pass


class DanglingReference(PenmanError):
    pass


class EmptyGraph(PenmanError):
    pass


class InvalidGraph(PenmanError):
    pass


@dataclass(frozen=True)
class Constant:
    """Attribute value such as ``6``, ``-`` or ``"Paris"``."""

    value: str
    quoted: bool = False

    def __str__(self) -> str:
        if self.quoted:
            escaped = self.value.replace("\\", "\\\\").replace('"', '\\"')
            return f'"{escaped}"'
        return self.value


Target = Union[str, Constant]
Edge = tuple[str, str, Target]


class Violation(NamedTuple):
    kind: str
    message: str


@dataclass(frozen=True, eq=False)
class AmrGraph:
    root: str
    instances: dict[str, str]
    edges: tuple[Edge, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "instances", dict(self.instances))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def variables(self) -> list[str]:
        return list(self.instances)

    @property
    def constants(self) -> set[Constant]:
        return {t for _, _, t in self.edges if isinstance(t, Constant)}

    def constant_node_id(self, edge_index: int) -> str:
        """Node id of the constant at ``edges[edge_index]``.

        Every constant occurrence is its own node; ids start with ``@`` so they
        can never collide with a variable name.
        """
        return f"@{edge_index}"

    def node_ids(self) -> list[str]:
        """Variables followed by one id per constant-valued edge."""
        ids = list(self.instances)
        ids.extend(
            self.constant_node_id(i)
            for i, (_, _, t) in enumerate(self.edges)
            if isinstance(t, Constant)
        )
        return ids

    def edge_endpoints(self, edge_index: int) -> tuple[str, str]:
        """Node ids of both ends of an edge (constants mapped to their ``@`` id)."""
        source, _, target = self.edges[edge_index]
        if isinstance(target, Constant):
            return source, self.constant_node_id(edge_index)
        return source, target

    def node_label(self, node_id: str) -> str:
        if node_id.startswith("@"):
            return self.edges[int(node_id[1:])][2].value
        return self.instances[node_id]

    def triples(self) -> set[tuple[str, str, str]]:
        """Instance and edge triples, constants rendered as their Penman text."""
        out = {(v, "instance", c) for v, c in self.instances.items()}
        out.update((s, r, str(t)) for s, r, t in self.edges)
        return out

    def __eq__(self, other):
        if not isinstance(other, AmrGraph):
            return NotImplemented
        return (
            self.root == other.root
            and self.instances == other.instances
            and self.edges == other.edges
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"AmrGraph({serialize_penman(self, indent=None)!r})"


# -- lexing ------------------------------------------------------------------


class _Token(NamedTuple):
    kind: str  # one of ( ) / role str sym
    text: str
    pos: int


def _lex(text: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()/":
            tokens.append(_Token(ch, ch, i))
            i += 1
        elif ch == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    j += 1
                buf.append(text[j])
                j += 1
            if j >= n:
                raise PenmanSyntaxError(f"unterminated string starting at offset {i}")
            tokens.append(_Token("str", "".join(buf), i))
            i = j + 1
        elif ch == ":":
            j = i + 1
            while j < n and not text[j].isspace() and text[j] not in '()"':
                j += 1
            if j == i + 1:
                raise PenmanSyntaxError(f"empty role at offset {i}")
            tokens.append(_Token("role", text[i + 1 : j], i))
            i = j
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in '()"':
                j += 1
            tokens.append(_Token("sym", text[i:j], i))
            i = j
    return tokens


# -- parsing -----------------------------------------------------------------


def parse_penman(text: str) -> AmrGraph:
    """Parse a single Penman expression into an :class:`AmrGraph`.

    Bare variable references create edges to the existing node. Raises
    :class:`UnbalancedParens`, :class:`DuplicateVariableConcept`,
    :class:`DanglingReference` or :class:`EmptyGraph`.
    """
    tokens = _lex(text)
    if not tokens:
        raise EmptyGraph("no graph in input")
    depth = 0
    for tok in tokens:
        if tok.kind == "(":
            depth += 1
        elif tok.kind == ")":
            depth -= 1
            if depth < 0:
                raise UnbalancedParens(f"unexpected ')' at offset {tok.pos}")
    if depth != 0:
        raise UnbalancedParens(f"{depth} unclosed '(' in input")
    if tokens[0].kind != "(":
        raise PenmanSyntaxError("graph must start with '('")

    instances: dict[str, str] = {}
    edges: list[tuple[str, str, object]] = []
    pos = 0

    def expect(kind: str) -> _Token:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos].kind != kind:
            where = tokens[pos].pos if pos < len(tokens) else len(text)
            raise PenmanSyntaxError(f"expected {kind!r} at offset {where}")
        tok = tokens[pos]
        pos += 1
        return tok

    def node() -> str:
        nonlocal pos
        expect("(")
        var = expect("sym").text
        expect("/")
        if pos < len(tokens) and tokens[pos].kind in ("sym", "str"):
            concept = tokens[pos].text
            pos += 1
        else:
            raise PenmanSyntaxError(f"missing concept for variable {var!r}")
        previous = instances.get(var)
        if previous is not None and previous != concept:
            raise DuplicateVariableConcept(
                f"variable {var!r} declared as both {previous!r} and {concept!r}"
            )
        instances[var] = concept
        while pos < len(tokens) and tokens[pos].kind == "role":
            role = tokens[pos].text
            pos += 1
            if pos >= len(tokens):
                raise PenmanSyntaxError(f"role :{role} has no target")
            tok = tokens[pos]
            if tok.kind == "(":
                slot = len(edges)
                edges.append(None)
                edges[slot] = (var, role, node())
            elif tok.kind == "str":
                pos += 1
                edges.append((var, role, Constant(tok.text, quoted=True)))
            elif tok.kind == "sym":
                pos += 1
                edges.append((var, role, ("?", tok.text)))
            else:
                raise PenmanSyntaxError(f"role :{role} has no target at offset {tok.pos}")
        expect(")")
        return var

    root = node()
    if pos != len(tokens):
        raise PenmanSyntaxError(
            f"trailing content after graph at offset {tokens[pos].pos}"
        )

    # bare symbols are resolved only after all declarations are known, so
    # forward references are allowed
    resolved: list[Edge] = []
    for source, role, target in edges:
        if isinstance(target, tuple):
            sym = target[1]
            if sym in instances:
                target = sym
            elif _VARIABLE_STRICT.match(sym):
                raise DanglingReference(
                    f"variable {sym!r} referenced by :{role} of {source!r} is never declared"
                )
            else:
                target = Constant(sym)
        resolved.append((source, role, target))

    seen = set()
    for e in resolved:
        key = (e[0], e[1], str(e[2]) if isinstance(e[2], Constant) else ("var", e[2]))
        if key in seen:
            raise InvalidGraph(f"duplicate edge {e}")
        seen.add(key)
    return AmrGraph(root=root, instances=instances, edges=tuple(resolved))


# -- validation --------------------------------------------------------------


def validate(graph: AmrGraph) -> list[Violation]:
    """Check the structural invariants; an empty list means the graph is valid."""
    problems: list[Violation] = []
    if not graph.instances:
        problems.append(Violation("EmptyGraph", "graph declares no variables"))
    if graph.root not in graph.instances:
        problems.append(Violation("BadRoot", f"root {graph.root!r} is not a declared variable"))
    for var, concept in graph.instances.items():
        if not isinstance(concept, str) or not concept:
            problems.append(Violation("MissingConcept", f"variable {var!r} has no concept"))

    seen = set()
    for source, rel, target in graph.edges:
        if source not in graph.instances:
            problems.append(
                Violation("DanglingReference", f"edge source {source!r} is not declared")
            )
        if not isinstance(target, Constant) and target not in graph.instances:
            problems.append(
                Violation("DanglingReference", f"edge target {target!r} is not declared")
            )
        key = (source, rel, target)
        if key in seen:
            problems.append(Violation("DuplicateEdge", f"duplicate edge {key}"))
        seen.add(key)

    if graph.root in graph.instances:
        adjacency: dict[str, set[str]] = {v: set() for v in graph.instances}
        for source, _, target in graph.edges:
            if isinstance(target, Constant):
                continue
            if source in adjacency and target in adjacency:
                adjacency[source].add(target)
                adjacency[target].add(source)
        reached = {graph.root}
        queue = deque([graph.root])
        while queue:
            for nb in adjacency[queue.popleft()]:
                if nb not in reached:
                    reached.add(nb)
                    queue.append(nb)
        missing = sorted(set(graph.instances) - reached)
        if missing:
            problems.append(
                Violation("Disconnected", f"variables unreachable from root: {missing}")
            )
    return problems


# -- serialization -----------------------------------------------------------


def _invert(role: str) -> str:
    if role.endswith("-of"):
        return role[:-3]
    return role + "-of"


def serialize_penman(graph: AmrGraph, indent: int | None = 4) -> str:
    """Render a graph as Penman text.

    Depth-first from the root, edges in stored order. Each variable is
    declared once, at its first visit; later mentions are bare references.
    Edges into a variable that stored directions cannot reach from the root
    are emitted inverted (``X`` <-> ``X-of``). ``indent=None`` gives one line.
    """
    if violations := validate(graph):
        raise InvalidGraph("; ".join(v.message for v in violations))

    outgoing: dict[str, list[int]] = {v: [] for v in graph.instances}
    incoming: dict[str, list[int]] = {v: [] for v in graph.instances}
    for i, (source, _, target) in enumerate(graph.edges):
        outgoing[source].append(i)
        if not isinstance(target, Constant):
            incoming[target].append(i)

    reachable = set()
    stack = [graph.root]
    while stack:
        v = stack.pop()
        if v in reachable:
            continue
        reachable.add(v)
        stack.extend(
            graph.edges[i][2] for i in outgoing[v] if not isinstance(graph.edges[i][2], Constant)
        )

    declared: set[str] = set()
    emitted: set[int] = set()
    sep = " " if indent is None else "\n"

    def render(var: str, depth: int) -> str:
        declared.add(var)
        parts = [f"({var} / {graph.instances[var]}"]
        pad = "" if indent is None else " " * (indent * (depth + 1))
        for i in outgoing[var]:
            if i in emitted:
                continue
            emitted.add(i)
            _, rel, target = graph.edges[i]
            if isinstance(target, Constant) or target in declared:
                parts.append(f"{pad}:{rel} {target}")
            else:
                parts.append(f"{pad}:{rel} {render(target, depth + 1)}")
        for i in incoming[var]:
            source, rel, _ = graph.edges[i]
            if i in emitted or source in reachable:
                continue
            emitted.add(i)
            if source in declared:
                parts.append(f"{pad}:{_invert(rel)} {source}")
            else:
                parts.append(f"{pad}:{_invert(rel)} {render(source, depth + 1)}")
        return sep.join(parts) + ")"

    return render(graph.root, 0)


# -- files -------------------------------------------------------------------


def iter_penman_blocks(text: str) -> Iterator[str]:
    """Yield graph blocks separated by blank lines, with ``#`` comments removed."""
    block: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        if not stripped:
            if block:
                yield "\n".join(block)
                block = []
            continue
        block.append(line)
    if block:
        yield "\n".join(block)


def read_penman(text: str) -> list[AmrGraph]:
    return [parse_penman(block) for block in iter_penman_blocks(text)]


def load_penman_file(path: str | Path) -> list[AmrGraph]:
    return read_penman(Path(path).read_text(encoding="utf-8"))
