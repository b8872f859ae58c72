"""Tolerant structural scanner for Java sources.

Not a Java grammar: a single-pass lexer plus brace-depth tracking that
recognizes comments, string literals (skipped), class/interface/enum headers,
extends/implements clauses, method signatures and field declarations at class
brace depth, imports, and ``identifier(`` call sites.  It never fails on
malformed input; anything unrecognizable degrades to empty lists plus a
warning on the returned structure.

``implements`` is folded into the extend dependency kind.  Call resolution is
name-based: a called name matches any artifact declaring a class or method of
that name; overloads collapse.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .corpus import Artifact, Kind

__all__ = [
    "DependencyKind",
    "DependencyEdge",
    "CodeStructure",
    "FINE_GRAINED_COMPONENTS",
    "scan_structure",
    "resolve_dependencies",
    "component_text",
    "structure_to_dict",
]

JAVA_KEYWORDS = frozenset(
    """abstract assert boolean break byte case catch char class const continue
    default do double else enum extends false final finally float for goto if
    implements import instanceof int interface long native new null package
    private protected public return short static strictfp super switch
    synchronized this throw throws transient true try var void volatile
    while yield""".split()
)
_MODIFIERS = frozenset(
    """public private protected static final abstract synchronized native
    strictfp default transient volatile""".split()
)
_CONTROL = frozenset("if for while switch catch synchronized assert this super".split())
_CALL_PREV_WORDS = frozenset("new return else throw do yield case assert".split())
_CLASS_KEYWORDS = ("class", "interface", "enum")

_TOKEN_RE = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*|[0-9][0-9a-zA-Z_.]*|\S")


class DependencyKind(str, Enum):
    IMPORT = "import"
    EXTEND = "extend"
    CALL = "call"


@dataclass(frozen=True)
class DependencyEdge:
    from_id: str
    to_id: str
    kind: DependencyKind


@dataclass(frozen=True)
class CodeStructure:
    """Structural facts of one code artifact.

    The seven fine-grained component lists are class_names, class_comments,
    class_attributes, method_names, method_comments, method_parameters, and
    method_returns; imports, extends_targets, and called_names feed the
    dependency edges.
    """

    artifact_id: str
    class_names: tuple[str, ...] = ()
    class_comments: tuple[str, ...] = ()
    class_attributes: tuple[str, ...] = ()
    method_names: tuple[str, ...] = ()
    method_comments: tuple[str, ...] = ()
    method_parameters: tuple[str, ...] = ()
    method_returns: tuple[str, ...] = ()
    imports: tuple[str, ...] = ()
    extends_targets: tuple[str, ...] = ()
    called_names: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


FINE_GRAINED_COMPONENTS = (
    "class_attributes",
    "class_comments",
    "class_names",
    "method_comments",
    "method_names",
    "method_parameters",
    "method_returns",
)


def component_text(structure: CodeStructure, component: str) -> str:
    """Space-joined text of one fine-grained component (may be empty)."""
    if component not in FINE_GRAINED_COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    return " ".join(getattr(structure, component))


def structure_to_dict(structure: CodeStructure) -> dict:
    return {
        "artifact_id": structure.artifact_id,
        "class_names": list(structure.class_names),
        "class_comments": list(structure.class_comments),
        "class_attributes": list(structure.class_attributes),
        "method_names": list(structure.method_names),
        "method_comments": list(structure.method_comments),
        "method_parameters": list(structure.method_parameters),
        "method_returns": list(structure.method_returns),
        "imports": list(structure.imports),
        "extends_targets": list(structure.extends_targets),
        "called_names": list(structure.called_names),
        "warnings": list(structure.warnings),
    }


def _blank(chars: list[str], start: int, end: int) -> None:
    for i in range(start, min(end, len(chars))):
        if chars[i] not in "\n\r":
            chars[i] = " "


def _strip_comments_and_strings(text: str) -> tuple[str, list[tuple[int, int, str]]]:
    """Blank out comments/strings; return clean text and doc comments.

    Doc comments are returned as (start, end, cleaned_body) with comment-only
    markup (/** */ and leading '*') removed.
    """
    chars = list(text)
    docs: list[tuple[int, int, str]] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        nxt = text[i + 1] if i + 1 < n else ""
        if c == "/" and nxt == "/":
            j = text.find("\n", i)
            j = n if j == -1 else j
            _blank(chars, i, j)
            i = j
        elif c == "/" and nxt == "*":
            j = text.find("*/", i + 2)
            end = n if j == -1 else j + 2
            body = text[i:end]
            if body.startswith("/**") and len(body) > 4:
                docs.append((i, end, _clean_doc(body)))
            _blank(chars, i, end)
            i = end
        elif c == '"':
            if text.startswith('"""', i):
                j = text.find('"""', i + 3)
                end = n if j == -1 else j + 3
            else:
                j = i + 1
                while j < n and text[j] != '"':
                    j += 2 if text[j] == "\\" else 1
                end = min(j + 1, n)
            _blank(chars, i, end)
            i = end
        elif c == "'":
            j = i + 1
            while j < n and text[j] != "'":
                j += 2 if text[j] == "\\" else 1
            end = min(j + 1, n)
            _blank(chars, i, end)
            i = end
        else:
            i += 1
    return "".join(chars), docs


def _clean_doc(body: str) -> str:
    inner = body[3:]
    if inner.endswith("*/"):
        inner = inner[:-2]
    lines = []
    for line in inner.splitlines():
        line = line.strip()
        if line.startswith("*"):
            line = line[1:].strip()
        if line:
            lines.append(line)
    return " ".join(lines)


def _is_word(tok: str) -> bool:
    return bool(tok) and (tok[0].isalpha() or tok[0] in "_$")


def _strip_annotations(seg: list[tuple[str, int]]) -> list[tuple[str, int]]:
    out: list[tuple[str, int]] = []
    i = 0
    while i < len(seg):
        if seg[i][0] == "@":
            i += 1
            if i < len(seg) and _is_word(seg[i][0]):
                i += 1
            if i < len(seg) and seg[i][0] == "(":
                depth = 1
                i += 1
                while i < len(seg) and depth > 0:
                    if seg[i][0] == "(":
                        depth += 1
                    elif seg[i][0] == ")":
                        depth -= 1
                    i += 1
            continue
        out.append(seg[i])
        i += 1
    return out


class _Collector:
    def __init__(self, artifact_id: str) -> None:
        self.artifact_id = artifact_id
        self.class_names: list[str] = []
        self.class_comments: list[str] = []
        self.class_attributes: list[str] = []
        self.method_names: list[str] = []
        self.method_comments: list[str] = []
        self.method_parameters: list[str] = []
        self.method_returns: list[str] = []
        self.imports: list[str] = []
        self.extends_targets: list[str] = []
        self.called_names: list[str] = []
        self.warnings: list[str] = []
        self.decl_name_offsets: set[int] = set()

    def build(self) -> CodeStructure:
        return CodeStructure(
            artifact_id=self.artifact_id,
            class_names=tuple(self.class_names),
            class_comments=tuple(self.class_comments),
            class_attributes=tuple(self.class_attributes),
            method_names=tuple(self.method_names),
            method_comments=tuple(self.method_comments),
            method_parameters=tuple(self.method_parameters),
            method_returns=tuple(self.method_returns),
            imports=tuple(self.imports),
            extends_targets=tuple(self.extends_targets),
            called_names=tuple(self.called_names),
            warnings=tuple(self.warnings),
        )


def scan_structure(artifact: Artifact) -> CodeStructure:
    """Extract the structural facts of one code artifact.

    Total: terminates and returns a CodeStructure for every input; internal
    surprises degrade to empty lists plus a warning.
    """
    if artifact.kind is not Kind.CODE:
        raise ValueError(f"scan_structure expects a code artifact, got {artifact.kind}")
    try:
        return _scan(artifact.id, artifact.text)
    except Exception as exc:  # tolerant by contract
        return CodeStructure(
            artifact_id=artifact.id,
            warnings=(f"structural scan failed, treated as opaque: {exc}",),
        )


def _scan(artifact_id: str, text: str) -> CodeStructure:
    clean, docs = _strip_comments_and_strings(text)
    tokens = [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(clean)]
    col = _Collector(artifact_id)

    class_stack: list[tuple[str, int]] = []  # (name, body depth)
    depth = 0
    seg: list[tuple[str, int]] = []
    prev_term = -1

    def docs_between(lo: int, hi: int) -> list[str]:
        return [body for start, end, body in docs if start > lo and end <= hi]

    for tok, off in tokens:
        if tok not in ";{}":
            seg.append((tok, off))
            continue
        _segment(col, seg, tok, depth, prev_term, class_stack, docs_between)
        if tok == "{":
            depth += 1
        elif tok == "}":
            depth -= 1
            while class_stack and class_stack[-1][1] > depth:
                class_stack.pop()
        prev_term = off
        seg = []
    if seg:
        _segment(col, seg, ";", depth, prev_term, class_stack, docs_between)

    _collect_calls(col, tokens)
    if not col.class_names and not col.method_names and tokens:
        col.warnings.append("no class or method declarations recognized")
    return col.build()


def _segment(col, seg, term, depth, prev_term, class_stack, docs_between) -> None:
    if not seg:
        return
    first = seg[0][0]
    if first == "package" and term == ";":
        return
    if first == "import" and term == ";":
        parts = [t for t, _ in seg[1:] if t != "static" and (t == "." or t == "*" or _is_word(t))]
        path = "".join(parts)
        if path:
            col.imports.append(path)
        return

    if term == "{":
        cls_idx = _class_keyword_index(seg)
        if cls_idx is not None:
            name = _class_header(col, seg, cls_idx, prev_term, docs_between)
            if name is not None:
                class_stack.append((name, depth + 1))
            return

    if not class_stack or depth != class_stack[-1][1]:
        return
    toks = _strip_annotations(seg)
    if not toks:
        return
    paren_positions = [i for i, (t, _) in enumerate(toks) if t == "("]
    eq_positions = _top_level_positions(toks, "=")
    first_paren = paren_positions[0] if paren_positions else None
    first_eq = eq_positions[0] if eq_positions else None

    if first_paren is not None and (first_eq is None or first_paren < first_eq):
        _method_member(col, toks, first_paren, class_stack[-1][0], prev_term, docs_between)
    else:
        _field_member(col, toks)


def _class_keyword_index(seg: list[tuple[str, int]]) -> int | None:
    for i, (t, _) in enumerate(seg):
        if t in _CLASS_KEYWORDS and (i == 0 or seg[i - 1][0] != "."):
            return i
    return None


def _class_header(col, seg, cls_idx, prev_term, docs_between) -> str | None:
    name = None
    name_off = None
    for t, off in seg[cls_idx + 1:]:
        if _is_word(t):
            name, name_off = t, off
            break
    if name is None:
        return None
    col.class_names.append(name)
    col.class_comments.extend(docs_between(prev_term, name_off))

    angle = 0
    in_clause = False
    cur: list[str] = []

    def flush() -> None:
        if cur:
            col.extends_targets.append(cur[-1])
            cur.clear()

    for t, off in seg:
        if off <= name_off:
            continue
        if t == "<":
            angle += 1
        elif t == ">":
            angle = max(0, angle - 1)
        elif angle == 0:
            if t in ("extends", "implements"):
                flush()
                in_clause = True
            elif t == ",":
                flush()
            elif in_clause and _is_word(t):
                cur.append(t)
    flush()
    return name


def _top_level_positions(toks: list[tuple[str, int]], target: str) -> list[int]:
    out = []
    paren = 0
    for i, (t, _) in enumerate(toks):
        if t == "(":
            paren += 1
        elif t == ")":
            paren = max(0, paren - 1)
        elif t == target and paren == 0:
            out.append(i)
    return out


def _method_member(col, toks, paren_idx, class_name, prev_term, docs_between) -> None:
    if paren_idx == 0 or not _is_word(toks[paren_idx - 1][0]):
        return
    name, name_off = toks[paren_idx - 1]
    if name in JAVA_KEYWORDS:
        return
    col.method_names.append(name)
    col.decl_name_offsets.add(name_off)
    col.method_comments.extend(docs_between(prev_term, name_off))

    ret_words = [
        t for t, _ in toks[: paren_idx - 1]
        if _is_word(t) and t not in _MODIFIERS
    ]
    if ret_words and name != class_name:
        col.method_returns.append(" ".join(ret_words))

    depth = 1
    close = None
    for i in range(paren_idx + 1, len(toks)):
        t = toks[i][0]
        if t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
            if depth == 0:
                close = i
                break
    if close is None:
        close = len(toks)
    group: list[str] = []
    paren = 0
    angle = 0
    for t, _ in toks[paren_idx + 1: close]:
        if t == "(":
            paren += 1
        elif t == ")":
            paren = max(0, paren - 1)
        elif t == "<":
            angle += 1
        elif t == ">":
            angle = max(0, angle - 1)
        if t == "," and paren == 0 and angle == 0:
            _flush_param(col, group)
            group = []
        else:
            group.append(t)
    _flush_param(col, group)


def _flush_param(col, group: list[str]) -> None:
    words = [t for t in group if _is_word(t) and t not in _MODIFIERS]
    if words:
        col.method_parameters.append(" ".join(words))


def _field_member(col, toks) -> None:
    paren = 0
    angle = 0
    mode = "decl"
    last_word: str | None = None
    for t, _ in toks:
        if t == "(":
            paren += 1
            continue
        if t == ")":
            paren = max(0, paren - 1)
            continue
        if t == "<":
            angle += 1
            continue
        if t == ">":
            angle = max(0, angle - 1)
            continue
        if paren or angle:
            continue
        if mode == "decl":
            if _is_word(t) and t not in JAVA_KEYWORDS:
                last_word = t
            elif t == "=":
                if last_word:
                    col.class_attributes.append(last_word)
                    last_word = None
                mode = "init"
            elif t == ",":
                if last_word:
                    col.class_attributes.append(last_word)
                    last_word = None
        elif t == ",":
            mode = "decl"
            last_word = None
    if mode == "decl" and last_word:
        col.class_attributes.append(last_word)


def _collect_calls(col, tokens: list[tuple[str, int]]) -> None:
    seen = set(col.called_names)
    for i, (tok, off) in enumerate(tokens):
        if not _is_word(tok) or tok in JAVA_KEYWORDS:
            continue
        if i + 1 >= len(tokens) or tokens[i + 1][0] != "(":
            continue
        if off in col.decl_name_offsets:
            continue
        if i > 0:
            prev = tokens[i - 1][0]
            if prev == "@":
                continue
            if _is_word(prev) and prev not in _CALL_PREV_WORDS:
                continue
        if tok in _CONTROL:
            continue
        if tok not in seen:
            seen.add(tok)
            col.called_names.append(tok)


def resolve_dependencies(structures: Iterable[CodeStructure]) -> frozenset[DependencyEdge]:
    """Name-based dependency edges among a project's code artifacts.

    Import: an import's simple name matches a class declared elsewhere.
    Extend: an extends/implements target matches a class declared elsewhere.
    Call: a called name matches a class or method declared elsewhere.
    Self-edges are dropped; duplicates collapse to one edge per
    (from, to, kind).  Output is independent of input ordering.
    """
    structures = list(structures)
    class_owner: dict[str, set[str]] = {}
    member_owner: dict[str, set[str]] = {}
    for s in structures:
        for name in s.class_names:
            class_owner.setdefault(name, set()).add(s.artifact_id)
        for name in s.method_names:
            member_owner.setdefault(name, set()).add(s.artifact_id)

    edges: set[DependencyEdge] = set()

    def link(src: str, owners: set[str] | None, kind: DependencyKind) -> None:
        for owner in owners or ():
            if owner != src:
                edges.add(DependencyEdge(from_id=src, to_id=owner, kind=kind))

    for s in structures:
        for imp in s.imports:
            simple = imp.split(".")[-1]
            if simple and simple != "*":
                link(s.artifact_id, class_owner.get(simple), DependencyKind.IMPORT)
        for target in s.extends_targets:
            link(s.artifact_id, class_owner.get(target), DependencyKind.EXTEND)
        for name in s.called_names:
            owners = class_owner.get(name, set()) | member_owner.get(name, set())
            link(s.artifact_id, owners, DependencyKind.CALL)
    return frozenset(edges)
