"""Strategy edge construction: code dependency, user feedback, fine-grained.

The three auxiliary strategies compensate for the lexical gap between
requirement text and code: structural dependencies connect code artifacts,
sampled user feedback injects a few confirmed links, and fine-grained
similarity connects a requirement to a code artifact whose decomposed
components all rank near the top of the corpus.

Fine-grained ranking convention: a code artifact missing a component (e.g. no
comments) is excluded from the ranking for that component and the all-
components condition is evaluated only over its nonempty components;
artifacts with every component empty never receive edges.  Ranks use the
minimum-rank tie convention, so ties at the threshold are included.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Artifact, Kind, Project
from .errors import StrategyError
from .javastruct import (
    FINE_GRAINED_COMPONENTS,
    CodeStructure,
    DependencyEdge,
    component_text,
)
from .textproc import build_vocabulary, config_for_kind, cosine, tfidf, tokenize

__all__ = [
    "EdgeType",
    "Edge",
    "StrategyGraph",
    "build_feedback_edges",
    "build_fine_grained_edges",
    "assemble_graph",
    "dependency_to_edges",
    "graph_to_dict",
    "graph_from_dict",
]

STRATEGY_EDGE_TYPES = ("import", "extend", "call", "feedback", "fine_grained")


class EdgeType(str, Enum):
    IMPORT = "import"
    EXTEND = "extend"
    CALL = "call"
    FEEDBACK = "feedback"
    FINE_GRAINED = "fine_grained"
    SUPERVISION = "supervision"


_CODE_CODE_TYPES = frozenset({EdgeType.IMPORT, EdgeType.EXTEND, EdgeType.CALL})


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    type: EdgeType


@dataclass(frozen=True)
class StrategyGraph:
    """Typed heterogeneous graph over requirement and code nodes."""

    req_ids: tuple[str, ...]
    code_ids: tuple[str, ...]
    edges: frozenset[Edge]

    def __post_init__(self) -> None:
        out_adj: dict[str, dict[EdgeType, list[str]]] = {}
        in_adj: dict[str, dict[EdgeType, list[str]]] = {}
        for edge in sorted(self.edges, key=lambda e: (e.type.value, e.source, e.target)):
            out_adj.setdefault(edge.source, {}).setdefault(edge.type, []).append(edge.target)
            in_adj.setdefault(edge.target, {}).setdefault(edge.type, []).append(edge.source)
        object.__setattr__(self, "_out_adj", out_adj)
        object.__setattr__(self, "_in_adj", in_adj)

    def edges_of_type(self, edge_type: EdgeType) -> tuple[Edge, ...]:
        return tuple(
            sorted(
                (e for e in self.edges if e.type is edge_type),
                key=lambda e: (e.source, e.target),
            )
        )

    def out_neighbors(self, node: str, edge_type: EdgeType) -> tuple[str, ...]:
        return tuple(getattr(self, "_out_adj").get(node, {}).get(edge_type, ()))

    def in_neighbors(self, node: str, edge_type: EdgeType) -> tuple[str, ...]:
        return tuple(getattr(self, "_in_adj").get(node, {}).get(edge_type, ()))

    def incident_code_edges(self, code_id: str) -> tuple[Edge, ...]:
        """Structural (code-code) edges touching one code artifact."""
        found = {
            e
            for e in self.edges
            if e.type in _CODE_CODE_TYPES and code_id in (e.source, e.target)
        }
        return tuple(sorted(found, key=lambda e: (e.source, e.target, e.type.value)))

    def has_edge(self, source: str, target: str, edge_type: EdgeType) -> bool:
        return target in getattr(self, "_out_adj").get(source, {}).get(edge_type, ())


def build_feedback_edges(
    project: Project,
    fraction: float,
    seed: int,
    pool: Iterable[tuple[str, str]],
) -> frozenset[Edge]:
    """Seeded uniform sample of ceil(fraction * |pool|) confirmed links."""
    if not (0.0 < fraction <= 1.0):
        raise StrategyError(f"feedback fraction must be in (0, 1], got {fraction}")
    pool = sorted(set(pool))
    if not pool:
        raise StrategyError("feedback pool is empty")
    extra = set(pool) - project.ground_truth
    if extra:
        raise StrategyError(f"feedback pool contains non-ground-truth pairs: {sorted(extra)[:3]}")
    k = math.ceil(fraction * len(pool))
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), size=k, replace=False)
    return frozenset(
        Edge(source=pool[i][0], target=pool[i][1], type=EdgeType.FEEDBACK)
        for i in idx
    )


def build_fine_grained_edges(
    project: Project,
    structures: Iterable[CodeStructure],
    top_fraction: float = 0.2,
) -> frozenset[Edge]:
    """Fine-grained semantic edges from component-level TF-IDF ranking.

    For every requirement r and component kind k, code artifacts with a
    nonempty component k are ranked by cosine(tfidf(r), tfidf(component))
    descending; the edge (r, c) exists iff c's rank is within
    ``top_fraction * N_k`` for every component k that c populates.
    """
    if not (0.0 < top_fraction < 1.0):
        raise StrategyError(f"top_fraction must be in (0, 1), got {top_fraction}")
    structures = {s.artifact_id: s for s in structures}
    code_config = config_for_kind(is_code=True)

    component_tokens: dict[str, dict[str, tuple[str, ...]]] = {}
    for code_id in sorted(structures):
        per = {}
        for comp in FINE_GRAINED_COMPONENTS:
            tokens = tokenize(component_text(structures[code_id], comp), code_config)
            if tokens:
                per[comp] = tokens
        component_tokens[code_id] = per

    requirements = sorted(project.requirements(), key=lambda a: a.id)
    docs: list[Sequence[str]] = [r.tokens for r in requirements]
    for code_id in sorted(component_tokens):
        docs.extend(component_tokens[code_id][c] for c in sorted(component_tokens[code_id]))
    if not docs:
        return frozenset()
    vocab = build_vocabulary(docs)

    comp_vecs = {
        (code_id, comp): tfidf(tokens, vocab)
        for code_id, per in component_tokens.items()
        for comp, tokens in per.items()
    }
    populated = {
        comp: sorted(cid for cid, per in component_tokens.items() if comp in per)
        for comp in FINE_GRAINED_COMPONENTS
    }

    edges: set[Edge] = set()
    for req in requirements:
        req_vec = tfidf(req.tokens, vocab)
        rank: dict[tuple[str, str], int] = {}
        for comp, code_ids in populated.items():
            if not code_ids:
                continue
            sims = {cid: cosine(req_vec, comp_vecs[(cid, comp)]) for cid in code_ids}
            for cid in code_ids:
                # minimum-rank tie convention: 1 + number strictly better
                rank[(cid, comp)] = 1 + sum(1 for other in code_ids if sims[other] > sims[cid])
        for cid, per in component_tokens.items():
            if not per:
                continue
            threshold_ok = all(
                rank[(cid, comp)] <= top_fraction * len(populated[comp])
                for comp in per
            )
            if threshold_ok:
                edges.add(Edge(source=req.id, target=cid, type=EdgeType.FINE_GRAINED))
    return frozenset(edges)


def dependency_to_edges(dep_edges: Iterable[DependencyEdge]) -> frozenset[Edge]:
    return frozenset(
        Edge(source=d.from_id, target=d.to_id, type=EdgeType(d.kind.value))
        for d in dep_edges
    )


def assemble_graph(
    project: Project,
    dep_edges: Iterable[Edge] = (),
    feedback_edges: Iterable[Edge] = (),
    fine_edges: Iterable[Edge] = (),
    supervision_links: Iterable[tuple[str, str]] = (),
) -> StrategyGraph:
    """Validate and merge the typed edge sets into one StrategyGraph."""
    req_ids = tuple(sorted(a.id for a in project.requirements()))
    code_ids = tuple(sorted(a.id for a in project.code_artifacts()))
    req_set, code_set = set(req_ids), set(code_ids)

    def check(edge: Edge) -> Edge:
        if edge.type in _CODE_CODE_TYPES:
            want_src, want_dst = code_set, code_set
        else:
            want_src, want_dst = req_set, code_set
        if edge.source not in want_src or edge.target not in want_dst:
            raise StrategyError(
                f"edge {edge.source}->{edge.target} ({edge.type.value}) has a "
                "kind-mismatched or unknown endpoint"
            )
        return edge

    merged: set[Edge] = set()
    for group in (dep_edges, feedback_edges, fine_edges):
        merged.update(check(e) for e in group)
    for req_id, code_id in supervision_links:
        merged.add(check(Edge(source=req_id, target=code_id, type=EdgeType.SUPERVISION)))
    return StrategyGraph(req_ids=req_ids, code_ids=code_ids, edges=frozenset(merged))


def graph_to_dict(graph: StrategyGraph) -> dict:
    by_type: dict[str, list[list[str]]] = {}
    for edge in sorted(graph.edges, key=lambda e: (e.type.value, e.source, e.target)):
        by_type.setdefault(edge.type.value, []).append([edge.source, edge.target])
    return {
        "nodes": {"req": list(graph.req_ids), "code": list(graph.code_ids)},
        "edges": by_type,
    }


def graph_from_dict(data: Mapping) -> StrategyGraph:
    edges = {
        Edge(source=s, target=t, type=EdgeType(type_name))
        for type_name, pairs in data["edges"].items()
        for s, t in pairs
    }
    return StrategyGraph(
        req_ids=tuple(data["nodes"]["req"]),
        code_ids=tuple(data["nodes"]["code"]),
        edges=frozenset(edges),
    )
