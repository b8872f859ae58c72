"""Heterogeneous graph transformer link predictor, built from scratch.

Message passing uses type-aware multi-head attention: per node type there are
query/key/message projections, per relation an attention matrix, a message
matrix, and a learnable meta-relation scalar; attention is normalized over
each node's sampled in-neighborhood, messages are attention-weighted sums,
and every layer ends with a typed aggregation projection, ReLU, and a
residual connection.  Nodes with no sampled in-neighbors keep the residual
path only.  A per-type linear pooling compresses final representations, and a
four-layer feedforward head over the concatenated pair produces either an
inner-product score over its two halves (default) or a scalar head.

Every directed strategy edge also contributes a reversed message edge under a
``rev_*`` relation so requirement nodes receive messages; all relations and
meta-relations are fixed up front, so ablated graphs reuse identical shapes.
Supervision links carry the training labels only: they are never message
edges, which keeps the label out of the features the predictor sees.

Randomness is budgeted from one root seed via the splitmix64 chain:
position 0 drives link splits, 1 the negative-pool partition, 2 parameter
init, 3 feedback sampling, 4 substitute embeddings, and positions 5+ the
per-epoch (negative-sample, forward-sampling, validation-sampling) triples.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import EmbeddingTable, Project
from .errors import ModelError
from .evaluation import evaluate
from .seeds import derive_seeds
from .strategies import EdgeType, StrategyGraph
from .textproc import Vocabulary, build_vocabulary, tfidf

__all__ = [
    "NODE_TYPES",
    "RELATIONS",
    "TrainConfig",
    "HgtModel",
    "Prediction",
    "Splits",
    "SeedRoles",
    "GradCheckReport",
    "seed_roles",
    "epoch_seeds",
    "project_vocabulary",
    "substitute_embeddings",
    "init_model",
    "forward",
    "predict",
    "train",
    "gradient_check",
    "split_links",
    "negative_pool_splits",
    "sample_negatives",
    "save_model",
    "load_model",
]

NODE_TYPES = ("req", "code")

# message-passing relations: the strategy edges and their reverses; the
# supervision edge type is a label carrier and deliberately absent here
_BASE_RELATIONS: dict[str, tuple[str, str]] = {
    "import": ("code", "code"),
    "extend": ("code", "code"),
    "call": ("code", "code"),
    "feedback": ("req", "code"),
    "fine_grained": ("req", "code"),
}

RELATIONS: dict[str, tuple[str, str]] = dict(_BASE_RELATIONS)
RELATIONS.update(
    {f"rev_{name}": (dst, src) for name, (src, dst) in _BASE_RELATIONS.items()}
)

MODEL_FORMAT = "tracelab-hgt/1"


@dataclass(frozen=True)
class TrainConfig:
    """Architecture and training hyperparameters.

    Dimensions default to the full-scale configuration (hidden 128 over two
    layers, pooled 64, feedforward 512/256/128/64); they are configurable so
    verification harnesses can run finite differences on small models.
    """

    layers: int = 2
    heads: int = 4
    hidden_dim: int = 128
    pooled_dim: int = 64
    mlp_dims: tuple[int, int, int, int] = (512, 256, 128, 64)
    neighbor_samples_per_type: int = 16
    learning_rate: float = 1e-2
    epochs: int = 80
    negative_ratio: float = 1.0
    threshold: float = 0.5
    seed: int = 0
    head_mode: str = "inner_product"
    clip_norm: float = 5.0

    def __post_init__(self) -> None:
        if self.layers < 1 or self.heads < 1 or self.hidden_dim < 1:
            raise ModelError("layers, heads, and hidden_dim must be positive")
        if self.hidden_dim % self.heads != 0:
            raise ModelError(
                f"heads ({self.heads}) must divide hidden_dim ({self.hidden_dim})"
            )
        if not (0.0 < self.threshold < 1.0):
            raise ModelError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.epochs < 0 or self.negative_ratio <= 0 or self.learning_rate <= 0:
            raise ModelError("epochs, negative_ratio, learning_rate must be positive")
        if self.neighbor_samples_per_type < 1:
            raise ModelError("neighbor_samples_per_type must be positive")
        if len(self.mlp_dims) != 4:
            raise ModelError("mlp_dims must list the four feedforward widths")
        if self.head_mode not in ("inner_product", "scalar"):
            raise ModelError(f"unknown head_mode {self.head_mode!r}")
        if self.head_mode == "inner_product" and self.mlp_dims[-1] % 2 != 0:
            raise ModelError("inner_product head needs an even final mlp width")


@dataclass(frozen=True)
class SeedRoles:
    """Fixed positions of the root-seed chain (see module docstring)."""

    split: int
    negative_pool: int
    init: int
    feedback: int
    embeddings: int


def seed_roles(root: int) -> SeedRoles:
    return SeedRoles(*derive_seeds(root, 5))


def epoch_seeds(root: int, n_epochs: int) -> list[tuple[int, int, int]]:
    """(negative-sample, forward-sample, validation-sample) seed per epoch."""
    flat = derive_seeds(root, 5 + 3 * n_epochs)[5:]
    return [tuple(flat[3 * e: 3 * e + 3]) for e in range(n_epochs)]


@dataclass
class HgtModel:
    """All learnable tensors plus the hyperparameters that shaped them."""

    config: TrainConfig
    input_dim: int
    params: dict[str, Tensor]

    def clone_values(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.params.items()}

    def restore_values(self, values: Mapping[str, np.ndarray]) -> None:
        for name, value in values.items():
            self.params[name].value = value.copy()

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None


@dataclass(frozen=True)
class Prediction:
    req_id: str
    code_id: str
    score: float
    label: bool


@dataclass(frozen=True)
class Splits:
    train: tuple[tuple[str, str], ...]
    val: tuple[tuple[str, str], ...]
    test: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]
    tolerance: float
    passed: bool


# ---------------------------------------------------------------------------
# embeddings


def project_vocabulary(project: Project) -> Vocabulary:
    return build_vocabulary([a.tokens for a in project.artifacts])


def substitute_embeddings(
    project: Project, vocab: Vocabulary, dim: int, seed: int
) -> EmbeddingTable:
    """Desk-scale node features: seeded Gaussian random projection of TF-IDF.

    Each artifact's TF-IDF vector is projected through one shared Gaussian
    matrix and L2-normalized, which approximately preserves cosine geometry.
    Artifacts whose projection has zero norm (no tokens, or all weights zero)
    receive a shared small seeded noise vector and a warning.
    """
    if len(vocab) == 0:
        raise ModelError("substitute_embeddings requires a nonempty vocabulary")
    if dim < 1:
        raise ModelError(f"embedding dim must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((len(vocab), dim))
    noise = rng.standard_normal(dim) * 1e-6

    vectors: dict[str, np.ndarray] = {}
    flagged = []
    for artifact in project.artifacts:
        vec = np.zeros(dim, dtype=np.float64)
        sparse = tfidf(artifact.tokens, vocab).weights
        for idx, weight in sparse.items():
            vec += weight * projection[idx]
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            flagged.append(artifact.id)
            vec = noise.copy()
            norm = float(np.linalg.norm(vec))
        vectors[artifact.id] = vec / norm
    if flagged:
        warnings.warn(
            f"zero-signal artifacts given seeded noise embeddings: {flagged[:5]}"
        )
    return EmbeddingTable(dim=dim, vectors=vectors)


# ---------------------------------------------------------------------------
# model construction


def _linear_names(config: TrainConfig, input_dim: int) -> dict[str, tuple[int, int]]:
    """Weight shapes (out, in) for every affine parameter."""
    h = config.hidden_dim
    dh = h // config.heads
    shapes: dict[str, tuple[int, int]] = {}
    for t in NODE_TYPES:
        shapes[f"in.{t}.w"] = (h, input_dim)
    for layer in range(config.layers):
        for t in NODE_TYPES:
            for proj in ("q", "k", "m"):
                shapes[f"l{layer}.{proj}.{t}.w"] = (h, h)
            shapes[f"l{layer}.agg.{t}.w"] = (h, h)
        for rel in sorted(RELATIONS):
            for head in range(config.heads):
                shapes[f"l{layer}.att.{rel}.h{head}"] = (dh, dh)
                shapes[f"l{layer}.msg.{rel}.h{head}"] = (dh, dh)
    for t in NODE_TYPES:
        shapes[f"pool.{t}.w"] = (config.pooled_dim, h)
    widths = (2 * config.pooled_dim, *config.mlp_dims)
    for j in range(4):
        shapes[f"mlp.f{j + 1}.w"] = (widths[j + 1], widths[j])
    shapes["mlp.f5.w"] = (1, config.mlp_dims[-1])
    return shapes


def init_model(input_dim: int, config: TrainConfig, seed: int | None = None) -> HgtModel:
    """Seeded Gaussian init, scale 1/sqrt(fan_in); biases zero; mu scalars one."""
    if input_dim < 1:
        raise ModelError(f"input_dim must be positive, got {input_dim}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: dict[str, Tensor] = {}
    for name, (out_dim, in_dim) in sorted(_linear_names(config, input_dim).items()):
        params[name] = ad.parameter(
            rng.standard_normal((out_dim, in_dim)) / math.sqrt(in_dim)
        )
        if name.endswith(".w"):
            params[name[:-2] + ".b"] = ad.parameter(np.zeros((1, out_dim)))
    for layer in range(config.layers):
        for rel, (src, dst) in sorted(RELATIONS.items()):
            params[f"l{layer}.mu.{src}|{rel}|{dst}"] = ad.parameter(np.ones((1, 1)))
    return HgtModel(config=config, input_dim=input_dim, params=params)


# ---------------------------------------------------------------------------
# forward pass


def _node_matrices(
    graph: StrategyGraph, embeddings: EmbeddingTable
) -> dict[str, np.ndarray]:
    ids = {"req": graph.req_ids, "code": graph.code_ids}
    out = {}
    for t, node_ids in ids.items():
        missing = [n for n in node_ids if n not in embeddings.vectors]
        if missing:
            raise ModelError(f"embeddings missing for graph nodes: {missing[:5]}")
        out[t] = (
            np.stack([embeddings.vectors[n] for n in node_ids])
            if node_ids
            else np.zeros((0, embeddings.dim))
        )
    return out


def _message_edges(graph: StrategyGraph) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Directed message edges per relation, including reversed counterparts."""
    req_index = {n: i for i, n in enumerate(graph.req_ids)}
    code_index = {n: i for i, n in enumerate(graph.code_ids)}
    index = {"req": req_index, "code": code_index}

    groups: dict[str, tuple[list[int], list[int]]] = {rel: ([], []) for rel in RELATIONS}
    for edge in sorted(graph.edges, key=lambda e: (e.type.value, e.source, e.target)):
        rel = edge.type.value
        if rel not in _BASE_RELATIONS:  # supervision edges carry labels only
            continue
        src_t, dst_t = _BASE_RELATIONS[rel]
        s = index[src_t][edge.source]
        t = index[dst_t][edge.target]
        groups[rel][0].append(s)
        groups[rel][1].append(t)
        groups[f"rev_{rel}"][0].append(t)
        groups[f"rev_{rel}"][1].append(s)
    return {
        rel: (np.asarray(srcs, dtype=np.intp), np.asarray(dsts, dtype=np.intp))
        for rel, (srcs, dsts) in groups.items()
    }


def _sample_edges(
    edge_groups: Mapping[str, tuple[np.ndarray, np.ndarray]],
    cap: int,
    seed: int,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per target node and relation, keep at most ``cap`` in-neighbors.

    Sampling consumes randomness only for nodes whose in-degree exceeds the
    cap, so a cap at least the max in-degree reproduces the dense pass.
    """
    rng = np.random.default_rng(seed)
    sampled: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for rel in sorted(edge_groups):
        srcs, dsts = edge_groups[rel]
        if len(srcs) == 0:
            sampled[rel] = (srcs, dsts)
            continue
        keep: list[int] = []
        by_dst: dict[int, list[int]] = {}
        for pos, d in enumerate(dsts):
            by_dst.setdefault(int(d), []).append(pos)
        for d in sorted(by_dst):
            positions = by_dst[d]
            if len(positions) > cap:
                chosen = rng.choice(len(positions), size=cap, replace=False)
                positions = sorted(positions[i] for i in chosen)
            keep.extend(positions)
        keep_arr = np.asarray(sorted(keep), dtype=np.intp)
        sampled[rel] = (srcs[keep_arr], dsts[keep_arr])
    return sampled


def _forward_tensors(
    model: HgtModel,
    graph: StrategyGraph,
    embeddings: EmbeddingTable,
    sample_seed: int,
) -> dict[str, Tensor]:
    if embeddings.dim != model.input_dim:
        raise ModelError(
            f"embedding dim {embeddings.dim} != model input dim {model.input_dim}"
        )
    cfg = model.config
    p = model.params
    dh = cfg.hidden_dim // cfg.heads
    counts = {"req": len(graph.req_ids), "code": len(graph.code_ids)}

    raw = _node_matrices(graph, embeddings)
    edges = _sample_edges(
        _message_edges(graph), cfg.neighbor_samples_per_type, sample_seed
    )

    h = {
        t: ad.affine(ad.constant(raw[t]), p[f"in.{t}.w"], p[f"in.{t}.b"])
        for t in NODE_TYPES
    }
    for layer in range(cfg.layers):
        q = {t: ad.affine(h[t], p[f"l{layer}.q.{t}.w"], p[f"l{layer}.q.{t}.b"]) for t in NODE_TYPES}
        k = {t: ad.affine(h[t], p[f"l{layer}.k.{t}.w"], p[f"l{layer}.k.{t}.b"]) for t in NODE_TYPES}
        m = {t: ad.affine(h[t], p[f"l{layer}.m.{t}.w"], p[f"l{layer}.m.{t}.b"]) for t in NODE_TYPES}
        h_new: dict[str, Tensor] = {}
        for tt in NODE_TYPES:
            rels = [
                rel
                for rel in sorted(RELATIONS)
                if RELATIONS[rel][1] == tt and len(edges[rel][0]) > 0
            ]
            if not rels or counts[tt] == 0:
                h_new[tt] = h[tt]
                continue
            segments = np.concatenate([edges[rel][1] for rel in rels])
            head_parts: list[Tensor] = []
            for head in range(cfg.heads):
                lo, hi = head * dh, (head + 1) * dh
                score_parts: list[Tensor] = []
                msg_parts: list[Tensor] = []
                for rel in rels:
                    st = RELATIONS[rel][0]
                    srcs, dsts = edges[rel]
                    q_rows = ad.gather_rows(ad.slice_cols(q[tt], lo, hi), dsts)
                    k_rows = ad.gather_rows(ad.slice_cols(k[st], lo, hi), srcs)
                    kw = ad.affine(k_rows, p[f"l{layer}.att.{rel}.h{head}"])
                    raw_score = ad.reduce_sum(ad.mul(q_rows, kw), axis=1, keepdims=True)
                    raw_score = ad.scale(raw_score, 1.0 / math.sqrt(dh))
                    raw_score = ad.mul(raw_score, p[f"l{layer}.mu.{st}|{rel}|{tt}"])
                    score_parts.append(raw_score)
                    m_rows = ad.gather_rows(ad.slice_cols(m[st], lo, hi), srcs)
                    msg_parts.append(ad.affine(m_rows, p[f"l{layer}.msg.{rel}.h{head}"]))
                alpha = ad.segment_softmax(
                    ad.concat_rows(score_parts), segments, counts[tt]
                )
                messages = ad.concat_rows(msg_parts)
                head_parts.append(
                    ad.segment_sum(ad.mul(alpha, messages), segments, counts[tt])
                )
            h_tilde = ad.concat_cols(head_parts)
            transformed = ad.relu(
                ad.affine(h_tilde, p[f"l{layer}.agg.{tt}.w"], p[f"l{layer}.agg.{tt}.b"])
            )
            mask = np.zeros((counts[tt], 1))
            mask[np.unique(segments)] = 1.0
            h_new[tt] = ad.add(ad.mul(ad.constant(mask), transformed), h[tt])
        h = h_new
    return h


def forward(
    model: HgtModel,
    graph: StrategyGraph,
    embeddings: EmbeddingTable,
    batch: Iterable[str] | None = None,
    sample_seed: int = 0,
) -> dict[str, np.ndarray]:
    """Final node representations for ``batch`` (default: every node)."""
    h = _forward_tensors(model, graph, embeddings, sample_seed)
    reps: dict[str, np.ndarray] = {}
    for t, node_ids in (("req", graph.req_ids), ("code", graph.code_ids)):
        values = h[t].value
        for i, node_id in enumerate(node_ids):
            reps[node_id] = values[i].copy()
    if batch is None:
        return reps
    missing = [n for n in batch if n not in reps]
    if missing:
        raise ModelError(f"unknown nodes in batch: {missing[:5]}")
    return {n: reps[n] for n in batch}


def _pair_logits(
    model: HgtModel,
    h: dict[str, Tensor],
    req_idx: np.ndarray,
    code_idx: np.ndarray,
) -> Tensor:
    p = model.params
    pooled_req = ad.affine(h["req"], p["pool.req.w"], p["pool.req.b"])
    pooled_code = ad.affine(h["code"], p["pool.code.w"], p["pool.code.b"])
    r = ad.gather_rows(pooled_req, req_idx)
    c = ad.gather_rows(pooled_code, code_idx)
    x = ad.concat_cols([r, c])
    for j in (1, 2, 3):
        x = ad.relu(ad.affine(x, p[f"mlp.f{j}.w"], p[f"mlp.f{j}.b"]))
    joint = ad.affine(x, p["mlp.f4.w"], p["mlp.f4.b"])
    if model.config.head_mode == "inner_product":
        half = model.config.mlp_dims[-1] // 2
        u = ad.slice_cols(joint, 0, half)
        v = ad.slice_cols(joint, half, 2 * half)
        return ad.reduce_sum(ad.mul(u, v), axis=1, keepdims=True)
    return ad.affine(ad.relu(joint), p["mlp.f5.w"], p["mlp.f5.b"])


def _pair_indices(
    graph: StrategyGraph, pairs: Sequence[tuple[str, str]]
) -> tuple[np.ndarray, np.ndarray]:
    req_index = {n: i for i, n in enumerate(graph.req_ids)}
    code_index = {n: i for i, n in enumerate(graph.code_ids)}
    try:
        req_idx = np.asarray([req_index[r] for r, _ in pairs], dtype=np.intp)
        code_idx = np.asarray([code_index[c] for _, c in pairs], dtype=np.intp)
    except KeyError as exc:
        raise ModelError(f"unknown pair endpoint: {exc.args[0]!r}") from exc
    return req_idx, code_idx


_SCORE_EPS = 1e-15


def predict(
    model: HgtModel,
    graph: StrategyGraph,
    embeddings: EmbeddingTable,
    pairs: Sequence[tuple[str, str]],
    sample_seed: int = 0,
) -> list[Prediction]:
    """Scored link predictions; scores strictly inside (0, 1)."""
    if not pairs:
        return []
    req_idx, code_idx = _pair_indices(graph, pairs)
    h = _forward_tensors(model, graph, embeddings, sample_seed)
    logits = _pair_logits(model, h, req_idx, code_idx)
    scores = ad.sigmoid(logits).value[:, 0]
    scores = np.clip(scores, _SCORE_EPS, 1.0 - _SCORE_EPS)
    threshold = model.config.threshold
    return [
        Prediction(req_id=r, code_id=c, score=float(s), label=bool(s >= threshold))
        for (r, c), s in zip(pairs, scores)
    ]


# ---------------------------------------------------------------------------
# splits, negatives, training


def split_links(project: Project, seed: int) -> Splits:
    """Stratified 60/20/20 split of ground-truth links.

    Stratification is by requirement: links are grouped by requirement and
    shuffled inside each group, the first link of every group is assigned to
    train (so every requirement with links is represented in training, the
    transductive regime the predictor assumes), and the shuffled remainder
    fills train up to 60%, then val to 80%, then test.
    """
    rng = np.random.default_rng(seed)
    groups: dict[str, list[tuple[str, str]]] = {}
    for req_id, code_id in sorted(project.ground_truth):
        groups.setdefault(req_id, []).append((req_id, code_id))
    train: list[tuple[str, str]] = []
    remainder: list[tuple[str, str]] = []
    for req_id in sorted(groups):
        links = groups[req_id]
        shuffled = [links[i] for i in rng.permutation(len(links))]
        train.append(shuffled[0])
        remainder.extend(shuffled[1:])
    remainder = [remainder[i] for i in rng.permutation(len(remainder))]
    total = len(train) + len(remainder)
    n_train = max(len(train), round(0.6 * total))
    n_val = round(0.2 * total)
    fill = n_train - len(train)
    train.extend(remainder[:fill])
    val = remainder[fill:fill + n_val]
    test = remainder[fill + n_val:]
    return Splits(train=tuple(train), val=tuple(val), test=tuple(test))


def negative_pool_splits(
    project: Project, seed: int
) -> tuple[tuple[tuple[str, str], ...], ...]:
    """Disjoint 60/20/20 partition of all non-linked req-code pairs."""
    req_ids = sorted(a.id for a in project.requirements())
    code_ids = sorted(a.id for a in project.code_artifacts())
    pool = [
        (r, c) for r in req_ids for c in code_ids if (r, c) not in project.ground_truth
    ]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    shuffled = [pool[i] for i in order]
    n = len(shuffled)
    n_train = int(0.6 * n)
    n_val = int(0.2 * n)
    return (
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train:n_train + n_val]),
        tuple(shuffled[n_train + n_val:]),
    )


def sample_negatives(
    pool: Sequence[tuple[str, str]], k: int, seed: int
) -> list[tuple[str, str]]:
    if k <= 0 or not pool:
        return []
    rng = np.random.default_rng(seed)
    replace = k > len(pool)
    if replace:
        warnings.warn("negative pool smaller than request; sampling with replacement")
    idx = rng.choice(len(pool), size=k, replace=replace)
    return [pool[i] for i in idx]


def _bce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on logits: softplus(x) - y * x, averaged."""
    y = ad.constant(labels.reshape(-1, 1))
    neg_part = ad.softplus(logits)
    pos_part = ad.mul(y, logits)
    total = ad.reduce_sum(ad.add(neg_part, ad.scale(pos_part, -1.0)))
    return ad.scale(total, 1.0 / labels.size)


def _clip_gradients(model: HgtModel, clip_norm: float) -> float:
    total = 0.0
    for name in sorted(model.params):
        g = model.params[name].grad
        if g is not None:
            total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if clip_norm > 0 and norm > clip_norm:
        factor = clip_norm / norm
        for name in sorted(model.params):
            g = model.params[name].grad
            if g is not None:
                model.params[name].grad = g * factor
    return norm


def _f1_at_threshold(
    model: HgtModel,
    graph: StrategyGraph,
    embeddings: EmbeddingTable,
    positives: Sequence[tuple[str, str]],
    negatives: Sequence[tuple[str, str]],
    sample_seed: int,
) -> float:
    candidates = list(positives) + list(negatives)
    if not candidates or not positives:
        return 0.0
    preds = predict(model, graph, embeddings, candidates, sample_seed=sample_seed)
    predicted = [(p.req_id, p.code_id) for p in preds if p.label]
    return evaluate(predicted, positives).f1


def train(
    project: Project,
    graph: StrategyGraph,
    embeddings: EmbeddingTable,
    config: TrainConfig,
    val_links: Sequence[tuple[str, str]] | None = None,
) -> tuple[HgtModel, list[dict]]:
    """Train by plain gradient descent on binary cross-entropy.

    Positives are the graph's supervision edges; negatives are resampled each
    epoch from the train partition of the non-linked pairs at
    ``negative_ratio``.  The log records, per epoch, the loss on the epoch's
    batch before and after the update plus validation F1 when ``val_links``
    is given.  A non-finite loss aborts training and restores the last good
    parameters.
    """
    positives = [
        (e.source, e.target) for e in graph.edges_of_type(EdgeType.SUPERVISION)
    ]
    if not positives:
        raise ModelError("training requires supervision edges in the graph")
    roles = seed_roles(config.seed)
    model = init_model(embeddings.dim, config, seed=roles.init)
    neg_train, neg_val, _ = negative_pool_splits(project, roles.negative_pool)
    per_epoch = epoch_seeds(config.seed, config.epochs)

    val_negatives: list[tuple[str, str]] = []
    if val_links:
        val_negatives = sample_negatives(
            neg_val, max(1, round(config.negative_ratio * len(val_links))),
            roles.negative_pool,
        )

    log: list[dict] = []
    n_negs = max(1, round(config.negative_ratio * len(positives)))
    for epoch, (neg_seed, fwd_seed, val_seed) in enumerate(per_epoch):
        negatives = sample_negatives(neg_train, n_negs, neg_seed)
        batch = positives + negatives
        labels = np.array([1.0] * len(positives) + [0.0] * len(negatives))
        req_idx, code_idx = _pair_indices(graph, batch)

        def batch_loss() -> Tensor:
            h = _forward_tensors(model, graph, embeddings, fwd_seed)
            return _bce_loss(_pair_logits(model, h, req_idx, code_idx), labels)

        checkpoint = model.clone_values()
        model.zero_grads()
        loss = batch_loss()
        loss_value = float(loss.value)
        if not math.isfinite(loss_value):
            model.restore_values(checkpoint)
            log.append({"epoch": epoch, "loss": loss_value, "diverged": True})
            break
        loss.backward(np.ones(()))
        grad_norm = _clip_gradients(model, config.clip_norm)
        for name in sorted(model.params):
            g = model.params[name].grad
            if g is not None:
                model.params[name].value = model.params[name].value - config.learning_rate * g

        loss_after = float(batch_loss().value)
        if not math.isfinite(loss_after):
            model.restore_values(checkpoint)
            log.append({"epoch": epoch, "loss": loss_value, "diverged": True})
            break
        entry = {
            "epoch": epoch,
            "loss": loss_value,
            "loss_after": loss_after,
            "grad_norm": grad_norm,
        }
        if val_links:
            entry["val_f1"] = _f1_at_threshold(
                model, graph, embeddings, val_links, val_negatives, val_seed
            )
        log.append(entry)
    return model, log


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(
    model: HgtModel,
    graph: StrategyGraph,
    embeddings: EmbeddingTable,
    pairs: Sequence[tuple[str, str]] | None = None,
    labels: Sequence[float] | None = None,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    sample_seed: int = 0,
) -> GradCheckReport:
    """Analytic gradients vs central finite differences, every parameter.

    Relative error per entry is |ga - gfd| / max(1, |ga|, |gfd|); the report
    carries the per-parameter maxima and the overall worst case.
    """
    if pairs is None:
        pairs = [(r, c) for r in graph.req_ids for c in graph.code_ids]
    if labels is None:
        labels = [float(i % 2) for i in range(len(pairs))]
    if not pairs:
        raise ModelError("gradient_check requires at least one pair")
    label_arr = np.asarray(labels, dtype=np.float64)
    req_idx, code_idx = _pair_indices(graph, pairs)

    def loss_value() -> float:
        h = _forward_tensors(model, graph, embeddings, sample_seed)
        return float(_bce_loss(_pair_logits(model, h, req_idx, code_idx), label_arr).value)

    model.zero_grads()
    h = _forward_tensors(model, graph, embeddings, sample_seed)
    loss = _bce_loss(_pair_logits(model, h, req_idx, code_idx), label_arr)
    loss.backward(np.ones(()))
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value))
        for name, t in model.params.items()
    }

    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    for name in sorted(model.params):
        tensor = model.params[name]
        fd = np.zeros_like(tensor.value)
        flat = tensor.value.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = loss_value()
            flat[i] = original - step
            down = loss_value()
            flat[i] = original
            fd_flat[i] = (up - down) / (2.0 * step)
        ga = analytic[name]
        denom = np.maximum(1.0, np.maximum(np.abs(ga), np.abs(fd)))
        err = float(np.max(np.abs(ga - fd) / denom)) if flat.size else 0.0
        per_param[name] = err
        if err > worst[1]:
            worst = (name, err)
    return GradCheckReport(
        max_rel_error=worst[1],
        worst_param=worst[0],
        per_param=per_param,
        tolerance=tolerance,
        passed=worst[1] < tolerance,
    )


# ---------------------------------------------------------------------------
# persistence


def save_model(model: HgtModel, path: Path | str) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "input_dim": model.input_dim,
        "config": asdict(model.config),
        "shapes": {name: list(t.value.shape) for name, t in sorted(model.params.items())},
        "params": {name: t.value.tolist() for name, t in sorted(model.params.items())},
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_model(path: Path | str) -> HgtModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != MODEL_FORMAT:
        raise ModelError(f"unsupported model format {data.get('format')!r}")
    cfg_data = dict(data["config"])
    cfg_data["mlp_dims"] = tuple(cfg_data["mlp_dims"])
    config = TrainConfig(**cfg_data)
    params: dict[str, Tensor] = {}
    for name, values in data["params"].items():
        arr = np.asarray(values, dtype=np.float64)
        expected = tuple(data["shapes"][name])
        if arr.shape != expected:
            raise ModelError(f"parameter {name} has shape {arr.shape}, manifest says {expected}")
        params[name] = ad.parameter(arr)
    return HgtModel(config=config, input_dim=data["input_dim"], params=params)
