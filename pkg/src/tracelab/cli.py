"""Command-line entry point wiring the workbench into end-to-end workflows.

Commands compose into the full pipeline::

    tracelab diffratio  ROOT --out OUT        # lexical-overlap diagnostic
    tracelab extract    ROOT --out OUT        # strategy graph + splits
    tracelab train      ROOT --graph G --out OUT
    tracelab predict    ROOT --graph G --model M --embeddings E --out OUT
    tracelab eval       --predictions P --graph G --split test --out OUT
    tracelab promptgen  ROOT --graph G --out OUT [--send ...]
    tracelab rerun      MANIFEST

Every command writes a ``manifest.json`` capturing the resolved options, the
root seed, input digests, tool version, and timings; re-running a manifest
reproduces the primary outputs bit-for-bit given the same corpus files.  All
randomness flows from the single ``--seed`` flag through the documented
splitmix64 role positions (see :mod:`tracelab.hgt`).

Exit codes: 0 success, 1 validation error, 2 runtime failure.  A config file
(``key = value`` lines, ``#`` comments) can pre-set any long option; explicit
flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__, evaluation, hgt, promptgen, stats
from .corpus import load_embeddings, load_project, save_embeddings
from .errors import TracelabError
from .javastruct import resolve_dependencies, scan_structure, structure_to_dict
from .strategies import (
    EdgeType,
    assemble_graph,
    build_feedback_edges,
    build_fine_grained_edges,
    dependency_to_edges,
    graph_from_dict,
    graph_to_dict,
)

GRAPH_FORMAT = "tracelab-graph/1"
ALL_STRATEGIES = ("dependency", "feedback", "fine_grained")


class _CliParser(argparse.ArgumentParser):
    """Argument errors raise instead of exiting so main() can map exit codes."""

    def error(self, message: str) -> None:  # noqa: D401
        raise TracelabError(message)


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: Path) -> str:
    return _sha256_bytes(path.read_bytes())


def _corpus_digest(root: Path) -> str:
    entries = []
    for path in sorted(root.rglob("*")):
        if path.is_file():
            entries.append(f"{path.relative_to(root).as_posix()}:{_sha256_file(path)}")
    return _sha256_bytes("\n".join(entries).encode())


def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=1) + "\n",
        encoding="utf-8",
    )


def _write_manifest(
    out_dir: Path,
    command: str,
    options: dict,
    inputs: dict[str, str],
    outputs: list[str],
    started: float,
) -> None:
    _write_json(
        out_dir / "manifest.json",
        {
            "command": command,
            "options": options,
            "seed": options.get("seed"),
            "inputs": inputs,
            "outputs": sorted(outputs),
            "version": __version__,
            "started_unix": round(started, 3),
            "duration_s": round(time.time() - started, 3),
        },
    )


def _options_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "command"}
    out = {}
    for key, value in vars(args).items():
        if key in skip:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _load_config_file(path: Path) -> dict:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise TracelabError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


# ---------------------------------------------------------------------------
# commands


def _cmd_diffratio(args: argparse.Namespace) -> None:
    started = time.time()
    project = load_project(args.root)
    report = stats.difference_ratio(project, args.resamples, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = asdict(report)
    payload["project"] = project.name
    _write_json(out / "diffratio.json", payload)
    dr = report.difference_ratio
    md = [
        f"# Difference Ratio: {project.name}",
        "",
        "| p_true | p_false | difference ratio | combined p | resamples |",
        "| --- | --- | --- | --- | --- |",
        f"| {report.p_true:.4f} | {report.p_false:.4f} | "
        f"{dr * 100:+.2f}% | {report.combined_p:.4g} | {report.n_resamples} |",
    ]
    if report.flags:
        md += ["", "Flags: " + ", ".join(report.flags)]
    md += ["", report.caveat, ""]
    (out / "diffratio.md").write_text("\n".join(md), encoding="utf-8")
    _write_manifest(
        out, "diffratio", _options_dict(args),
        {"corpus": _corpus_digest(Path(args.root))},
        ["diffratio.json", "diffratio.md"], started,
    )


def _parse_strategies(raw: str) -> tuple[str, ...]:
    if raw == "none":
        return ()
    chosen = tuple(s.strip() for s in raw.split(",") if s.strip())
    unknown = set(chosen) - set(ALL_STRATEGIES)
    if unknown:
        raise TracelabError(
            f"unknown strategies {sorted(unknown)}; choose from {ALL_STRATEGIES} or 'none'"
        )
    return chosen


def _cmd_extract(args: argparse.Namespace) -> None:
    started = time.time()
    project = load_project(args.root)
    strategies_on = _parse_strategies(args.strategies)
    roles = hgt.seed_roles(args.seed)
    splits = hgt.split_links(project, roles.split)

    structures = [scan_structure(a) for a in project.structural_code_artifacts()]
    dep_edges = (
        dependency_to_edges(resolve_dependencies(structures))
        if "dependency" in strategies_on
        else frozenset()
    )
    feedback_edges = (
        build_feedback_edges(project, args.feedback_fraction, roles.feedback, splits.train)
        if "feedback" in strategies_on and splits.train
        else frozenset()
    )
    fine_edges = (
        build_fine_grained_edges(project, structures, args.top_fraction)
        if "fine_grained" in strategies_on
        else frozenset()
    )
    graph = assemble_graph(
        project,
        dep_edges=dep_edges,
        feedback_edges=feedback_edges,
        fine_edges=fine_edges,
        supervision_links=splits.train,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": GRAPH_FORMAT,
        **graph_to_dict(graph),
        "splits": {
            "train": [list(p) for p in splits.train],
            "val": [list(p) for p in splits.val],
            "test": [list(p) for p in splits.test],
        },
        "params": {
            "seed": args.seed,
            "feedback_fraction": args.feedback_fraction,
            "top_fraction": args.top_fraction,
            "strategies": list(strategies_on),
        },
    }
    _write_json(out / "graph.json", payload)
    outputs = ["graph.json"]
    if args.dump_structure:
        _write_json(out / "structures.json", [structure_to_dict(s) for s in structures])
        outputs.append("structures.json")
    _write_manifest(
        out, "extract", _options_dict(args),
        {"corpus": _corpus_digest(Path(args.root))}, outputs, started,
    )


def _read_graph_file(path: Path):
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("format") != GRAPH_FORMAT:
        raise TracelabError(f"{path}: unsupported graph format {data.get('format')!r}")
    graph = graph_from_dict(data)
    splits = hgt.Splits(
        train=tuple((r, c) for r, c in data["splits"]["train"]),
        val=tuple((r, c) for r, c in data["splits"]["val"]),
        test=tuple((r, c) for r, c in data["splits"]["test"]),
    )
    return graph, splits, data


def _train_config(args: argparse.Namespace) -> hgt.TrainConfig:
    return hgt.TrainConfig(
        heads=args.heads,
        neighbor_samples_per_type=args.neighbor_samples,
        learning_rate=args.lr,
        epochs=args.epochs,
        negative_ratio=args.negative_ratio,
        threshold=args.threshold,
        seed=args.seed,
        head_mode=args.head_mode,
    )


def _cmd_train(args: argparse.Namespace) -> None:
    started = time.time()
    project = load_project(args.root)
    graph, splits, _ = _read_graph_file(Path(args.graph))
    config = _train_config(args)
    roles = hgt.seed_roles(args.seed)
    inputs = {
        "corpus": _corpus_digest(Path(args.root)),
        "graph": _sha256_file(Path(args.graph)),
    }
    if args.embeddings:
        table = load_embeddings(Path(args.embeddings), project)
        inputs["embeddings"] = _sha256_file(Path(args.embeddings))
    else:
        vocab = hgt.project_vocabulary(project)
        table = hgt.substitute_embeddings(project, vocab, args.embed_dim, roles.embeddings)

    model, log = hgt.train(project, graph, table, config, val_links=splits.val)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hgt.save_model(model, out / "model.json")
    save_embeddings(table, out / "embeddings.vec")
    with (out / "train_log.jsonl").open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    _write_manifest(
        out, "train", _options_dict(args), inputs,
        ["model.json", "embeddings.vec", "train_log.jsonl"], started,
    )


def _resolve_pairs(project, splits, spec: str, seed: int, negative_ratio: float):
    """Pair list for predict/promptgen: a split name, 'all', or a TSV file."""
    if spec == "all":
        req_ids = sorted(a.id for a in project.requirements())
        code_ids = sorted(a.id for a in project.code_artifacts())
        return [(r, c) for r in req_ids for c in code_ids]
    if spec in ("train", "val", "test"):
        roles = hgt.seed_roles(seed)
        pools = dict(zip(("train", "val", "test"), hgt.negative_pool_splits(project, roles.negative_pool)))
        positives = list(getattr(splits, spec))
        k = max(1, round(negative_ratio * len(positives))) if positives else 0
        negatives = hgt.sample_negatives(pools[spec], k, roles.negative_pool)
        return positives + negatives
    path = Path(spec)
    if not path.is_file():
        raise TracelabError(
            f"--pairs must be 'all', a split name, or a TSV file; {spec!r} not found"
        )
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise TracelabError(f"{path}:{lineno}: expected 'req_id<TAB>code_id'")
        pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


def _cmd_predict(args: argparse.Namespace) -> None:
    started = time.time()
    project = load_project(args.root)
    graph, splits, _ = _read_graph_file(Path(args.graph))
    model = hgt.load_model(Path(args.model))
    table = load_embeddings(Path(args.embeddings), project)
    pairs = _resolve_pairs(project, splits, args.pairs, model.config.seed, model.config.negative_ratio)
    preds = hgt.predict(model, graph, table, pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "predictions.json",
        [
            {"req_id": p.req_id, "code_id": p.code_id, "score": p.score, "label": p.label}
            for p in preds
        ],
    )
    _write_manifest(
        out, "predict", _options_dict(args),
        {
            "corpus": _corpus_digest(Path(args.root)),
            "graph": _sha256_file(Path(args.graph)),
            "model": _sha256_file(Path(args.model)),
            "embeddings": _sha256_file(Path(args.embeddings)),
        },
        ["predictions.json"], started,
    )


def _cmd_eval(args: argparse.Namespace) -> None:
    started = time.time()
    predictions = json.loads(Path(args.predictions).read_text(encoding="utf-8"))
    predicted = [(p["req_id"], p["code_id"]) for p in predictions if p["label"]]
    inputs = {"predictions": _sha256_file(Path(args.predictions))}
    if args.graph:
        _, splits, _ = _read_graph_file(Path(args.graph))
        if args.split == "all":
            truth = list(splits.train) + list(splits.val) + list(splits.test)
        else:
            truth = list(getattr(splits, args.split))
        inputs["graph"] = _sha256_file(Path(args.graph))
    elif args.truth:
        truth = []
        for line in Path(args.truth).read_text(encoding="utf-8").splitlines():
            if line.strip():
                req_id, code_id = line.split("\t")
                truth.append((req_id.strip(), code_id.strip()))
        inputs["truth"] = _sha256_file(Path(args.truth))
    else:
        raise TracelabError("eval needs --graph (with --split) or --truth links.tsv")
    result = evaluation.evaluate(predicted, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval.json", evaluation.eval_result_to_dict(result))
    (out / "eval.md").write_text(
        evaluation.results_markdown({args.split if args.graph else "all": result}),
        encoding="utf-8",
    )
    _write_manifest(out, "eval", _options_dict(args), inputs, ["eval.json", "eval.md"], started)


def _cmd_promptgen(args: argparse.Namespace) -> None:
    started = time.time()
    project = load_project(args.root)
    graph, splits, _ = _read_graph_file(Path(args.graph))
    pairs = _resolve_pairs(project, splits, args.pairs, args.seed, args.negative_ratio)

    feedback_labels = {
        (e.source, e.target): 1 for e in graph.edges_of_type(EdgeType.FEEDBACK)
    }
    if args.negative_feedback:
        for line in Path(args.negative_feedback).read_text(encoding="utf-8").splitlines():
            if line.strip():
                req_id, code_id = line.split("\t")
                feedback_labels[(req_id.strip(), code_id.strip())] = 0

    bundles = [
        promptgen.build_prompt(
            pair, project, graph, feedback_labels,
            temperature=args.temperature, code_token_budget=args.code_token_budget,
        )
        for pair in pairs
    ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    promptgen.bundles_to_jsonl(bundles, out / "bundles.jsonl")
    outputs = ["bundles.jsonl"]
    inputs = {
        "corpus": _corpus_digest(Path(args.root)),
        "graph": _sha256_file(Path(args.graph)),
    }

    if args.send:
        if args.send.startswith("replay:"):
            client = promptgen.ReplayClient(args.send.split(":", 1)[1])
        elif args.send == "http":
            if not args.endpoint or not args.model_name:
                raise TracelabError("--send http requires --endpoint and --model-name")
            client = promptgen.HttpEndpointClient(args.endpoint, args.model_name)
        else:
            raise TracelabError(f"--send must be 'http' or 'replay:FILE', got {args.send!r}")
        batch = promptgen.run_batch(bundles, client, budget=args.budget)
        with (out / "verdicts.jsonl").open("w", encoding="utf-8") as fh:
            for v in batch.verdicts:
                fh.write(
                    json.dumps(
                        {
                            "req_id": v.pair[0],
                            "code_id": v.pair[1],
                            "label": v.label.value,
                            "raw_response": v.raw_response,
                        },
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        _write_json(
            out / "predictions.json",
            [
                {
                    "req_id": v.pair[0],
                    "code_id": v.pair[1],
                    "score": 1.0 if v.label is promptgen.Verdict.YES else 0.0,
                    "label": v.label is promptgen.Verdict.YES,
                }
                for v in batch.verdicts
            ],
        )
        _write_json(
            out / "batch_manifest.json",
            {
                "requests_sent": batch.requests_sent,
                "retry_counts": list(batch.retry_counts),
                "unparseable_count": batch.unparseable_count,
                "errors": list(batch.errors),
                "remaining_pairs": [list(p) for p in batch.remaining_pairs],
            },
        )
        outputs += ["verdicts.jsonl", "predictions.json", "batch_manifest.json"]
    _write_manifest(out, "promptgen", _options_dict(args), inputs, outputs, started)


def _cmd_rerun(args: argparse.Namespace) -> None:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    command = manifest["command"]
    options = manifest["options"]
    argv = [command]
    for key, value in sorted(options.items()):
        flag = "--" + key.replace("_", "-")
        if key == "root":
            argv.insert(1, str(value))
            continue
        if key == "manifest":
            continue
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif value is not None:
            argv.extend([flag, str(value)])
    code = main(argv)
    if code != 0:
        raise TracelabError(f"rerun of {command} failed with exit code {code}")


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, root: bool = True) -> None:
    if root:
        p.add_argument("root", type=Path, help="corpus root directory")
    p.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, default=None, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="tracelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tracelab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diffratio", help="difference ratio diagnostic")
    _add_common(p)
    p.add_argument("--resamples", type=int, default=100)
    p.set_defaults(func=_cmd_diffratio)

    p = sub.add_parser("extract", help="build the strategy graph and splits")
    _add_common(p)
    p.add_argument("--feedback-fraction", type=float, default=0.1)
    p.add_argument("--top-fraction", type=float, default=0.2)
    p.add_argument(
        "--strategies",
        default=",".join(ALL_STRATEGIES),
        help="comma list of dependency,feedback,fine_grained or 'none'",
    )
    p.add_argument("--dump-structure", action="store_true")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", help="train the link predictor")
    _add_common(p)
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, default=None, help="ingest vectors instead of substitute")
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--neighbor-samples", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--negative-ratio", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--head-mode", choices=("inner_product", "scalar"), default="inner_product")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score requirement-code pairs")
    _add_common(p)
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--pairs", default="all", help="'all', a split name, or a TSV file")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="precision/recall/F1 of predictions")
    _add_common(p, root=False)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--graph", type=Path, default=None)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--truth", type=Path, default=None, help="links.tsv ground truth")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("promptgen", help="assemble (and optionally send) prompt bundles")
    _add_common(p)
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--pairs", default="all")
    p.add_argument("--negative-ratio", type=float, default=1.0)
    p.add_argument("--temperature", type=float, default=promptgen.DEFAULT_TEMPERATURE)
    p.add_argument("--code-token-budget", type=int, default=promptgen.DEFAULT_CODE_TOKEN_BUDGET)
    p.add_argument("--negative-feedback", type=Path, default=None)
    p.add_argument("--send", default=None, help="'http' or 'replay:FILE'")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model-name", default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=_cmd_promptgen)

    p = sub.add_parser("rerun", help="re-execute a recorded manifest")
    p.add_argument("manifest", type=Path)
    p.set_defaults(func=_cmd_rerun)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Config file values fill options the command line left at default."""
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if config_path is None:
        return args
    values = {k: _coerce(v) for k, v in _load_config_file(Path(config_path)).items()}
    known = set(vars(args))
    unknown = set(values) - known
    if unknown:
        raise TracelabError(f"config file sets unknown keys: {sorted(unknown)}")
    explicit = {
        tok[2:].split("=", 1)[0].replace("-", "_")
        for tok in argv
        if tok.startswith("--")
    }
    for key, value in values.items():
        if key not in explicit:
            setattr(args, key, value)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        args.func(args)
    except TracelabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
