"""Project corpus loading, validation, and persistence.

Corpus layout on disk::

    <root>/req/*.txt          requirement artifacts (id = file stem)
    <root>/code/**/*.java     code artifacts (id = file stem), .jsp ingested
                              as plain text but never structurally parsed
    <root>/links.tsv          ground truth, one "req_id<TAB>code_id" per line
    <root>/embeddings.vec     optional precomputed vectors

Embedding file format: first line ``<count> <dim>``, then one row per
artifact: ``<artifact_id> <v1> ... <v_dim>`` with space-separated decimal
floats.

Files that fail UTF-8 decoding are re-decoded with replacement characters and
recorded in the project's load report instead of being rejected; legacy
corpora contain mixed encodings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CorpusError, EmbeddingError
from .textproc import TokenizerConfig, config_for_kind, tokenize

__all__ = [
    "Kind",
    "Artifact",
    "ProjectConfig",
    "Project",
    "EmbeddingTable",
    "load_project",
    "save_project",
    "load_saved_project",
    "load_embeddings",
    "save_embeddings",
]


class Kind(str, Enum):
    REQUIREMENT = "requirement"
    CODE = "code"


@dataclass(frozen=True)
class Artifact:
    """One requirement or code document."""

    id: str
    kind: Kind
    path: str
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class ProjectConfig:
    """Corpus ingestion rules."""

    code_extensions: tuple[str, ...] = (".java", ".jsp")
    structural_extensions: tuple[str, ...] = (".java",)
    stopword_profile: str = "english"
    seed: int = 0


@dataclass(frozen=True)
class Project:
    """A validated, immutable corpus: artifacts plus ground-truth links."""

    name: str
    artifacts: tuple[Artifact, ...]
    ground_truth: frozenset[tuple[str, str]]
    config: ProjectConfig
    load_report: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {a.id: a for a in self.artifacts})

    def artifact(self, artifact_id: str) -> Artifact:
        by_id: dict[str, Artifact] = getattr(self, "_by_id")
        if artifact_id not in by_id:
            raise KeyError(f"unknown artifact id {artifact_id!r}")
        return by_id[artifact_id]

    def has_artifact(self, artifact_id: str) -> bool:
        return artifact_id in getattr(self, "_by_id")

    def requirements(self) -> tuple[Artifact, ...]:
        return tuple(a for a in self.artifacts if a.kind is Kind.REQUIREMENT)

    def code_artifacts(self) -> tuple[Artifact, ...]:
        return tuple(a for a in self.artifacts if a.kind is Kind.CODE)

    def structural_code_artifacts(self) -> tuple[Artifact, ...]:
        """Code artifacts eligible for structural parsing (e.g. not JSP)."""
        exts = tuple(e.lower() for e in self.config.structural_extensions)
        return tuple(
            a for a in self.code_artifacts() if Path(a.path).suffix.lower() in exts
        )


@dataclass(frozen=True)
class EmbeddingTable:
    """Per-artifact real vectors of one shared dimensionality."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for artifact_id, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise EmbeddingError(
                    f"vector for {artifact_id!r} has shape {vec.shape}, expected ({self.dim},)"
                )


def _read_text(path: Path, report: list[str]) -> str:
    data = path.read_bytes()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        report.append(f"lossy-decoded {path.name}: invalid UTF-8 replaced")
        return data.decode("utf-8", errors="replace")


def load_project(root: Path | str, config: ProjectConfig | None = None) -> Project:
    """Load and validate a corpus directory.

    Raises :class:`CorpusError` naming the offending path or id on a missing
    directory, duplicate artifact ids, or a link endpoint that does not
    resolve to an artifact of the right kind.
    """
    root = Path(root)
    config = config or ProjectConfig()
    req_dir = root / "req"
    code_dir = root / "code"
    links_file = root / "links.tsv"
    for required in (req_dir, code_dir):
        if not required.is_dir():
            raise CorpusError(f"missing directory: {required}")
    if not links_file.is_file():
        raise CorpusError(f"missing ground-truth file: {links_file}")

    report: list[str] = []
    req_config = config_for_kind(is_code=False)
    code_config = config_for_kind(is_code=True)

    artifacts: dict[str, Artifact] = {}

    def add(artifact: Artifact, path: Path) -> None:
        if artifact.id in artifacts:
            raise CorpusError(
                f"duplicate artifact id {artifact.id!r}: "
                f"{artifacts[artifact.id].path} and {path}"
            )
        artifacts[artifact.id] = artifact

    for path in sorted(req_dir.glob("*.txt")):
        text = _read_text(path, report)
        add(
            Artifact(
                id=path.stem,
                kind=Kind.REQUIREMENT,
                path=str(path.relative_to(root)),
                text=text,
                tokens=tokenize(text, req_config),
            ),
            path,
        )

    code_exts = tuple(e.lower() for e in config.code_extensions)
    code_paths = sorted(
        (p for p in code_dir.rglob("*") if p.is_file() and p.suffix.lower() in code_exts),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    for path in code_paths:
        text = _read_text(path, report)
        add(
            Artifact(
                id=path.stem,
                kind=Kind.CODE,
                path=str(path.relative_to(root)),
                text=text,
                tokens=tokenize(text, code_config),
            ),
            path,
        )

    ground_truth: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(
        _read_text(links_file, report).splitlines(), start=1
    ):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(
                f"{links_file.name}:{lineno}: expected 'req_id<TAB>code_id', got {raw!r}"
            )
        req_id, code_id = parts[0].strip(), parts[1].strip()
        for endpoint, kind in ((req_id, Kind.REQUIREMENT), (code_id, Kind.CODE)):
            found = artifacts.get(endpoint)
            if found is None:
                raise CorpusError(
                    f"{links_file.name}:{lineno}: link endpoint {endpoint!r} not found"
                )
            if found.kind is not kind:
                raise CorpusError(
                    f"{links_file.name}:{lineno}: endpoint {endpoint!r} is a "
                    f"{found.kind.value}, expected {kind.value}"
                )
        if (req_id, code_id) in ground_truth:
            report.append(f"duplicate link dropped: {links_file.name}:{lineno} {req_id} {code_id}")
        ground_truth.add((req_id, code_id))

    return Project(
        name=root.name,
        artifacts=tuple(sorted(artifacts.values(), key=lambda a: a.id)),
        ground_truth=frozenset(ground_truth),
        config=config,
        load_report=tuple(report),
    )


def _project_dict(project: Project) -> dict:
    return {
        "name": project.name,
        "config": {
            "code_extensions": list(project.config.code_extensions),
            "structural_extensions": list(project.config.structural_extensions),
            "stopword_profile": project.config.stopword_profile,
            "seed": project.config.seed,
        },
        "artifacts": [
            {
                "id": a.id,
                "kind": a.kind.value,
                "path": a.path,
                "text": a.text,
                "tokens": list(a.tokens),
            }
            for a in project.artifacts
        ],
        "ground_truth": sorted(list(pair) for pair in project.ground_truth),
        "load_report": list(project.load_report),
    }


def save_project(project: Project, path: Path | str) -> None:
    """Serialize a project to canonical JSON (byte-identical across runs)."""
    payload = json.dumps(
        _project_dict(project), sort_keys=True, ensure_ascii=False, indent=1
    )
    Path(path).write_text(payload + "\n", encoding="utf-8")


def load_saved_project(path: Path | str) -> Project:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = data["config"]
    return Project(
        name=data["name"],
        artifacts=tuple(
            Artifact(
                id=a["id"],
                kind=Kind(a["kind"]),
                path=a["path"],
                text=a["text"],
                tokens=tuple(a["tokens"]),
            )
            for a in data["artifacts"]
        ),
        ground_truth=frozenset((r, c) for r, c in data["ground_truth"]),
        config=ProjectConfig(
            code_extensions=tuple(cfg["code_extensions"]),
            structural_extensions=tuple(cfg["structural_extensions"]),
            stopword_profile=cfg["stopword_profile"],
            seed=cfg["seed"],
        ),
        load_report=tuple(data["load_report"]),
    )


def load_embeddings(path: Path | str, project: Project) -> EmbeddingTable:
    """Ingest externally computed vectors in the documented format."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise EmbeddingError(f"{path.name}: empty embedding file")
    header = lines[0].split()
    if len(header) != 2:
        raise EmbeddingError(f"{path.name}:1: expected '<count> <dim>' header")
    try:
        count, dim = int(header[0]), int(header[1])
    except ValueError as exc:
        raise EmbeddingError(f"{path.name}:1: non-integer header") from exc
    if dim < 1 or count < 0:
        raise EmbeddingError(f"{path.name}:1: invalid count/dim {count} {dim}")

    rows = [line for line in lines[1:] if line.strip()]
    if len(rows) != count:
        raise EmbeddingError(
            f"{path.name}: header declares {count} rows, found {len(rows)}"
        )
    vectors: dict[str, np.ndarray] = {}
    for lineno, row in enumerate(rows, start=2):
        parts = row.split()
        artifact_id = parts[0]
        values = parts[1:]
        if len(values) != dim:
            raise EmbeddingError(
                f"{path.name}:{lineno}: dimension mismatch for {artifact_id!r}: "
                f"expected {dim} values, got {len(values)}"
            )
        if not project.has_artifact(artifact_id):
            raise EmbeddingError(
                f"{path.name}:{lineno}: unknown artifact id {artifact_id!r}"
            )
        if artifact_id in vectors:
            raise EmbeddingError(
                f"{path.name}:{lineno}: duplicate row for {artifact_id!r}"
            )
        vec = np.array([float(v) for v in values], dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError(
                f"{path.name}:{lineno}: non-finite value for {artifact_id!r}"
            )
        vectors[artifact_id] = vec
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_embeddings(table: EmbeddingTable, path: Path | str) -> None:
    """Write an EmbeddingTable in the documented vector format."""
    lines = [f"{len(table.vectors)} {table.dim}"]
    for artifact_id in sorted(table.vectors):
        vec = table.vectors[artifact_id]
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError(f"non-finite value for {artifact_id!r}")
        lines.append(artifact_id + " " + " ".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
