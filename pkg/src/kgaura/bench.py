"""Evaluation harness: effectiveness, fidelity, latency and the end-to-end pipeline."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .genpool import HttpNameProvider, MockNameProvider, gen_edge_candidates, gen_node_candidates, pool
from .graph import KnowledgeGraph, inject, parse_property_json, parse_triples, serialize
from .keynode import MvcConfig, select_key_nodes
from .kge import Hyperparams, save_model, train
from .redteam import kge_purge
from .retrieve import RetrievalContext, build_dense_index, retrieve
from .sds import (
    DefaultPipeline,
    Question,
    anchored_questions,
    answer_from_context,
    gen_questions,
    questions_to_jsonl,
    select_adulterants,
)
from .seal import OwnerKey, SealedGraph, authorized_retrieve, decrypt_flag, encrypt_flag, load_key, node_aad, seal
from .synth import synthetic_kg

__all__ = [
    "LatencyReport",
    "MetricsReport",
    "PipelineConfig",
    "PipelineError",
    "PipelineResult",
    "eval_effectiveness",
    "eval_fidelity",
    "jaccard",
    "load_config",
    "load_graph",
    "measure_latency",
    "run_pipeline",
    "stage_seed",
]

log = logging.getLogger(__name__)


def jaccard(a: frozenset | set, b: frozenset | set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass
class MetricsReport:
    arr: float
    hs: float
    cdpa: float
    cira: float
    rr: float | None = None
    latency_overhead: float | None = None
    per_question_records: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        for name in ("arr", "hs", "cdpa", "cira", "rr"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} is outside [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _answerer(pipeline: Any):
    """Context-level answer function; pipelines may provide ``answer_context``."""
    return getattr(pipeline, "answer_context", None) or answer_from_context


class _Retriever:
    """Per-graph retrieval with the dense index built once."""

    def __init__(self, graph: Any, retriever: str, top_k: int) -> None:
        self.graph = graph
        self.retriever = retriever
        self.top_k = top_k
        self.index = None if retriever == "symbolic" else build_dense_index(graph)

    def __call__(self, q: Question) -> RetrievalContext:
        return retrieve(q.text, self.graph, self.retriever, hops=q.hops, index=self.index, top_k=self.top_k)


def _pipeline_params(pipeline: Any, retriever: str | None) -> tuple[str, int]:
    retr = retriever or getattr(pipeline, "retriever", "symbolic")
    return retr, getattr(pipeline, "top_k", 4)


def _is_adulterant_context(ctx: RetrievalContext, clean: KnowledgeGraph) -> bool:
    return any(n not in clean.entities for n in ctx.nodes) or any(t not in clean.triples for t in ctx.triples)


def eval_effectiveness(
    clean_graph: KnowledgeGraph,
    sealed_graph: Any,
    questions: Sequence[Question],
    retriever: str | None = None,
    pipeline: Any = None,
) -> dict:
    """Attacker-side metrics: adulterant retrieval rate and harmfulness.

    The sealed graph is queried as-is, its flags being opaque to the
    attacker. An element counts as adulterant when it is absent from
    ``clean_graph``.
    """
    if not questions:
        raise ValueError("eval_effectiveness needs at least one question")
    pipeline = pipeline or DefaultPipeline()
    retr, top_k = _pipeline_params(pipeline, retriever)
    answer = _answerer(pipeline)
    clean_r = _Retriever(clean_graph, retr, top_k)
    dirty_r = _Retriever(sealed_graph, retr, top_k)
    hit = correct = harmed = 0
    records = []
    for q in questions:
        base = answer(q, clean_r(q))
        ctx = dirty_r(q)
        attacked = answer(q, ctx)
        poisoned = _is_adulterant_context(ctx, clean_graph)
        ok = base == q.gold_text
        hit += poisoned
        correct += ok
        harmed += ok and attacked != q.gold_text
        records.append(
            {
                "question": q.text,
                "gold": q.gold_text,
                "clean_answer": base,
                "unauthorized_answer": attacked,
                "adulterant_retrieved": poisoned,
                "baseline_correct": ok,
            }
        )
    return {
        "arr": hit / len(questions),
        "hs": harmed / correct if correct else 0.0,
        "baseline_correct": correct,
        "records": records,
    }


def eval_fidelity(
    clean_graph: KnowledgeGraph,
    sealed_graph: SealedGraph,
    key: OwnerKey,
    questions: Sequence[Question],
    retriever: str | None = None,
    pipeline: Any = None,
) -> dict:
    """Authorized-side metrics: answer agreement and retrieved-content Jaccard."""
    if not questions:
        raise ValueError("eval_fidelity needs at least one question")
    pipeline = pipeline or DefaultPipeline()
    retr, top_k = _pipeline_params(pipeline, retriever)
    answer = _answerer(pipeline)
    clean_r = _Retriever(clean_graph, retr, top_k)
    index = clean_r.index if retr == "symbolic" else build_dense_index(sealed_graph)
    same = 0
    overlap = 0.0
    records = []
    for q in questions:
        ref = clean_r(q)
        got = authorized_retrieve(q.text, sealed_graph, key, retr, hops=q.hops, index=index, top_k=top_k)
        a_ref, a_got = answer(q, ref), answer(q, got)
        j = jaccard(ref.triple_ids, got.triple_ids)
        same += a_ref == a_got
        overlap += j
        records.append(
            {
                "question": q.text,
                "authorized_answer": a_got,
                "clean_answer": a_ref,
                "jaccard": j,
                "decryptions": got.decryptions,
            }
        )
    return {"cdpa": same / len(questions), "cira": overlap / len(questions), "records": records}


@dataclass
class LatencyReport:
    clean_median_s: float
    filtered_median_s: float
    overhead: float
    decrypt_median_s: float
    decrypt_iterations: int
    repetitions: int
    retriever: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _decrypt_microbench(key: OwnerKey, iterations: int) -> float:
    ct = encrypt_flag(1, key, node_aad("bench"))
    aad = node_aad("bench")
    samples = []
    clock = time.perf_counter
    for _ in range(iterations):
        t0 = clock()
        decrypt_flag(ct, key, aad)
        samples.append(clock() - t0)
    return statistics.median(samples)


def measure_latency(
    clean_graph: KnowledgeGraph,
    sealed_graph: SealedGraph,
    key: OwnerKey,
    questions: Sequence[Question],
    retriever: str = "symbolic",
    repetitions: int = 10,
    *,
    top_k: int = 4,
    decrypt_iterations: int = 10_000,
) -> LatencyReport:
    """Median per-query wall clock, clean graph vs sealed graph with filtering.

    Each repetition times one pass over all questions (retrieval plus
    answer extraction); passes alternate between the two sides so drift
    affects both equally.
    """
    if repetitions < 10:
        raise ValueError("repetitions must be >= 10")
    if decrypt_iterations < 10_000:
        raise ValueError("decrypt_iterations must be >= 10000")
    if not questions:
        raise ValueError("measure_latency needs at least one question")
    clean_r = _Retriever(clean_graph, retriever, top_k)
    index = None if retriever == "symbolic" else build_dense_index(sealed_graph)

    def run_clean() -> None:
        for q in questions:
            answer_from_context(q, clean_r(q))

    def run_filtered() -> None:
        for q in questions:
            ctx = authorized_retrieve(q.text, sealed_graph, key, retriever, hops=q.hops, index=index, top_k=top_k)
            answer_from_context(q, ctx)

    run_clean()
    run_filtered()
    clean_t, filt_t = [], []
    clock = time.perf_counter
    for _ in range(repetitions):
        t0 = clock()
        run_clean()
        clean_t.append((clock() - t0) / len(questions))
        t0 = clock()
        run_filtered()
        filt_t.append((clock() - t0) / len(questions))
    a, b = statistics.median(clean_t), statistics.median(filt_t)
    return LatencyReport(
        a, b, (b - a) / a, _decrypt_microbench(key, decrypt_iterations), decrypt_iterations, repetitions, retriever
    )


# pipeline ------------------------------------------------------------------------------


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    out_dir: str = "run"
    seed: int = 0
    # graph source: a file, or a synthetic graph when empty
    graph: str = ""
    graph_format: str = ""
    synthetic_entities: int = 1500
    synthetic_triples: int = 5000
    synthetic_relations: int = 8
    synthetic_clusters: int = 10
    # key nodes
    exact_node_threshold: int = 2000
    time_budget: float | None = None  # wall-clock limits make the fallback machine-dependent
    node_budget: int | None = 500_000
    # link predictor
    kge_dim: int = 64
    kge_epochs: int = 100
    kge_learning_rate: float = 0.01
    kge_margin: float = 1.0
    kge_batch_size: int = 128
    # candidates and selection
    n_per_slot: int = 1
    provider: str = "mock"
    provider_url: str = ""
    question_hops: int = 1
    question_count: int = 0  # 0: one question per key node
    questions_per_key: int = 20
    retriever: str = "symbolic"
    top_k: int = 4
    threads: int = 1
    # sealing
    seal: bool = True
    property_name: str = "remark"
    key_file: str = ""
    deterministic_nonces: bool = True
    # evaluation
    evaluate: bool = True
    purge_quantile: float | None = 0.2

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            dim=self.kge_dim,
            margin=self.kge_margin,
            learning_rate=self.kge_learning_rate,
            epochs=self.kge_epochs,
            batch_size=self.kge_batch_size,
            seed=stage_seed(self.seed, "kge"),
        )


def load_config(path: str | Path) -> PipelineConfig:
    """Read a JSON or TOML config; a top-level ``[pipeline]`` table is unwrapped."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        data = tomllib.loads(text)
    if isinstance(data.get("pipeline"), dict):
        data = data["pipeline"]
    cfg = PipelineConfig.from_dict(data)
    base = path.parent
    for name in ("graph", "key_file"):
        value = getattr(cfg, name)
        if value and not Path(value).is_absolute():
            setattr(cfg, name, str(base / value))
    if not Path(cfg.out_dir).is_absolute():
        cfg.out_dir = str(base / cfg.out_dir)
    return cfg


def stage_seed(seed: int, stage: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{stage}".encode()).digest()[:4], "little")


def load_graph(path: str | Path, format: str = "") -> KnowledgeGraph:
    path = Path(path)
    fmt = format or {".nt": "ntriples", ".json": "property-json"}.get(path.suffix.lower(), "tsv")
    if fmt == "property-json":
        return parse_property_json(path.read_bytes())[0]
    return parse_triples(path.read_bytes(), fmt)


@dataclass
class PipelineResult:
    out_dir: Path
    files: dict[str, Path]
    metrics: MetricsReport | None
    warnings: list[str]


class _Stages:
    def __init__(self) -> None:
        self.name = ""

    def __call__(self, name: str) -> "_Stages":
        self.name = name
        log.info("pipeline stage: %s", name)
        return self

    def __enter__(self) -> None:
        return None

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """ingest, key nodes, train, generate, select, inject, seal, evaluate; all artifacts go to ``out_dir``."""
    cfg = config
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}
    warnings: list[str] = []
    stage = _Stages()

    def write(name: str, data: bytes | str) -> None:
        p = out / name
        p.write_bytes(data if isinstance(data, bytes) else data.encode("utf-8"))
        files[name] = p

    with stage("ingest"):
        if cfg.graph:
            graph = load_graph(cfg.graph, cfg.graph_format)
        else:
            graph = synthetic_kg(
                n_entities=cfg.synthetic_entities,
                n_triples=cfg.synthetic_triples,
                n_relations=cfg.synthetic_relations,
                n_clusters=cfg.synthetic_clusters,
                seed=stage_seed(cfg.seed, "synthetic"),
            )
        write("graph.tsv", serialize(graph, "tsv"))

    with stage("keynodes"):
        keys = select_key_nodes(
            graph, MvcConfig(cfg.exact_node_threshold, cfg.time_budget, cfg.node_budget, cfg.seed)
        )
        if keys.fallback_from:
            warnings.append(f"exact cover exhausted its budget, fell back to {keys.method}")
        write("keynodes.json", keys.to_json())

    with stage("train"):
        model = train(graph, cfg.hyperparams())
        save_model(model, out / "model.kge")
        files["model.kge"] = out / "model.kge"

    with stage("generate"):
        edges = gen_edge_candidates(model, graph, keys.members, cfg.n_per_slot)
        provider = HttpNameProvider(cfg.provider_url) if cfg.provider == "http" else MockNameProvider(
            stage_seed(cfg.seed, "names")
        )
        nodes = gen_node_candidates(
            provider, graph, keys.members, max_in_flight=max(1, cfg.threads), warnings=warnings
        )
        cands = pool(edges, nodes)
        write("candidates.jsonl", cands.to_jsonl())

    with stage("questions"):
        qseed = stage_seed(cfg.seed, "questions")
        if cfg.question_count > 0:
            questions = gen_questions(
                graph, cfg.question_count, cfg.question_hops, qseed, anchors=keys.members, warnings=warnings
            )
        else:
            questions = anchored_questions(graph, keys.members, qseed, cfg.question_hops)
        if not questions:
            raise ValueError("no question could be generated from the key nodes")
        write("questions.jsonl", questions_to_jsonl(questions))

    pipeline = DefaultPipeline(cfg.retriever, cfg.top_k)
    with stage("select"):
        chosen = select_adulterants(
            cands, questions, graph, pipeline, key_nodes=keys.members, per_key=cfg.questions_per_key,
            workers=cfg.threads,
        )
        warnings.extend(chosen.warnings)
        write("adulterants.json", chosen.to_json())

    with stage("inject"):
        adulterated = inject(graph, chosen)

    sealed = None
    key = None
    if cfg.seal:
        with stage("seal"):
            key = load_key(cfg.key_file or None)
            nonce_seed = stage_seed(cfg.seed, "nonce") if cfg.deterministic_nonces else None
            sealed = seal(adulterated, chosen, key, cfg.property_name, nonce_seed=nonce_seed)
            write("sealed.json", sealed.to_bytes())

    metrics = None
    if cfg.evaluate:
        with stage("evaluate"):
            if sealed is None or key is None:
                raise PipelineError("evaluate", "evaluation needs a sealed graph; enable the seal stage")
            eff = eval_effectiveness(graph, sealed, questions, pipeline=pipeline)
            fid = eval_fidelity(graph, sealed, key, questions, pipeline=pipeline)
            rr = None
            if cfg.purge_quantile is not None:
                truth = [t.triple_id for t in chosen.triples]
                rr = kge_purge(adulterated, model, cfg.purge_quantile, truth=truth)[1].retain_rate
            records = [{**a, **b} for a, b in zip(eff["records"], fid["records"])]
            metrics = MetricsReport(eff["arr"], eff["hs"], fid["cdpa"], fid["cira"], rr, None, records)
            write("metrics.json", metrics.to_json())

    write("warnings.json", json.dumps(warnings, indent=2) + "\n")
    return PipelineResult(out, files, metrics, warnings)
