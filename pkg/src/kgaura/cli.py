"""Command-line entry point; every stage reads and writes plain files."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .bench import (
    PipelineError,
    eval_effectiveness,
    eval_fidelity,
    load_config,
    load_graph,
    measure_latency,
    run_pipeline,
    stage_seed,
)
from .genpool import HttpNameProvider, MockNameProvider, gen_edge_candidates, gen_node_candidates, load_candidates, pool
from .graph import ADULTERANT, ORIGINAL, KnowledgeGraph, inject, parse_property_json, serialize
from .keynode import METHODS, MvcConfig, NodeSet, baseline_mvc, exact_mvc, malatya_mvc, select_key_nodes
from .kge import Hyperparams, load_model, save_model, train
from .redteam import hybrid_detect, kge_purge, semantic_detect, structural_detect
from .retrieve import RETRIEVERS, retrieve, serialize_context
from .sds import (
    UNKNOWN,
    AdulterantSet,
    DefaultPipeline,
    anchored_questions,
    answer_from_context,
    gen_questions,
    load_questions,
    parse_question,
    questions_to_jsonl,
    select_adulterants,
)
from .seal import FORMAT_TAG, SealedGraph, authorized_retrieve, load_key, seal
from .synth import synthetic_kg

log = logging.getLogger("kgaura")

ADULTERATED_TAG = "adulterated-graph/1"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit with 1
        self.print_help(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False))
    else:
        print(text)


# graph files ----------------------------------------------------------------------------


def _read_any(path: str):
    """A sealed graph, an adulterated graph (with provenance) or a plain graph file."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        data = p.read_bytes()
        graph, nprops, tprops, header = parse_property_json(data)
        fmt = header.get("format")
        if fmt == FORMAT_TAG:
            return SealedGraph.from_bytes(data)
        if fmt == ADULTERATED_TAG:
            ents = [e for e, pr in nprops.items() if pr.get("provenance") == ADULTERANT]
            trips = [t for t in graph.triples if tprops.get(t.triple_id, {}).get("provenance") == ADULTERANT]
            return KnowledgeGraph(graph.triples, graph.entities, adulterant_entities=ents, adulterant_triples=trips)
        return graph
    return load_graph(p)


def _plain(path: str) -> KnowledgeGraph:
    g = _read_any(path)
    return g.graph if isinstance(g, SealedGraph) else g


def _write_adulterated(graph: KnowledgeGraph, path: str) -> None:
    nodes = {e: {"provenance": graph.provenance(e)} for e in graph.entities}
    trips = {t.triple_id: {"provenance": graph.provenance(t)} for t in graph.triples}
    Path(path).write_bytes(
        serialize(graph, "property-json", node_properties=nodes, triple_properties=trips,
                  header={"format": ADULTERATED_TAG})
    )


# subcommands ----------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    if args.synthetic:
        g = synthetic_kg(n_entities=args.entities, n_triples=args.synthetic, seed=args.seed)
    elif args.input:
        g = load_graph(args.input, args.format or "")
    else:
        raise ValueError("give --in PATH or --synthetic N")
    Path(args.out).write_bytes(serialize(g, "tsv"))
    stats = {"entities": len(g.entities), "relations": len(g.relations), "triples": len(g.triples), "out": args.out}
    _emit(args, stats, f"{stats['entities']} entities, {stats['relations']} relations, "
          f"{stats['triples']} triples -> {args.out}")
    return 0


def cmd_keynodes(args) -> int:
    g = _plain(args.input)
    if args.method == "auto":
        ns = select_key_nodes(g, MvcConfig(args.threshold, args.time_budget, args.node_budget, args.seed))
    elif args.method == "exact":
        ns = exact_mvc(g, args.time_budget, node_budget=args.node_budget)
    elif args.method == "malatya":
        ns = malatya_mvc(g)
    else:
        ns = baseline_mvc(g, args.method, seed=None if args.method == "degree_greedy" else args.seed)
    Path(args.out).write_text(ns.to_json() + "\n")
    extra = f" (fallback from {ns.fallback_from})" if ns.fallback_from else ""
    _emit(args, ns.to_dict(), f"{ns.objective} key nodes by {ns.method}{extra} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    g = _plain(args.input)
    hp = Hyperparams(args.dim, args.margin, args.lr, args.epochs, args.negatives, args.batch_size, args.seed)
    model = train(g, hp)
    save_model(model, args.out)
    info = {"entities": len(model.entities), "relations": len(model.relations), "dim": model.dim, "out": args.out}
    _emit(args, info, f"trained {hp.epochs} epochs, dim {hp.dim} -> {args.out}")
    return 0


def _keys(path: str) -> NodeSet:
    return NodeSet.from_dict(json.loads(Path(path).read_text()))


def cmd_generate(args) -> int:
    g = _plain(args.input)
    keys = _keys(args.keys)
    model = load_model(args.model)
    warnings: list[str] = []
    edges = gen_edge_candidates(model, g, keys.members, args.n_per_slot)
    if args.provider == "http":
        if not args.provider_url:
            raise ValueError("--provider http needs --provider-url")
        provider = HttpNameProvider(args.provider_url)
    else:
        provider = MockNameProvider(stage_seed(args.seed, "names"))
    nodes = gen_node_candidates(provider, g, keys.members, max_in_flight=args.threads, warnings=warnings)
    cands = pool(edges, nodes)
    Path(args.out).write_text(cands.to_jsonl())
    for w in warnings:
        log.warning(w)
    info = {"edge": len(edges), "node": len(nodes), "total": len(cands), "warnings": warnings}
    _emit(args, info, f"{len(edges)} edge + {len(nodes)} node candidates -> {args.out}")
    return 0


def cmd_select(args) -> int:
    g = _plain(args.input)
    keys = _keys(args.keys)
    cands = load_candidates(Path(args.candidates).read_text())
    if args.questions:
        qs = load_questions(Path(args.questions).read_text())
    else:
        qs = anchored_questions(g, keys.members, stage_seed(args.seed, "questions"), args.hops)
        if args.questions_out:
            Path(args.questions_out).write_text(questions_to_jsonl(qs))
    chosen = select_adulterants(
        cands, qs, g, DefaultPipeline(args.retriever, args.top_k), key_nodes=keys.members, workers=args.threads
    )
    Path(args.out).write_text(chosen.to_json())
    info = {"chosen": len(chosen), "triples": len(chosen.triples), "warnings": chosen.warnings}
    _emit(args, info, f"{len(chosen)} adulterants chosen ({len(chosen.triples)} triples) -> {args.out}")
    return 0


def cmd_inject(args) -> int:
    g = _plain(args.input)
    chosen = AdulterantSet.from_json(Path(args.adulterants).read_text())
    out = inject(g, chosen)
    _write_adulterated(out, args.out)
    info = {"triples": len(out.triples), "adulterant_triples": len(out.adulterant_triples),
            "fake_entities": len(out.adulterant_entities)}
    _emit(args, info, f"injected {len(out.adulterant_triples)} triples, "
          f"{len(out.adulterant_entities)} fake entities -> {args.out}")
    return 0


def cmd_seal(args) -> int:
    g = _read_any(args.input)
    if isinstance(g, SealedGraph):
        raise ValueError(f"{args.input} is already sealed")
    if not Path(args.input).suffix.lower() == ".json":
        log.warning("input carries no provenance; every element is sealed as original")
    key = load_key(args.key_file)
    sealed = seal(g, None, key, args.property, nonce_seed=args.nonce_seed)
    sealed.save(args.out)
    info = {"elements": len(sealed.node_flags) + len(sealed.triple_flags), "key_id": key.key_id}
    _emit(args, info, f"sealed {info['elements']} elements under key {key.key_id} -> {args.out}")
    return 0


def cmd_query(args) -> int:
    g = _read_any(args.graph)
    plain = g.graph if isinstance(g, SealedGraph) else g
    try:
        q = parse_question(args.question, plain)
    except (ValueError, KeyError) as exc:
        log.warning("question not answerable by the template reader: %s", exc)
        q = None
    hops = args.hops or (q.hops if q else 1)
    authorized = args.key_file is not None or args.authorized
    if authorized:
        if not isinstance(g, SealedGraph):
            raise ValueError("authorized queries need a sealed graph")
        ctx = authorized_retrieve(args.question, g, load_key(args.key_file), args.retriever,
                                  hops=hops, top_k=args.top_k)
    else:
        ctx = retrieve(args.question, g, args.retriever, hops=hops, top_k=args.top_k)
    answer = answer_from_context(q, ctx) if q else UNKNOWN
    payload = {
        "question": args.question,
        "authorized": authorized,
        "context": [list(t.as_tuple()) for t in ctx.triples],
        "answer": answer,
        "decryptions": ctx.decryptions,
    }
    _emit(args, payload, f"{serialize_context(ctx)}\n---\nanswer: {answer}")
    return 0


def cmd_evaluate(args) -> int:
    clean = _plain(args.clean)
    sealed = _read_any(args.sealed)
    if not isinstance(sealed, SealedGraph):
        raise ValueError("evaluation needs a sealed graph (flags required)")
    qs = load_questions(Path(args.questions).read_text())
    pipe = DefaultPipeline(args.retriever, args.top_k)
    result = eval_effectiveness(clean, sealed, qs, pipeline=pipe)
    payload = {"arr": result["arr"], "hs": result["hs"]}
    if args.key_file or args.authorized:
        key = load_key(args.key_file)
        fid = eval_fidelity(clean, sealed, key, qs, pipeline=pipe)
        payload.update(cdpa=fid["cdpa"], cira=fid["cira"])
        if args.latency:
            rep = measure_latency(clean, sealed, key, qs, args.retriever, args.repetitions, top_k=args.top_k)
            payload["latency"] = rep.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    text = "\n".join(
        f"{k:>8}: {v:.4f}" for k, v in sorted(payload.items()) if isinstance(v, float)
    )
    _emit(args, payload, text)
    return 0


def cmd_redteam(args) -> int:
    g = _read_any(args.graph)
    plain = g.graph if isinstance(g, SealedGraph) else g
    truth_triples = truth_nodes = None
    if args.truth:
        chosen = AdulterantSet.from_json(Path(args.truth).read_text())
        truth_triples = [t.triple_id for t in chosen.triples]
        truth_nodes = list(chosen.new_entities)
    model = load_model(args.model) if args.model else None
    hp = Hyperparams(epochs=args.epochs, seed=args.seed)
    attacks = ["kge_purge", "structural", "semantic", "hybrid"] if args.attack == "all" else [args.attack]
    reports = []
    for name in attacks:
        if name == "kge_purge":
            reports.append(kge_purge(plain, model, args.quantile, truth=truth_triples, hyperparams=hp)[1])
        elif name == "structural":
            reports.append(structural_detect(plain, truth=truth_nodes))
        elif name == "semantic":
            reports.append(semantic_detect(plain, model, truth=truth_triples, hyperparams=hp))
        else:
            reports.append(hybrid_detect(plain, model, truth=truth_triples, hyperparams=hp))
    docs = [r.to_dict() for r in reports]
    if args.out:
        Path(args.out).write_text(json.dumps(docs, sort_keys=True, indent=2) + "\n")

    def pct(v):
        return "   n/a" if v is None else f"{100 * v:5.1f}%"

    lines = [f"{'attack':<12} {'flagged':>8} {'RR':>7} {'detected':>9}"]
    for r in reports:
        lines.append(f"{r.attack:<12} {len(r.flagged_or_removed):>8} {pct(r.retain_rate):>7} {pct(r.detection_rate):>9}")
    _emit(args, {"reports": docs}, "\n".join(lines))
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.seed_given:
        cfg.seed = args.seed
    if args.threads_given:
        cfg.threads = args.threads
    result = run_pipeline(cfg)
    payload = {"out_dir": str(result.out_dir), "files": sorted(result.files), "warnings": result.warnings}
    if result.metrics:
        m = result.metrics
        payload["metrics"] = {"arr": m.arr, "hs": m.hs, "cdpa": m.cdpa, "cira": m.cira, "rr": m.rr}
    text = [f"artifacts in {result.out_dir}: {', '.join(sorted(result.files))}"]
    for k, v in payload.get("metrics", {}).items():
        if v is not None:
            text.append(f"{k:>6}: {v:.4f}")
    _emit(args, payload, "\n".join(text))
    return 0


# parser ---------------------------------------------------------------------------------


class _Track(argparse.Action):
    """Store a value and remember that it was given explicitly."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        setattr(namespace, f"{self.dest}_given", True)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, default=0, action=_Track, help="master random seed (default 0)")
    common.add_argument("--threads", type=int, default=1, action=_Track, help="maximum worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="kgaura", description="Protect a knowledge graph with adulterants and encrypted provenance flags.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn, seed_given=False, threads_given=False)
        return sp

    def key_args(sp):
        sp.add_argument("--key-file", help="64-hex-char owner key file (else $KG_AURA_KEY)")

    sp = add("ingest", cmd_ingest, "parse a TSV / N-Triples / property-json graph and write canonical TSV")
    sp.add_argument("--in", dest="input", help="input graph file")
    sp.add_argument("--format", choices=["tsv", "ntriples", "property-json"], help="override format detection")
    sp.add_argument("--synthetic", type=int, metavar="N", help="generate a synthetic graph with N triples instead")
    sp.add_argument("--entities", type=int, default=1500, help="entity count for --synthetic")
    sp.add_argument("--out", required=True)

    sp = add("keynodes", cmd_keynodes, "compute the key-node set (vertex cover)")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--method", choices=["auto", *METHODS], default="auto")
    sp.add_argument("--threshold", type=int, default=2000, help="max entity count for the exact solver")
    sp.add_argument("--time-budget", type=float, default=None, help="exact solver wall-clock limit (s)")
    sp.add_argument("--node-budget", type=int, default=500_000, help="exact solver search-node limit")

    sp = add("train-kge", cmd_train, "train the TransE link predictor")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--margin", type=float, default=1.0)
    sp.add_argument("--negatives", type=int, default=1)
    sp.add_argument("--batch-size", type=int, default=128)

    sp = add("generate", cmd_generate, "generate edge and node adulterant candidates")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--keys", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-per-slot", type=int, default=1)
    sp.add_argument("--provider", choices=["mock", "http"], default="mock")
    sp.add_argument("--provider-url", default="")

    sp = add("select", cmd_select, "pick the highest-SDS candidate per key node")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--keys", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--questions", help="question JSONL (default: one templated question per key node)")
    sp.add_argument("--questions-out", help="write the generated questions here")
    sp.add_argument("--hops", type=int, choices=[1, 2], default=1)
    sp.add_argument("--retriever", choices=RETRIEVERS, default="symbolic")
    sp.add_argument("--top-k", type=int, default=4)

    sp = add("inject", cmd_inject, "add the chosen adulterants to the graph (output keeps provenance)")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--adulterants", required=True)
    sp.add_argument("--out", required=True)

    sp = add("seal", cmd_seal, "attach encrypted provenance flags to every node and triple")
    sp.add_argument("--in", dest="input", required=True, help="adulterated graph from `inject`")
    sp.add_argument("--out", required=True)
    sp.add_argument("--property", default="remark", help="flag property name")
    sp.add_argument("--nonce-seed", type=int, default=None, help="derive nonces from the key for reproducible output")
    key_args(sp)

    sp = add("query", cmd_query, "answer one question, filtered when a key is given")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--question", required=True)
    sp.add_argument("--retriever", choices=RETRIEVERS, default="symbolic")
    sp.add_argument("--top-k", type=int, default=4)
    sp.add_argument("--hops", type=int, default=0, help="retrieval depth (default: question hop count)")
    sp.add_argument("--authorized", action="store_true", help="filter using $KG_AURA_KEY")
    key_args(sp)

    sp = add("evaluate", cmd_evaluate, "compute ARR/HS, and CDPA/CIRA when a key is given")
    sp.add_argument("--clean", required=True)
    sp.add_argument("--sealed", required=True)
    sp.add_argument("--questions", required=True)
    sp.add_argument("--out")
    sp.add_argument("--retriever", choices=RETRIEVERS, default="symbolic")
    sp.add_argument("--top-k", type=int, default=4)
    sp.add_argument("--authorized", action="store_true", help="use $KG_AURA_KEY for fidelity metrics")
    sp.add_argument("--latency", action="store_true", help="also measure filtering overhead")
    sp.add_argument("--repetitions", type=int, default=10)
    key_args(sp)

    sp = add("redteam", cmd_redteam, "run sanitization / detection attacks")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--attack", choices=["kge_purge", "structural", "semantic", "hybrid", "all"], default="all")
    sp.add_argument("--model", help="attacker model (default: train one on the graph)")
    sp.add_argument("--epochs", type=int, default=100, help="epochs when training the attacker model")
    sp.add_argument("--quantile", type=float, default=0.2)
    sp.add_argument("--truth", help="adulterants.json, used only to score the attacks")
    sp.add_argument("--out")

    sp = add("pipeline", cmd_pipeline, "run every stage from a JSON or TOML config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", help="override the config's out_dir")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"kgaura: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"kgaura {args.command}: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:  # AuthenticationError and friends
        print(f"kgaura {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
