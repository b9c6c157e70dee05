"""Run the four sanitization attacks against a protected synthetic graph.

    KG_AURA_KEY=$(python3 -c "print('ab' * 32)") python3 demos/sanitization.py
"""

import tempfile

from kgaura.bench import PipelineConfig, run_pipeline
from kgaura.graph import inject, parse_triples
from kgaura.kge import load_model
from kgaura.redteam import hybrid_detect, kge_purge, semantic_detect, structural_detect
from kgaura.sds import AdulterantSet


def main() -> None:
    with tempfile.TemporaryDirectory() as out:
        cfg = PipelineConfig(out_dir=out, seed=1, synthetic_entities=600, synthetic_triples=2000)
        res = run_pipeline(cfg)
        m = res.metrics
        print(f"ARR {m.arr:.2f}  HS {m.hs:.2f}  CDPA {m.cdpa:.2f}  CIRA {m.cira:.2f}")

        graph = parse_triples((res.out_dir / "graph.tsv").read_bytes())
        chosen = AdulterantSet.from_json((res.out_dir / "adulterants.json").read_text())
        model = load_model(res.out_dir / "model.kge")
        stolen = inject(graph, chosen)
        fake_triples = [t.triple_id for t in chosen.triples]

        print("\nembedding purge, model trained on the original graph")
        for q in (0.1, 0.2, 0.4, 0.6):
            rep = kge_purge(stolen, model, q, truth=fake_triples)[1]
            print(f"  drop lowest {q:.0%}: {rep.retain_rate:.1%} of adulterant triples survive")

        for rep in (
            structural_detect(stolen, truth=chosen.new_entities),
            semantic_detect(stolen, model, truth=fake_triples),
            hybrid_detect(stolen, model, truth=fake_triples),
        ):
            print(f"{rep.attack:<10} flagged {len(rep.flagged_or_removed):>4}, detected {rep.detection_rate:.1%}")


if __name__ == "__main__":
    main()
