"""Protect a toy movie graph end to end and compare unauthorized and authorized answers.

    python3 demos/walkthrough.py
"""

from kgaura.genpool import MockNameProvider, gen_edge_candidates, gen_node_candidates, pool
from kgaura.graph import KnowledgeGraph, Triple, inject
from kgaura.keynode import select_key_nodes
from kgaura.kge import Hyperparams, train
from kgaura.retrieve import retrieve_symbolic
from kgaura.sds import DefaultPipeline, anchored_questions, answer_from_context, select_adulterants
from kgaura.seal import OwnerKey, authorized_retrieve, seal

FACTS = [
    ("Inception", "directed_by", "Christopher Nolan"),
    ("Interstellar", "directed_by", "Christopher Nolan"),
    ("Dunkirk", "directed_by", "Christopher Nolan"),
    ("Heat", "directed_by", "Michael Mann"),
    ("Collateral", "directed_by", "Michael Mann"),
    ("Christopher Nolan", "born_in", "London"),
    ("Michael Mann", "born_in", "Chicago"),
    ("Inception", "has_genre", "Science Fiction"),
    ("Interstellar", "has_genre", "Science Fiction"),
    ("Dunkirk", "has_genre", "War"),
    ("Heat", "has_genre", "Crime"),
    ("Collateral", "has_genre", "Crime"),
]


def main() -> None:
    graph = KnowledgeGraph(Triple(*f) for f in FACTS)
    print(graph)

    keys = select_key_nodes(graph)
    print(f"\nkey nodes ({keys.method}): {', '.join(keys.members)}")

    model = train(graph, Hyperparams(dim=16, epochs=200, seed=0))
    edges = gen_edge_candidates(model, graph, keys.members)
    nodes = gen_node_candidates(MockNameProvider(0), graph, keys.members)
    candidates = pool(edges, nodes)
    print(f"{len(edges)} false-edge and {len(nodes)} fake-node candidates")

    questions = anchored_questions(graph, keys.members)
    chosen = select_adulterants(candidates, questions, graph, DefaultPipeline())
    for k, c in chosen.chosen.items():
        what = c.fake_entity if c.kind == "node" else " ".join(c.triples[0].as_tuple())
        print(f"  {k:<18} -> {c.kind}: {what}  (SDS {chosen.scores[c.candidate_id]:.3f})")

    key = OwnerKey.generate()
    sealed = seal(inject(graph, chosen), chosen, key)
    print(f"\nsealed graph: {len(sealed.graph)} triples, every element carries an encrypted flag")

    print(f"\n{'question':<42} {'clean':<12} {'stolen copy':<28} owner")
    for q in questions:
        clean = answer_from_context(q, retrieve_symbolic(q.text, graph))
        stolen = answer_from_context(q, retrieve_symbolic(q.text, sealed))
        owner = answer_from_context(q, authorized_retrieve(q.text, sealed, key))
        print(f"{q.text:<42} {clean:<12} {stolen:<28} {owner}")


if __name__ == "__main__":
    main()
