"""Seeded synthetic knowledge graphs with learnable translational structure.

Every entity has a type and a cluster. Each relation links one source type
to one target type and preserves the cluster, so h + r ~ t is exactly
representable by a translational model and held-out links are predictable.
"""

from __future__ import annotations

import numpy as np

from .graph import KnowledgeGraph, Triple

__all__ = ["ADJECTIVES", "NOUNS", "RELATIONS", "entity_labels", "synthetic_kg"]

ADJECTIVES = (
    "Crimson", "Azure", "Golden", "Silver", "Northern", "Southern", "Eastern", "Western",
    "Silent", "Hidden", "Ancient", "Modern", "Little", "Great", "Upper", "Lower",
)
NOUNS = (
    "Harbor", "River", "Valley", "Tower", "Garden", "Bridge", "Forest", "Castle",
    "Meadow", "Lantern", "Orchard", "Summit", "Archive", "Market", "Chapel", "Quarry",
)
RELATIONS = (
    "located_in", "part_of", "directed_by", "written_by", "member_of", "produced_by",
    "influenced_by", "has_genre", "founded_by", "adjacent_to", "released_in", "owned_by",
)


def entity_labels(n: int) -> list[str]:
    out = []
    for i in range(n):
        adj = ADJECTIVES[i % len(ADJECTIVES)]
        noun = NOUNS[(i // len(ADJECTIVES)) % len(NOUNS)]
        out.append(f"{adj} {noun} {i}")
    return out


def synthetic_kg(
    n_entities: int = 600,
    n_triples: int = 2000,
    n_relations: int = 8,
    n_clusters: int = 10,
    n_types: int = 4,
    seed: int = 0,
) -> KnowledgeGraph:
    if n_relations > len(RELATIONS) or n_relations > n_types * (n_types - 1):
        raise ValueError("too many relations for the available names or type pairs")
    rng = np.random.default_rng(seed)
    labels = entity_labels(n_entities)
    etype = rng.integers(0, n_types, n_entities)
    cluster = rng.integers(0, n_clusters, n_entities)
    pairs = [(a, b) for a in range(n_types) for b in range(n_types) if a != b]
    chosen = rng.permutation(len(pairs))[:n_relations]
    signature = [pairs[i] for i in chosen]
    members = {
        (a, k): np.flatnonzero((etype == a) & (cluster == k))
        for a in range(n_types)
        for k in range(n_clusters)
    }
    relations = RELATIONS[:n_relations]

    triples: set[Triple] = set()
    attempts = 0
    while len(triples) < n_triples and attempts < 50 * n_triples:
        attempts += 1
        r = int(rng.integers(n_relations))
        src, dst = signature[r]
        heads = np.flatnonzero(etype == src)
        if len(heads) == 0:
            continue
        h = int(rng.choice(heads))
        pool = members[(dst, int(cluster[h]))]
        if len(pool) == 0:
            continue
        t = int(rng.choice(pool))
        triples.add(Triple(labels[h], relations[r], labels[t]))
    return KnowledgeGraph(triples)
