"""Knowledge-graph protection by plausible adulterants and encrypted provenance flags."""

from .graph import ADULTERANT, ORIGINAL, KnowledgeGraph, Triple, inject, neighborhood, parse_triples, serialize
from .keynode import NodeSet, exact_mvc, malatya_mvc, select_key_nodes
from .kge import EmbeddingModel, Hyperparams, train
from .retrieve import RetrievalContext, retrieve
from .sds import AdulterantSet, Question, select_adulterants
from .seal import OwnerKey, SealedGraph, filter_context, seal

__version__ = "0.1.0"

__all__ = [
    "ADULTERANT",
    "AdulterantSet",
    "EmbeddingModel",
    "Hyperparams",
    "KnowledgeGraph",
    "NodeSet",
    "ORIGINAL",
    "OwnerKey",
    "Question",
    "RetrievalContext",
    "SealedGraph",
    "Triple",
    "exact_mvc",
    "filter_context",
    "inject",
    "malatya_mvc",
    "neighborhood",
    "parse_triples",
    "retrieve",
    "seal",
    "select_adulterants",
    "select_key_nodes",
    "serialize",
    "train",
]
