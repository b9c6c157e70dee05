"""Encrypted per-element provenance flags and the key-holder's hierarchical filter.

Every node and triple gets an AES-256-GCM ciphertext of a single byte
(0 original, 1 adulterant), bound to the element's id as associated data.
Ciphertexts are base64 of nonce(12) | ciphertext(1) | tag(16), so both flag
values produce strings of identical length.
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import hashlib
import hmac
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .graph import ADULTERANT, ORIGINAL, KnowledgeGraph, Triple, _expand, parse_property_json, serialize
from .retrieve import DenseIndex, RetrievalContext, retrieve

__all__ = [
    "AuthenticationError",
    "FlagFormatError",
    "KEY_ENV",
    "OwnerKey",
    "SealError",
    "SealedGraph",
    "authorized_retrieve",
    "clean_view",
    "decrypt_all",
    "decrypt_flag",
    "encrypt_flag",
    "filter_context",
    "load_key",
    "node_aad",
    "seal",
    "triple_aad",
]

KEY_ENV = "KG_AURA_KEY"
FORMAT_TAG = "sealed-graph/1"
NONCE_LEN = 12
CIPHERTEXT_LEN = NONCE_LEN + 1 + 16


class AuthenticationError(Exception):
    """Wrong key or tampered ciphertext."""


class FlagFormatError(ValueError):
    """Ciphertext is not well-formed base64 of the expected length."""


class SealError(ValueError):
    pass


@dataclass(frozen=True)
class OwnerKey:
    key: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.key, bytes) or len(self.key) != 32:
            raise SealError(f"owner key must be exactly 32 bytes, got {len(self.key)}")

    @property
    def key_id(self) -> str:
        return hashlib.sha256(self.key).hexdigest()[:8]

    @classmethod
    def generate(cls) -> "OwnerKey":
        return cls(os.urandom(32))

    @classmethod
    def from_hex(cls, text: str) -> "OwnerKey":
        text = text.strip()
        if len(text) != 64:
            raise SealError(f"hex key must be 64 characters, got {len(text)}")
        try:
            return cls(bytes.fromhex(text))
        except ValueError:
            raise SealError("hex key contains non-hex characters") from None

    def hex(self) -> str:
        return self.key.hex()

    def _aead(self) -> AESGCM:
        aead = self.__dict__.get("_aead_cache")
        if aead is None:
            aead = AESGCM(self.key)
            object.__setattr__(self, "_aead_cache", aead)
        return aead


def load_key(key_file: str | Path | None = None, env: str = KEY_ENV) -> OwnerKey:
    """Read a hex key from ``key_file``, falling back to the environment variable."""
    if key_file is not None:
        return OwnerKey.from_hex(Path(key_file).read_text())
    value = os.environ.get(env)
    if not value:
        raise SealError(f"no key file given and ${env} is not set")
    return OwnerKey.from_hex(value)


def node_aad(entity: str) -> bytes:
    return b"node\x1f" + entity.encode("utf-8")


def triple_aad(triple: Triple) -> bytes:
    return b"edge\x1f" + triple.triple_id.encode("ascii")


def encrypt_flag(flag: int, key: OwnerKey, aad: bytes = b"", nonce: bytes | None = None) -> str:
    if flag not in (0, 1):
        raise SealError(f"flag must be 0 or 1, got {flag!r}")
    nonce = os.urandom(NONCE_LEN) if nonce is None else nonce
    if len(nonce) != NONCE_LEN:
        raise SealError("nonce must be 12 bytes")
    body = key._aead().encrypt(nonce, bytes([flag]), aad)
    return base64.b64encode(nonce + body).decode("ascii")


def _flag_value(ciphertext: str, key: OwnerKey, aad: bytes) -> int:
    try:
        enc = ciphertext.encode("ascii")
        raw = binascii.a2b_base64(enc)
    except (binascii.Error, ValueError, AttributeError, UnicodeEncodeError):
        raise FlagFormatError("flag is not valid base64") from None
    if len(raw) != CIPHERTEXT_LEN:
        raise FlagFormatError(f"flag must decode to {CIPHERTEXT_LEN} bytes, got {len(raw)}")
    # a2b_base64 skips stray characters; only the canonical encoding is accepted
    if binascii.b2a_base64(raw, newline=False) != enc:
        raise FlagFormatError("flag is not canonical base64")
    try:
        plain = key._aead().decrypt(raw[:NONCE_LEN], raw[NONCE_LEN:], aad)
    except InvalidTag:
        raise AuthenticationError("flag failed authentication (wrong key or tampered data)") from None
    if plain not in (b"\x00", b"\x01"):
        raise AuthenticationError("authenticated flag has an invalid value")
    return plain[0]


def decrypt_flag(ciphertext: str, key: OwnerKey, aad: bytes = b"") -> str:
    """Return ``"original"`` or ``"adulterant"``; raises on any authentication failure."""
    return ADULTERANT if _flag_value(ciphertext, key, aad) else ORIGINAL


@dataclass
class SealedGraph:
    graph: KnowledgeGraph
    node_flags: dict[str, str]
    triple_flags: dict[str, str]  # keyed by triple id
    property_name: str = "remark"
    key_id: str = ""

    def node_flag(self, entity: str) -> str:
        return self.node_flags[entity]

    def triple_flag(self, triple: Triple) -> str:
        return self.triple_flags[triple.triple_id]

    def to_bytes(self) -> bytes:
        name = self.property_name
        return serialize(
            self.graph,
            "property-json",
            node_properties={e: {name: f} for e, f in self.node_flags.items()},
            triple_properties={tid: {name: f} for tid, f in self.triple_flags.items()},
            header={"format": FORMAT_TAG, "flag_property": name, "key_id": self.key_id},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes | str) -> "SealedGraph":
        graph, node_props, triple_props, header = parse_property_json(data)
        name = header.get("flag_property", "remark")
        node_flags, triple_flags = {}, {}
        for e in graph.entities:
            try:
                node_flags[e] = node_props[e][name]
            except KeyError:
                raise SealError(f"entity {e!r} carries no {name!r} property") from None
        for t in graph.triples:
            try:
                triple_flags[t.triple_id] = triple_props[t.triple_id][name]
            except KeyError:
                raise SealError(f"triple {t.as_tuple()} carries no {name!r} property") from None
        return cls(graph, node_flags, triple_flags, name, header.get("key_id", ""))

    @classmethod
    def load(cls, path: str | Path) -> "SealedGraph":
        return cls.from_bytes(Path(path).read_bytes())


def _nonce(key: OwnerKey, nonce_seed: int, aad: bytes, flag: int) -> bytes:
    # synthetic nonce: equal nonces imply equal (element, flag), so no reuse across plaintexts
    msg = b"nonce\x1f%d\x1f" % nonce_seed + aad + bytes([flag])
    return hmac.new(key.key, msg, hashlib.sha256).digest()[:NONCE_LEN]


def seal(
    graph: KnowledgeGraph,
    adulterants: Any = None,
    key: OwnerKey | None = None,
    property_name: str = "remark",
    *,
    nonce_seed: int | None = None,
) -> SealedGraph:
    """Attach an encrypted provenance flag to every node and triple.

    ``adulterants`` (if given) must already be injected into ``graph``; it is
    checked against the graph's provenance. With ``nonce_seed`` set, nonces
    are derived from the key, seed, element and flag, which makes the output
    reproducible; otherwise every nonce is fresh randomness.
    """
    if key is None:
        raise SealError("an owner key is required")
    if not isinstance(key, OwnerKey):
        key = OwnerKey(key)
    if adulterants is not None:
        trips = getattr(adulterants, "triples", adulterants)
        for t in trips:
            if t not in graph.triples or graph.provenance(t) != ADULTERANT:
                raise SealError(f"adulterant {t.as_tuple()} is not injected (missing provenance)")
        for e in getattr(adulterants, "new_entities", ()):
            if e not in graph.entities or graph.provenance(e) != ADULTERANT:
                raise SealError(f"fake entity {e!r} is not injected (missing provenance)")

    def enc(flag: int, aad: bytes) -> str:
        nonce = None if nonce_seed is None else _nonce(key, nonce_seed, aad, flag)
        return encrypt_flag(flag, key, aad, nonce)

    node_flags = {
        e: enc(int(e in graph.adulterant_entities), node_aad(e)) for e in graph.sorted_entities
    }
    triple_flags = {
        t.triple_id: enc(int(t in graph.adulterant_triples), triple_aad(t)) for t in graph.sorted_triples
    }
    # drop provenance so the sealed value cannot leak it in-process either
    stripped = KnowledgeGraph._from_parts(
        graph.triples, graph.entities, graph._adj, frozenset(), frozenset(), graph.relations
    )
    return SealedGraph(stripped, node_flags, triple_flags, property_name, key.key_id)


def filter_context(context: RetrievalContext, key: OwnerKey) -> RetrievalContext:
    """Hierarchical purification of a retrieved context.

    Stage 1 decrypts node flags and drops fake nodes together with every
    triple touching them, without decrypting those triples. Stage 2 decrypts
    the remaining triple flags and drops fake triples. Finally the survivors
    are re-expanded from the surviving seeds, so facts that were only within
    reach through an adulterant shortcut are discarded as well.
    """
    decryptions = context.decryptions
    dropped: set[str] = set()
    for node, ct in context.nodes.items():
        if ct is None:
            raise SealError(f"context node {node!r} carries no flag")
        decryptions += 1
        if _flag_value(ct, key, node_aad(node)):
            dropped.add(node)

    kept: list[Triple] = []
    for t, ct in context.triples.items():
        if t.head in dropped or t.tail in dropped:
            continue
        if ct is None:
            raise SealError(f"context triple {t.as_tuple()} carries no flag")
        decryptions += 1
        if not _flag_value(ct, key, triple_aad(t)):
            kept.append(t)

    if not dropped and len(kept) == len(context.triples):
        return dataclasses.replace(context, decryptions=decryptions)

    seeds = [s for s in context.seeds if s not in dropped]
    if context.hops == 1:
        # every kept triple still touches a surviving seed, so re-expansion is the identity
        reachable = set(kept)
    else:
        adj: dict[str, list[Triple]] = {}
        for t in kept:
            adj.setdefault(t.head, []).append(t)
            if t.tail != t.head:
                adj.setdefault(t.tail, []).append(t)
        reachable = _expand(adj, seeds, context.hops) if seeds else set()
    nodes = set(seeds)
    for t in reachable:
        nodes.add(t.head)
        nodes.add(t.tail)
    # iterate the (already ordered) input maps so no re-sorting is needed
    return RetrievalContext(
        context.query,
        {n: ct for n, ct in context.nodes.items() if n in nodes},
        {t: ct for t, ct in context.triples.items() if t in reachable},
        context.retriever,
        tuple(seeds),
        context.hops,
        decryptions,
    )


def authorized_retrieve(
    query: str,
    sealed: SealedGraph,
    key: OwnerKey,
    retriever: str = "symbolic",
    *,
    hops: int = 1,
    index: DenseIndex | None = None,
    top_k: int = 4,
) -> RetrievalContext:
    """Retrieve on the sealed graph and purify the context with the owner key.

    Dense seeds are checked against their node flag as they are ranked, so a
    fake entity never takes one of the ``top_k`` seed slots.
    """
    checks = 0

    def seed_ok(entity: str) -> bool:
        nonlocal checks
        checks += 1
        return not _flag_value(sealed.node_flag(entity), key, node_aad(entity))

    ctx = retrieve(
        query,
        sealed,
        retriever,
        hops=hops,
        index=index,
        top_k=top_k,
        seed_ok=None if retriever == "symbolic" else seed_ok,
    )
    ctx.decryptions = checks
    return filter_context(ctx, key)


def decrypt_all(sealed: SealedGraph, key: OwnerKey) -> tuple[set[str], set[Triple]]:
    """Owner-side recovery of the adulterant node and triple sets."""
    nodes = {e for e in sealed.graph.entities if _flag_value(sealed.node_flags[e], key, node_aad(e))}
    trips = {
        t for t in sealed.graph.triples if _flag_value(sealed.triple_flags[t.triple_id], key, triple_aad(t))
    }
    return nodes, trips


def clean_view(sealed: SealedGraph, key: OwnerKey) -> KnowledgeGraph:
    nodes, trips = decrypt_all(sealed, key)
    keep = [t for t in sealed.graph.triples if t not in trips and t.head not in nodes and t.tail not in nodes]
    return KnowledgeGraph(keep, (e for e in sealed.graph.entities if e not in nodes))


def _iter_flags(sealed: SealedGraph) -> Iterable[str]:
    yield from sealed.node_flags.values()
    yield from sealed.triple_flags.values()
