"""Synthetic invoice-QA corpus with per-provider structure and attack splits.

The corpus mimics a federation of invoice providers: each provider has a
set of generic key/value facts (name, email, tax id) that repeat across
all of its documents, a unique visual signature standing in for logo and
layout, and per-document facts (date, amount). Documents carry a token
stream (an OCR analog) containing every field value plus distractor
tokens. Questions ask for a key's value; answers come from a closed
vocabulary so a small softmax model can be trained on them.

Splits: providers are divided into an *in* set (used for training) and an
*out* set (never trained on). Training documents of in-providers are
partitioned into disjoint client shards. Attack evaluation data holds out
documents of in-providers (red_in) and documents of out-providers
(red_out), plus a small mixed blue-test holdout for utility evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeds import rng_for

ExamplePair = tuple["Document", "QAExample"]

# Fixed question templates; one is picked per QA pair.
QUESTION_TEMPLATES = (
    "what is the {key} for this document?",
    "can you provide the {key}?",
    "please state the {key} of this invoice.",
)

UNKNOWN_ANSWER = "unknown"
_WORD_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


class CorpusError(ValueError):
    """Invalid corpus configuration or split request."""


@dataclass(frozen=True)
class CorpusConfig:
    n_providers: int
    docs_per_provider: tuple[int, int]
    n_clients: int
    generic_keys: tuple[str, ...] = ("name", "email", "tax_id")
    document_keys: tuple[str, ...] = ("invoice_date", "amount")
    answer_vocab_size: int = 512
    distractor_vocab_size: int = 256
    distractors_per_doc: int = 20
    visual_dim: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.n_providers < 2 * self.n_clients:
            raise CorpusError(
                f"need n_providers >= 2*n_clients, got {self.n_providers} < "
                f"{2 * self.n_clients}"
            )
        lo, hi = self.docs_per_provider
        if not (1 <= lo <= hi):
            raise CorpusError(f"bad docs_per_provider range ({lo}, {hi})")
        if not self.generic_keys or not self.document_keys:
            raise CorpusError("keys schema must name generic and document keys")
        if self.answer_vocab_size < 2:
            raise CorpusError("answer vocabulary needs at least 2 entries")
        if self.distractors_per_doc < 0 or self.distractor_vocab_size < 1:
            raise CorpusError("bad distractor settings")
        if self.visual_dim < 1:
            raise CorpusError("visual_dim must be >= 1")

    @property
    def keys(self) -> tuple[str, ...]:
        return self.generic_keys + self.document_keys


@dataclass(frozen=True)
class Provider:
    provider_id: int
    generic_values: dict[str, str]
    visual_signature: np.ndarray


@dataclass(frozen=True)
class Document:
    doc_id: int
    provider_id: int
    fields: dict[str, str]
    token_stream: tuple[str, ...]
    visual_signature: np.ndarray


@dataclass(frozen=True)
class QAExample:
    doc_id: int
    key_name: str
    question_template_id: int
    answer: str

    @property
    def question(self) -> str:
        return QUESTION_TEMPLATES[self.question_template_id].format(key=self.key_name)


@dataclass(frozen=True)
class Vocab:
    """Closed vocabularies backing the corpus and the model's tables."""

    answers: tuple[str, ...]      # index 0 is the reserved "unknown" entry
    distractors: tuple[str, ...]
    keys: tuple[str, ...]         # index 0 is the reserved empty-question slot

    def __post_init__(self):
        object.__setattr__(self, "_answer_index", {a: i for i, a in enumerate(self.answers)})
        tokens = ("<oov>",) + self.answers + self.distractors
        object.__setattr__(self, "_token_index", {t: i for i, t in enumerate(tokens)})
        object.__setattr__(self, "_key_index", {k: i for i, k in enumerate(self.keys)})

    @property
    def n_tokens(self) -> int:
        return 1 + len(self.answers) + len(self.distractors)

    @property
    def n_answers(self) -> int:
        return len(self.answers)

    @property
    def n_keys(self) -> int:
        return len(self.keys)

    def token_id(self, token: str) -> int:
        return self._token_index.get(token, 0)

    def key_id(self, key_name: str) -> int:
        # Empty / unknown question maps to the reserved slot 0.
        return self._key_index.get(key_name, 0)

    def answer_id(self, answer: str) -> int | None:
        return self._answer_index.get(answer)


@dataclass
class Corpus:
    config: CorpusConfig
    providers: list[Provider]
    documents: list[Document]
    examples: list[QAExample]
    vocab: Vocab

    def __post_init__(self):
        self._docs_by_id = {d.doc_id: d for d in self.documents}
        self._docs_by_provider: dict[int, list[Document]] = {}
        for d in self.documents:
            self._docs_by_provider.setdefault(d.provider_id, []).append(d)
        self._examples_by_doc: dict[int, list[QAExample]] = {}
        for qa in self.examples:
            self._examples_by_doc.setdefault(qa.doc_id, []).append(qa)

    def document(self, doc_id: int) -> Document:
        return self._docs_by_id[doc_id]

    def documents_of(self, provider_id: int) -> list[Document]:
        return list(self._docs_by_provider[provider_id])

    def examples_of_doc(self, doc_id: int) -> list[QAExample]:
        return list(self._examples_by_doc.get(doc_id, []))

    def pairs_for_docs(self, docs: Iterable[Document]) -> list[ExamplePair]:
        return [(d, qa) for d in docs for qa in self.examples_of_doc(d.doc_id)]


@dataclass(frozen=True)
class ProviderRecords:
    """One provider's share of an evaluation split."""

    provider: Provider
    documents: tuple[Document, ...]
    examples: tuple[ExamplePair, ...]


@dataclass(frozen=True)
class RedSplit:
    in_provider_ids: frozenset[int]
    out_provider_ids: frozenset[int]
    red_in: tuple[ProviderRecords, ...]
    red_out: tuple[ProviderRecords, ...]
    blue_test: tuple[ExamplePair, ...]
    skipped: tuple[int, ...]  # single-document in-providers that stay train-only

    @property
    def held_out_doc_ids(self) -> frozenset[int]:
        ids = {d.doc_id for rec in self.red_in for d in rec.documents}
        ids.update(d.doc_id for d, _ in self.blue_test)
        return frozenset(ids)

    def red_in_pairs(self) -> list[ExamplePair]:
        return [p for rec in self.red_in for p in rec.examples]

    def red_out_pairs(self) -> list[ExamplePair]:
        return [p for rec in self.red_out for p in rec.examples]


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    provider_ids: tuple[int, ...]
    examples_by_provider: dict[int, tuple[ExamplePair, ...]]

    @property
    def examples(self) -> list[ExamplePair]:
        out: list[ExamplePair] = []
        for pid in self.provider_ids:
            out.extend(self.examples_by_provider[pid])
        return out

    @property
    def n_documents(self) -> int:
        return len({d.doc_id for pairs in self.examples_by_provider.values() for d, _ in pairs})

    def examples_for(self, provider_id: int) -> list[ExamplePair]:
        return list(self.examples_by_provider[provider_id])


def _make_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    """Draw ``count`` distinct pseudo-words not already in ``taken``."""
    words: list[str] = []
    while len(words) < count:
        length = int(rng.integers(4, 10))
        chars = rng.integers(0, len(_WORD_CHARS), size=length)
        w = "".join(_WORD_CHARS[c] for c in chars)
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def generate_corpus(config: CorpusConfig) -> Corpus:
    """Build the full synthetic corpus deterministically from the config seed."""
    config.validate()
    rng = rng_for(config.seed, "corpus")

    taken: set[str] = {UNKNOWN_ANSWER}
    answers = (UNKNOWN_ANSWER,) + tuple(
        _make_words(rng, config.answer_vocab_size - 1, taken)
    )
    distractors = tuple(_make_words(rng, config.distractor_vocab_size, taken))
    vocab = Vocab(answers=answers, distractors=distractors,
                  keys=("<none>",) + config.keys)

    # Gold answers never use the reserved index 0.
    def draw_answer() -> str:
        return answers[int(rng.integers(1, len(answers)))]

    providers: list[Provider] = []
    documents: list[Document] = []
    examples: list[QAExample] = []
    doc_id = 0
    lo, hi = config.docs_per_provider
    for pid in range(config.n_providers):
        generic = {k: draw_answer() for k in config.generic_keys}
        visual = rng.normal(0.0, 1.0, size=config.visual_dim)
        providers.append(Provider(pid, generic, visual))
        n_docs = int(rng.integers(lo, hi + 1))
        for _ in range(n_docs):
            fields = dict(generic)
            for k in config.document_keys:
                fields[k] = draw_answer()
            stream = list(fields.values())
            for idx in rng.integers(0, len(distractors), size=config.distractors_per_doc):
                stream.append(distractors[int(idx)])
            order = rng.permutation(len(stream))
            token_stream = tuple(stream[i] for i in order)
            doc = Document(doc_id, pid, fields, token_stream, visual)
            documents.append(doc)
            for k in config.keys:
                examples.append(QAExample(doc_id, k, int(rng.integers(0, 3)), fields[k]))
            doc_id += 1

    return Corpus(config, providers, documents, examples, vocab)


def split_red(corpus: Corpus, frac_in: float = 0.5) -> RedSplit:
    """Partition providers into in/out sets and hold out attack documents.

    For every in-provider with at least two documents, half of them
    (rounded down, at least one kept for training) become red_in; one more
    becomes blue-test when enough remain. Out-providers contribute red_out
    and blue-test documents and never appear in training. Single-document
    in-providers cannot give up a document and are recorded in ``skipped``.
    """
    if not (0.0 < frac_in < 1.0):
        raise CorpusError(f"frac_in must be in (0, 1), got {frac_in}")
    rng = rng_for(corpus.config.seed, "redsplit")
    order = rng.permutation(len(corpus.providers))
    n_in = int(round(frac_in * len(corpus.providers)))
    if n_in == 0 or n_in == len(corpus.providers):
        raise CorpusError("frac_in leaves one side of the provider split empty")
    in_ids = sorted(int(order[i]) for i in range(n_in))
    out_ids = sorted(int(order[i]) for i in range(n_in, len(corpus.providers)))

    providers_by_id = {p.provider_id: p for p in corpus.providers}
    red_in: list[ProviderRecords] = []
    red_out: list[ProviderRecords] = []
    blue_test: list[ExamplePair] = []
    skipped: list[int] = []

    def records(pid: int, docs: Sequence[Document]) -> ProviderRecords:
        pairs = tuple(corpus.pairs_for_docs(docs))
        return ProviderRecords(providers_by_id[pid], tuple(docs), pairs)

    for pid in in_ids:
        docs = corpus.documents_of(pid)
        if len(docs) < 2:
            skipped.append(pid)
            continue
        perm = rng.permutation(len(docs))
        n_red = len(docs) // 2
        red_docs = [docs[i] for i in perm[:n_red]]
        rest = [docs[i] for i in perm[n_red:]]
        if len(rest) >= 2:
            blue_test.extend(corpus.pairs_for_docs(rest[:1]))
        red_in.append(records(pid, red_docs))

    for pid in out_ids:
        docs = corpus.documents_of(pid)
        perm = rng.permutation(len(docs))
        n_red = max(1, len(docs) // 2)
        red_docs = [docs[i] for i in perm[:n_red]]
        rest = [docs[i] for i in perm[n_red:]]
        if rest:
            blue_test.extend(corpus.pairs_for_docs(rest[:1]))
        red_out.append(records(pid, red_docs))

    return RedSplit(
        in_provider_ids=frozenset(in_ids),
        out_provider_ids=frozenset(out_ids),
        red_in=tuple(red_in),
        red_out=tuple(red_out),
        blue_test=tuple(blue_test),
        skipped=tuple(skipped),
    )


def partition_blue(corpus: Corpus, n_clients: int,
                   red: RedSplit | None = None) -> list[ClientShard]:
    """Split training providers into disjoint, roughly equal client shards.

    With a red split given, only in-providers are partitioned and their
    held-out documents are excluded from the shards; without one, every
    provider and document is training data.
    """
    if red is not None:
        provider_ids = sorted(red.in_provider_ids)
        held_out = red.held_out_doc_ids
    else:
        provider_ids = [p.provider_id for p in corpus.providers]
        held_out = frozenset()
    if n_clients < 1 or n_clients > len(provider_ids) // 2:
        raise CorpusError(
            f"cannot split {len(provider_ids)} providers into {n_clients} clients"
        )

    rng = rng_for(corpus.config.seed, "partition")
    order = rng.permutation(len(provider_ids))
    assignment: list[list[int]] = [[] for _ in range(n_clients)]
    for slot, idx in enumerate(order):
        assignment[slot % n_clients].append(provider_ids[int(idx)])

    shards = []
    for cid, pids in enumerate(assignment):
        pids = tuple(sorted(pids))
        by_provider = {}
        for pid in pids:
            docs = [d for d in corpus.documents_of(pid) if d.doc_id not in held_out]
            by_provider[pid] = tuple(corpus.pairs_for_docs(docs))
        shards.append(ClientShard(cid, pids, by_provider))
    return shards


def merge_shards(shards: Sequence[ClientShard]) -> ClientShard:
    """Fuse shards into the single-client (centralized) view."""
    by_provider = {}
    for shard in shards:
        by_provider.update(shard.examples_by_provider)
    return ClientShard(0, tuple(sorted(by_provider)), by_provider)


# ---------------------------------------------------------------------------
# Serialization: one JSON object per document, plus a metadata sidecar and
# plain-text provider-id manifests.

def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = corpus.config
    meta = {
        "schema_version": 1,
        "config": {
            "n_providers": cfg.n_providers,
            "docs_per_provider": list(cfg.docs_per_provider),
            "n_clients": cfg.n_clients,
            "generic_keys": list(cfg.generic_keys),
            "document_keys": list(cfg.document_keys),
            "answer_vocab_size": cfg.answer_vocab_size,
            "distractor_vocab_size": cfg.distractor_vocab_size,
            "distractors_per_doc": cfg.distractors_per_doc,
            "visual_dim": cfg.visual_dim,
            "seed": cfg.seed,
        },
        "answers": list(corpus.vocab.answers),
        "distractors": list(corpus.vocab.distractors),
    }
    (out / "corpus_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    with (out / "documents.jsonl").open("w") as fh:
        for doc in corpus.documents:
            rec = {
                "doc_id": doc.doc_id,
                "provider_id": doc.provider_id,
                "fields": doc.fields,
                "token_stream": list(doc.token_stream),
                "visual_signature": [float(x) for x in doc.visual_signature],
                "qa": [
                    {
                        "key": qa.key_name,
                        "template_id": qa.question_template_id,
                        "question": qa.question,
                        "answer": qa.answer,
                    }
                    for qa in corpus.examples_of_doc(doc.doc_id)
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_corpus(in_dir: str | Path) -> Corpus:
    src = Path(in_dir)
    meta = json.loads((src / "corpus_meta.json").read_text())
    raw = meta["config"]
    config = CorpusConfig(
        n_providers=raw["n_providers"],
        docs_per_provider=tuple(raw["docs_per_provider"]),
        n_clients=raw["n_clients"],
        generic_keys=tuple(raw["generic_keys"]),
        document_keys=tuple(raw["document_keys"]),
        answer_vocab_size=raw["answer_vocab_size"],
        distractor_vocab_size=raw["distractor_vocab_size"],
        distractors_per_doc=raw["distractors_per_doc"],
        visual_dim=raw["visual_dim"],
        seed=raw["seed"],
    )
    vocab = Vocab(
        answers=tuple(meta["answers"]),
        distractors=tuple(meta["distractors"]),
        keys=("<none>",) + config.keys,
    )
    providers: dict[int, Provider] = {}
    documents: list[Document] = []
    examples: list[QAExample] = []
    with (src / "documents.jsonl").open() as fh:
        for line in fh:
            rec = json.loads(line)
            pid = rec["provider_id"]
            visual = np.asarray(rec["visual_signature"], dtype=np.float64)
            if pid not in providers:
                generic = {k: rec["fields"][k] for k in config.generic_keys}
                providers[pid] = Provider(pid, generic, visual)
            doc = Document(
                rec["doc_id"], pid, dict(rec["fields"]),
                tuple(rec["token_stream"]), visual,
            )
            documents.append(doc)
            for qa in rec["qa"]:
                examples.append(
                    QAExample(doc.doc_id, qa["key"], qa["template_id"], qa["answer"])
                )
    provider_list = [providers[pid] for pid in sorted(providers)]
    return Corpus(config, provider_list, documents, examples, vocab)


def write_manifest(path: str | Path, provider_ids: Iterable[int]) -> None:
    Path(path).write_text("".join(f"{pid}\n" for pid in sorted(provider_ids)))


def read_manifest(path: str | Path) -> list[int]:
    return [int(line) for line in Path(path).read_text().splitlines() if line.strip()]
