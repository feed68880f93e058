"""Class semantic representations: attention-mined per-class word lists and
their averaged embeddings, including initialization from a fine-tuned
classifier, progressive updates during training, update triggering,
serialization, and the literal-word matching probe.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import torch
from torch import nn

from .encoding import (
    EncodedBatch,
    EncoderOutput,
    encode_plain,
    sentence_representation,
    _assemble,
    _tokenize_rows,
)

log = logging.getLogger(__name__)


def load_stopwords() -> frozenset[str]:
    text = resources.files("pcmatch").joinpath("stopwords.txt").read_text()
    return frozenset(w for w in text.split() if w)


def _is_mineable(word: str, stopwords: frozenset[str]) -> bool:
    if word in stopwords:
        return False
    if not any(c.isalpha() for c in word):
        return False  # punctuation / pure numbers
    return True


@dataclass
class ClassSemanticRepresentation:
    """One class's mined word list and averaged embedding vector."""

    class_id: int
    words: list[tuple[str, float, str]]  # (word, score, "labeled"|"unlabeled")
    embedding: torch.Tensor
    version: int = 0

    def word_list(self) -> list[str]:
        return [w for w, _, _ in self.words]

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "words": [list(w) for w in self.words],
            "embedding": [float(v) for v in self.embedding],
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSemanticRepresentation":
        return cls(
            class_id=d["class_id"],
            words=[(w, float(s), src) for w, s, src in d["words"]],
            embedding=torch.tensor(d["embedding"], dtype=torch.float32),
            version=d["version"],
        )


def slot_embedding_matrix(csr_list: list[ClassSemanticRepresentation]) -> torch.Tensor:
    return torch.stack([c.embedding for c in csr_list])


@dataclass
class AttentionScoreTable:
    """Accumulated received-attention mass per (class, word)."""

    scores: dict[int, dict[str, float]] = field(default_factory=dict)
    counts: dict[int, dict[str, int]] = field(default_factory=dict)
    sources: dict[int, dict[str, str]] = field(default_factory=dict)

    def add(self, class_id: int, word: str, score: float, source: str) -> None:
        if score < 0:
            raise ValueError(f"negative attention score for {word!r}")
        self.scores.setdefault(class_id, {})
        self.counts.setdefault(class_id, {})
        self.sources.setdefault(class_id, {})
        self.scores[class_id][word] = self.scores[class_id].get(word, 0.0) + score
        self.counts[class_id][word] = self.counts[class_id].get(word, 0) + 1
        if self.sources[class_id].get(word) != "labeled":
            self.sources[class_id][word] = source


def token_attention_received(output: EncoderOutput, batch: EncodedBatch) -> torch.Tensor:
    """Per-token received attention: mean over heads and over unmasked query
    positions of the last-layer attention into each key position. Masked
    positions score 0."""
    attn = output.last_layer_attention  # [B, H, Q, T]
    mask = batch.attention_mask.to(attn.dtype)
    query_mask = mask[:, None, :, None]
    summed = (attn * query_mask).sum(dim=(1, 2))  # over heads and queries
    denom = attn.shape[1] * mask.sum(dim=1, keepdim=True).clamp(min=1.0)
    return summed / denom * mask


def accumulate_class_words(
    table: AttentionScoreTable,
    batch: EncodedBatch,
    labels: list[int],
    received: torch.Tensor,
    stopwords: frozenset[str],
    source: str = "labeled",
) -> AttentionScoreTable:
    """Add each sentence's word scores to its class's row of the table.

    A word's score is the mean of its subword-piece scores; stop words and
    tokens without any alphabetic character are skipped.
    """
    for row, label in enumerate(labels):
        for word, positions in batch.word_spans[row]:
            if not _is_mineable(word, stopwords):
                continue
            score = float(received[row, positions].mean())
            table.add(int(label), word, score, source)
    return table


def _embed_word_list(encoder, words: list[str]) -> torch.Tensor:
    """Mean of input-embedding vectors over all subword pieces of all words."""
    piece_ids: list[int] = []
    for w in words:
        piece_ids.extend(encoder.tokenizer.word_piece_ids(w))
    ids = torch.tensor(piece_ids, dtype=torch.long)
    if hasattr(encoder, "word_embeddings"):
        emb = encoder.word_embeddings
    else:
        emb = encoder.model.get_input_embeddings()
    with torch.no_grad():
        return emb(ids).mean(dim=0)


def _rank_class_words(table: AttentionScoreTable, class_id: int, top_j: int,
                      combine: str) -> list[tuple[str, float, str]]:
    raw = table.scores.get(class_id, {})
    if not raw:
        raise ValueError(f"class {class_id} has no scored words")
    if combine == "mean":
        raw = {w: s / table.counts[class_id][w] for w, s in raw.items()}
    ranked = sorted(raw.items(), key=lambda kv: (-kv[1], kv[0]))[:top_j]
    return [(w, s, table.sources[class_id][w]) for w, s in ranked]


def build_csr(
    table: AttentionScoreTable,
    top_j: int,
    encoder,
    num_classes: int,
    version: int = 0,
    combine: str = "sum",
) -> list[ClassSemanticRepresentation]:
    """Top-j words per class by accumulated score (ties broken
    lexicographically), embedded and averaged.

    ``combine="mean"`` divides each accumulated score by its occurrence
    count before ranking.
    """
    out = []
    for class_id in range(num_classes):
        words = _rank_class_words(table, class_id, top_j, combine)
        embedding = _embed_word_list(encoder, [w for w, _, _ in words])
        out.append(ClassSemanticRepresentation(class_id, words, embedding, version))
    return out


# ---------------------------------------------------------------------------
# Initialization: fine-tune, mine, build
# ---------------------------------------------------------------------------

class _PlainClassifier(nn.Module):
    """K-way head over the pooled sentence representation, used only to
    produce attention for the initial word mining."""

    def __init__(self, encoder, num_classes: int, head_hidden: int = 128):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Sequential(
            nn.Linear(encoder.hidden_dim, head_hidden),
            nn.Tanh(),
            nn.Linear(head_hidden, num_classes),
        )
        for module in self.head:
            if isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)

    def forward(self, batch: EncodedBatch):
        out = self.encoder(batch)
        pooled = sentence_representation(out, batch)
        return self.head(pooled), out


def _mine_table(
    encoder,
    texts: list[str],
    labels: list[int],
    stopwords: frozenset[str],
    max_len: int,
    keep: str,
    batch_size: int,
    source: str,
    table: AttentionScoreTable | None = None,
    encode_fn=None,
) -> AttentionScoreTable:
    table = table if table is not None else AttentionScoreTable()
    encode_fn = encode_fn or (
        lambda chunk: encode_plain(chunk, encoder.tokenizer, max_len=max_len, keep=keep)
    )
    encoder.eval()
    with torch.no_grad():
        for i in range(0, len(texts), batch_size):
            chunk = texts[i : i + batch_size]
            chunk_labels = labels[i : i + batch_size]
            batch = encode_fn(chunk)
            if batch.csr_slots and batch.csr_slots[0]:
                raise ValueError("mining expects a forward that handles slots")
            out = encoder(batch)
            received = token_attention_received(out, batch)
            accumulate_class_words(table, batch, chunk_labels, received, stopwords, source)
    return table


def initialize_csr(
    texts: list[str],
    labels: list[int],
    encoder,
    num_classes: int,
    top_j: int = 75,
    stopwords: frozenset[str] | None = None,
    max_len: int = 256,
    keep: str = "head",
    finetune_epochs: int = 20,
    encoder_lr: float = 5e-6,
    head_lr: float = 5e-4,
    batch_size: int = 8,
    combine: str = "sum",
) -> list[ClassSemanticRepresentation]:
    """Initial class representations from the labeled set only.

    Fine-tunes a throwaway copy of the encoder with a plain K-way head on
    "[CLS] text [SEP]" input, then mines received attention on the labeled
    sentences and keeps the top-j words per class. The returned embeddings
    use the fine-tuned copy's embedding table, where the mined words have
    actually received gradient; version is 0.
    """
    stopwords = stopwords if stopwords is not None else load_stopwords()
    probe = _PlainClassifier(copy.deepcopy(encoder), num_classes)
    opt = torch.optim.AdamW(
        [
            {"params": probe.encoder.parameters(), "lr": encoder_lr},
            {"params": probe.head.parameters(), "lr": head_lr},
        ]
    )
    label_t = torch.tensor(labels, dtype=torch.long)
    probe.train()
    for _ in range(finetune_epochs):
        for i in range(0, len(texts), batch_size):
            batch = encode_plain(
                texts[i : i + batch_size], encoder.tokenizer, max_len=max_len, keep=keep
            )
            logits, _ = probe(batch)
            loss = nn.functional.cross_entropy(logits, label_t[i : i + batch_size])
            opt.zero_grad()
            loss.backward()
            opt.step()

    table = _mine_table(
        probe.encoder, texts, labels, stopwords, max_len, keep, batch_size, "labeled"
    )
    return build_csr(table, top_j, probe.encoder, num_classes, version=0,
                     combine=combine)


def update_csr(
    current: list[ClassSemanticRepresentation],
    labeled_texts: list[str],
    labeled_labels: list[int],
    qualifying_texts: list[str],
    qualifying_labels: list[int],
    model,
    top_j: int = 75,
    stopwords: frozenset[str] | None = None,
    combine: str = "sum",
) -> list[ClassSemanticRepresentation]:
    """Recompute word lists from scratch over labeled plus gate-qualifying
    unlabeled sentences using the current model's attention. Word lists are
    replaced, not merged; a class with no contributing sentences retains its
    previous entry. Version increments by exactly 1."""
    stopwords = stopwords if stopwords is not None else load_stopwords()
    num_classes = len(current)
    new_version = max(c.version for c in current) + 1
    encoder = model.encoder

    def encode_fn(chunk):
        return model.encode(chunk, current)

    table = AttentionScoreTable()

    def mine(texts, labels, source):
        model.eval()
        with torch.no_grad():
            for i in range(0, len(texts), 8):
                batch = encode_fn(texts[i : i + 8])
                out = model.encoder_forward(batch, current)
                received = token_attention_received(out, batch)
                accumulate_class_words(
                    table, batch, labels[i : i + 8], received, stopwords, source
                )

    mine(labeled_texts, labeled_labels, "labeled")
    if qualifying_texts:
        mine(qualifying_texts, qualifying_labels, "unlabeled")

    out = []
    for class_id in range(num_classes):
        if not table.scores.get(class_id):
            log.warning("class %d has no contributing sentences; keeping prior words",
                        class_id)
            prev = current[class_id]
            out.append(ClassSemanticRepresentation(
                class_id, list(prev.words), prev.embedding.clone(), new_version
            ))
            continue
        words = _rank_class_words(table, class_id, top_j, combine)
        embedding = _embed_word_list(encoder, [w for w, _, _ in words])
        out.append(ClassSemanticRepresentation(class_id, words, embedding,
                                               new_version))
    return out


class UpdateTrigger:
    """Strict-increase trigger on the count of gate-qualifying validation
    samples. Fires iff the count exceeds the running maximum; the maximum is
    updated on fire."""

    def __init__(self, running_max: int = 0):
        self.running_max = running_max

    def check(self, qualifying_count: int) -> bool:
        if qualifying_count > self.running_max:
            self.running_max = qualifying_count
            return True
        return False


# ---------------------------------------------------------------------------
# Literal-word matching probe
# ---------------------------------------------------------------------------

@dataclass
class MatchProbeResult:
    tokens: list[str]
    best_class: list[int]  # per token
    attention_value: list[float]  # per token, attention to its best class
    cosine: list[float]  # per class

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "best_class": self.best_class,
            "attention_value": self.attention_value,
            "cosine": self.cosine,
        }


def probe_inherent_matching(
    text: str,
    class_words: list[str],
    encoder,
    max_len: int = 256,
    keep: str = "head",
) -> MatchProbeResult:
    """Append one literal word per class after the sentence and measure, per
    text token, the last-layer attention it pays to each class word (mean
    over heads and the word's pieces), plus the cosine similarity between
    the mean text-token feature and each class word's mean feature."""
    tokenizer = encoder.tokenizer
    num_classes = len(class_words)
    class_pieces = [tokenizer.word_piece_ids(w) for w in class_words]
    total_class = sum(len(p) for p in class_pieces)
    budget = max_len - 3 - total_class
    if budget < 1:
        raise ValueError("class words leave no room for text")

    rows = _tokenize_rows([text], tokenizer, budget, keep)
    pieces, spans = rows[0]
    # Layout: [CLS] text [SEP] class-pieces [SEP], second segment for words.
    batch = _assemble([(pieces, spans)], 0, None)
    from .encoding import CLS_ID, SEP_ID  # local to avoid polluting module top

    ids = [CLS_ID] + pieces + [SEP_ID]
    seg = [0] * len(ids)
    class_positions: list[list[int]] = []
    for cp in class_pieces:
        class_positions.append(list(range(len(ids), len(ids) + len(cp))))
        ids.extend(cp)
        seg.extend([1] * len(cp))
    ids.append(SEP_ID)
    seg.append(1)
    batch.token_ids = torch.tensor([ids], dtype=torch.long)
    batch.attention_mask = torch.ones((1, len(ids)), dtype=torch.long)
    batch.segment_ids = torch.tensor([seg], dtype=torch.long)

    encoder.eval()
    with torch.no_grad():
        out = encoder(batch)

    attn = out.last_layer_attention[0]  # [heads, L, L]
    feats = out.token_features[0]  # [L, H]
    start, end = batch.text_spans[0]

    tokens = [w for w, _ in batch.word_spans[0]]
    best_class: list[int] = []
    attention_value: list[float] = []
    for word, positions in batch.word_spans[0]:
        per_class = []
        for cp in class_positions:
            val = attn[:, positions, :][:, :, cp].mean()
            per_class.append(float(val))
        k = max(range(num_classes), key=lambda i: per_class[i])
        best_class.append(k)
        attention_value.append(per_class[k])

    text_mean = feats[start:end].mean(dim=0)
    cosine = []
    for cp_pos in class_positions:
        class_feat = feats[cp_pos].mean(dim=0)
        cosine.append(float(nn.functional.cosine_similarity(
            text_mean, class_feat, dim=0
        )))
    return MatchProbeResult(tokens, best_class, attention_value, cosine)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def save_csr_snapshot(
    path: str | Path,
    csr_list: list[ClassSemanticRepresentation],
    qualifying_count: int | None = None,
) -> None:
    doc = {
        "version": max(c.version for c in csr_list),
        "qualifying_count": qualifying_count,
        "classes": [c.to_dict() for c in csr_list],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_csr_snapshot(path: str | Path) -> list[ClassSemanticRepresentation]:
    doc = json.loads(Path(path).read_text())
    return [ClassSemanticRepresentation.from_dict(d) for d in doc["classes"]]
