"""Encoder abstraction: tokenization, batch layout with class-representation
slots, and access to last-layer token features and attention maps.

Two encoder backends share one interface: a small randomly initialized
transformer (:class:`TransformerEncoder`) used for fast CPU experiments and
tests, and an optional wrapper around a pretrained BERT-family checkpoint
(:class:`PretrainedEncoder`, requires ``transformers``).
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field

import torch
from torch import nn

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
SLOT_ID = 3
NUM_RESERVED = 4

_WORD_RE = re.compile(r"[a-z0-9']+")


class ConfigurationError(ValueError):
    """Raised for invalid encoder / batch configuration."""


class HashingWordTokenizer:
    """Word-level tokenizer with a fixed-size hashed vocabulary.

    Every word maps to exactly one piece, so word/piece bookkeeping is
    trivial; there is no out-of-vocabulary case. Hashing uses crc32 so the
    mapping is stable across processes and runs.
    """

    def __init__(self, vocab_size: int = 8192):
        if vocab_size <= NUM_RESERVED:
            raise ConfigurationError("vocab_size must exceed reserved ids")
        self.vocab_size = vocab_size

    def words(self, text: str) -> list[str]:
        return _WORD_RE.findall(text.lower())

    def pieces(self, word: str) -> list[str]:
        return [word]

    def piece_id(self, piece: str) -> int:
        h = zlib.crc32(piece.encode("utf-8"))
        return NUM_RESERVED + h % (self.vocab_size - NUM_RESERVED)

    def word_piece_ids(self, word: str) -> list[int]:
        return [self.piece_id(p) for p in self.pieces(word)]


@dataclass
class EncodedBatch:
    """Token-level layout of one batch.

    ``text_spans`` gives the half-open index range of sentence tokens per
    row (specials excluded); ``csr_slots`` lists the positions reserved for
    injected class embeddings; ``word_spans`` maps each sentence word to its
    token positions so attention can be aggregated back to word level.
    """

    token_ids: torch.Tensor
    attention_mask: torch.Tensor
    segment_ids: torch.Tensor
    text_spans: list[tuple[int, int]]
    csr_slots: list[list[int]]
    word_spans: list[list[tuple[str, list[int]]]]
    csr_version: int | None = None
    empty_rows: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]


@dataclass
class EncoderOutput:
    token_features: torch.Tensor  # [batch, seq, hidden]
    last_layer_attention: torch.Tensor  # [batch, heads, seq, seq]


@dataclass
class EncoderConfig:
    vocab_size: int = 8192
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 512
    dropout: float = 0.0
    init_std: float = 0.02
    # Std for the word-embedding table specifically; None means init_std.
    # Zero makes never-trained words contribute nothing to the input, so a
    # classifier's confidence on a text tracks the words it has actually
    # seen gradients for — useful for calibrated small-scale models.
    word_init_std: float | None = None

    def __post_init__(self):
        if self.hidden_dim <= 0:
            raise ConfigurationError("hidden_dim must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigurationError("num_heads must divide hidden_dim")
        if self.init_std < 0:
            raise ConfigurationError("init_std must be non-negative")
        if self.word_init_std is not None and self.word_init_std < 0:
            raise ConfigurationError("word_init_std must be non-negative")


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attn = nn.MultiheadAttention(
            cfg.hidden_dim, cfg.num_heads, dropout=cfg.dropout, batch_first=True
        )
        self.ffn = nn.Sequential(
            nn.Linear(cfg.hidden_dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.hidden_dim),
        )
        self.norm1 = nn.LayerNorm(cfg.hidden_dim)
        self.norm2 = nn.LayerNorm(cfg.hidden_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, key_padding_mask):
        attn_out, attn_weights = self.attn(
            x, x, x,
            key_padding_mask=key_padding_mask,
            need_weights=True,
            average_attn_weights=False,
        )
        x = self.norm1(x + self.dropout(attn_out))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x, attn_weights


class TransformerEncoder(nn.Module):
    """Small BERT-style encoder exposing last-layer attention.

    Class embeddings are injected at the embedding layer: slot positions
    receive the injected vector plus the position and segment embeddings of
    their slot, exactly as a normal token would.
    """

    def __init__(self, cfg: EncoderConfig | None = None,
                 tokenizer: HashingWordTokenizer | None = None):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        self.tokenizer = tokenizer or HashingWordTokenizer(self.cfg.vocab_size)
        self.word_embeddings = nn.Embedding(self.cfg.vocab_size, self.cfg.hidden_dim)
        self.position_embeddings = nn.Embedding(self.cfg.max_positions, self.cfg.hidden_dim)
        self.segment_embeddings = nn.Embedding(2, self.cfg.hidden_dim)
        self.embed_norm = nn.LayerNorm(self.cfg.hidden_dim)
        self.embed_dropout = nn.Dropout(self.cfg.dropout)
        self.layers = nn.ModuleList(_EncoderLayer(self.cfg) for _ in range(self.cfg.num_layers))
        self._init_weights()

    def _init_weights(self):
        std = self.cfg.init_std
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, std=std)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, std=std)
            elif isinstance(module, nn.MultiheadAttention):
                nn.init.normal_(module.in_proj_weight, std=std)
                if module.in_proj_bias is not None:
                    nn.init.zeros_(module.in_proj_bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        word_std = self.cfg.word_init_std
        if word_std is not None:
            nn.init.normal_(self.word_embeddings.weight, std=word_std)
        with torch.no_grad():
            self.word_embeddings.weight[PAD_ID].zero_()

    # -- handle metadata ---------------------------------------------------
    @property
    def vocab_size(self) -> int:
        return self.cfg.vocab_size

    @property
    def hidden_dim(self) -> int:
        return self.cfg.hidden_dim

    @property
    def num_layers(self) -> int:
        return self.cfg.num_layers

    @property
    def num_heads(self) -> int:
        return self.cfg.num_heads

    @property
    def max_positions(self) -> int:
        return self.cfg.max_positions

    # -- embeddings --------------------------------------------------------
    def embed_word(self, word: str) -> torch.Tensor:
        """Input-embedding of a word: mean over its piece embeddings."""
        ids = torch.tensor(self.tokenizer.word_piece_ids(word), dtype=torch.long)
        with torch.no_grad():
            return self.word_embeddings(ids).mean(dim=0)

    def forward(self, batch: EncodedBatch,
                slot_embeddings: torch.Tensor | None = None) -> EncoderOutput:
        """Run the encoder.

        ``slot_embeddings`` is a [K, hidden] matrix placed at each row's
        slot positions (same class order for every row).
        """
        if batch.seq_len > self.cfg.max_positions:
            raise ConfigurationError(
                f"sequence length {batch.seq_len} exceeds max_positions "
                f"{self.cfg.max_positions}"
            )
        x = self.word_embeddings(batch.token_ids)
        if slot_embeddings is not None:
            if slot_embeddings.shape[-1] != self.cfg.hidden_dim:
                raise ConfigurationError(
                    f"slot embedding dim {slot_embeddings.shape[-1]} != "
                    f"hidden_dim {self.cfg.hidden_dim}"
                )
            x = x.clone()
            for row, slots in enumerate(batch.csr_slots):
                for k, pos in enumerate(slots):
                    x[row, pos] = slot_embeddings[k]
        elif any(batch.csr_slots):
            raise ConfigurationError("batch has csr slots but no slot embeddings given")

        positions = torch.arange(batch.seq_len, device=x.device)
        x = x + self.position_embeddings(positions)[None, :, :]
        x = x + self.segment_embeddings(batch.segment_ids)
        x = self.embed_dropout(self.embed_norm(x))

        key_padding_mask = batch.attention_mask == 0
        attn = None
        for layer in self.layers:
            x, attn = layer(x, key_padding_mask)
        return EncoderOutput(token_features=x, last_layer_attention=attn)


# ---------------------------------------------------------------------------
# Batch construction
# ---------------------------------------------------------------------------

def _truncate_words(words: list[str], budget: int, keep: str) -> list[str]:
    if len(words) <= budget:
        return words
    return words[-budget:] if keep == "tail" else words[:budget]


def _tokenize_rows(texts, tokenizer, budget, keep):
    rows = []
    for text in texts:
        words = _truncate_words(tokenizer.words(text), budget, keep)
        pieces: list[int] = []
        spans: list[tuple[str, list[int]]] = []
        for w in words:
            ids = tokenizer.word_piece_ids(w)
            start = len(pieces)
            pieces.extend(ids)
            spans.append((w, list(range(start, start + len(ids)))))
        rows.append((pieces, spans))
    return rows


def _assemble(rows, n_slots: int, csr_version: int | None):
    """Lay out [CLS] text [SEP] (slots [SEP])? rows and pad to max length."""
    lengths = [1 + len(p) + 1 + (n_slots + 1 if n_slots else 0) for p, _ in rows]
    max_len = max(lengths)
    n = len(rows)
    token_ids = torch.full((n, max_len), PAD_ID, dtype=torch.long)
    mask = torch.zeros((n, max_len), dtype=torch.long)
    segments = torch.zeros((n, max_len), dtype=torch.long)
    text_spans, csr_slots, word_spans, empty_rows = [], [], [], []

    for row, (pieces, spans) in enumerate(rows):
        ids = [CLS_ID] + pieces + [SEP_ID]
        seg = [0] * len(ids)
        slots: list[int] = []
        if n_slots:
            slots = list(range(len(ids), len(ids) + n_slots))
            ids += [SLOT_ID] * n_slots + [SEP_ID]
            seg += [1] * (n_slots + 1)
        token_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[row, : len(ids)] = 1
        segments[row, : len(ids)] = torch.tensor(seg, dtype=torch.long)
        text_spans.append((1, 1 + len(pieces)))
        csr_slots.append(slots)
        word_spans.append([(w, [p + 1 for p in pos]) for w, pos in spans])
        if not pieces:
            empty_rows.append(row)

    return EncodedBatch(
        token_ids=token_ids,
        attention_mask=mask,
        segment_ids=segments,
        text_spans=text_spans,
        csr_slots=csr_slots,
        word_spans=word_spans,
        csr_version=csr_version,
        empty_rows=empty_rows,
    )


def encode_with_csr(texts: list[str], csr, tokenizer,
                    max_len: int = 256, keep: str = "head",
                    embedding_dim: int | None = None) -> EncodedBatch:
    """Build a "[CLS] text [SEP] slot_1..slot_K [SEP]" batch.

    ``csr`` is either the class count K or the list of class semantic
    representations (objects with ``.embedding`` and ``.version``). Text is
    truncated so that 1 + text + 1 + K + 1 never exceeds ``max_len``. Slot
    positions are placeholders; the class embeddings are substituted at the
    encoder's embedding layer.
    """
    csr_version = None
    if isinstance(csr, int):
        num_classes = csr
    else:
        num_classes = len(csr)
        versions = {c.version for c in csr}
        csr_version = max(versions) if versions else None
        if embedding_dim is not None:
            for c in csr:
                if len(c.embedding) != embedding_dim:
                    raise ConfigurationError(
                        f"class {c.class_id} embedding dim {len(c.embedding)} "
                        f"!= encoder dim {embedding_dim}"
                    )
    if num_classes < 1:
        raise ConfigurationError("need at least one class slot")
    budget = max_len - (3 + num_classes)
    if budget < 1:
        raise ConfigurationError(f"max_len {max_len} leaves no room for text")
    rows = _tokenize_rows(texts, tokenizer, budget, keep)
    return _assemble(rows, num_classes, csr_version)


def encode_plain(texts: list[str], tokenizer, max_len: int = 256,
                 keep: str = "head") -> EncodedBatch:
    """Build a "[CLS] text [SEP]" batch (baseline input format)."""
    budget = max_len - 2
    rows = _tokenize_rows(texts, tokenizer, budget, keep)
    return _assemble(rows, 0, None)


def sentence_representation(output: EncoderOutput, batch: EncodedBatch) -> torch.Tensor:
    """Mean of last-layer features over each row's text span only.

    [CLS], [SEP], slot and padding positions never contribute. Rows with an
    empty text span yield a zero vector (flagged in ``batch.empty_rows``).
    """
    feats = output.token_features
    out = feats.new_zeros((batch.size, feats.shape[-1]))
    for row, (start, end) in enumerate(batch.text_spans):
        if end > start:
            out[row] = feats[row, start:end].mean(dim=0)
    return out


# ---------------------------------------------------------------------------
# Pretrained backend (opt-in)
# ---------------------------------------------------------------------------

class _WordPieceAdapter:
    """Tokenizer facade over a HuggingFace wordpiece tokenizer."""

    def __init__(self, hf_tokenizer):
        self._tok = hf_tokenizer
        self.vocab_size = hf_tokenizer.vocab_size

    def words(self, text: str) -> list[str]:
        return _WORD_RE.findall(text.lower())

    def pieces(self, word: str) -> list[str]:
        return self._tok.tokenize(word) or [self._tok.unk_token]

    def piece_id(self, piece: str) -> int:
        return self._tok.convert_tokens_to_ids(piece)

    def word_piece_ids(self, word: str) -> list[int]:
        return [self.piece_id(p) for p in self.pieces(word)]


class PretrainedEncoder(nn.Module):
    """Pretrained BERT-family checkpoint behind the same surface as
    :class:`TransformerEncoder`. Requires the ``transformers`` package and a
    locally cached checkpoint."""

    def __init__(self, checkpoint: str = "bert-base-uncased",
                 cache_dir: str | None = None):
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.model = AutoModel.from_pretrained(
            checkpoint, cache_dir=cache_dir, output_attentions=True,
            attn_implementation="eager",
        )
        self.tokenizer = _WordPieceAdapter(
            AutoTokenizer.from_pretrained(checkpoint, cache_dir=cache_dir)
        )
        cfg = self.model.config
        self.cfg = EncoderConfig(
            vocab_size=cfg.vocab_size,
            hidden_dim=cfg.hidden_size,
            num_layers=cfg.num_hidden_layers,
            num_heads=cfg.num_attention_heads,
            ffn_dim=cfg.intermediate_size,
            max_positions=cfg.max_position_embeddings,
            dropout=cfg.hidden_dropout_prob,
        )
        # Reuse the checkpoint's special ids for layout assembly.
        hf_tok = self.tokenizer._tok
        self._cls_id = hf_tok.cls_token_id
        self._sep_id = hf_tok.sep_token_id
        self._pad_id = hf_tok.pad_token_id

    vocab_size = property(lambda self: self.cfg.vocab_size)
    hidden_dim = property(lambda self: self.cfg.hidden_dim)
    num_layers = property(lambda self: self.cfg.num_layers)
    num_heads = property(lambda self: self.cfg.num_heads)
    max_positions = property(lambda self: self.cfg.max_positions)

    def _remap_specials(self, batch: EncodedBatch) -> torch.Tensor:
        ids = batch.token_ids.clone()
        ids[ids == CLS_ID] = self._cls_id
        ids[ids == SEP_ID] = self._sep_id
        swap_pad = ids == PAD_ID
        ids[ids == SLOT_ID] = self._pad_id  # placeholder; replaced by injection
        ids[swap_pad] = self._pad_id
        return ids

    def embed_word(self, word: str) -> torch.Tensor:
        ids = torch.tensor(self.tokenizer.word_piece_ids(word), dtype=torch.long)
        emb = self.model.get_input_embeddings()
        with torch.no_grad():
            return emb(ids).mean(dim=0)

    def forward(self, batch: EncodedBatch,
                slot_embeddings: torch.Tensor | None = None) -> EncoderOutput:
        ids = self._remap_specials(batch)
        inputs_embeds = self.model.get_input_embeddings()(ids)
        if slot_embeddings is not None:
            if slot_embeddings.shape[-1] != self.hidden_dim:
                raise ConfigurationError("slot embedding dim mismatch")
            inputs_embeds = inputs_embeds.clone()
            for row, slots in enumerate(batch.csr_slots):
                for k, pos in enumerate(slots):
                    inputs_embeds[row, pos] = slot_embeddings[k]
        elif any(batch.csr_slots):
            raise ConfigurationError("batch has csr slots but no slot embeddings given")
        out = self.model(
            inputs_embeds=inputs_embeds,
            attention_mask=batch.attention_mask,
            token_type_ids=batch.segment_ids,
        )
        return EncoderOutput(
            token_features=out.last_hidden_state,
            last_layer_attention=out.attentions[-1],
        )
