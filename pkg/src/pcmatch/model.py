"""Dual-head network: shared encoder, a K-way softmax head over the pooled
sentence representation, and a multi-label matching head over the
concatenation of the sentence representation with each class slot's output
feature."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .csr import ClassSemanticRepresentation, slot_embedding_matrix
from .encoding import (
    ConfigurationError,
    EncodedBatch,
    EncoderOutput,
    encode_plain,
    encode_with_csr,
    sentence_representation,
)

_ACTIVATIONS = {"tanh": nn.Tanh, "relu": nn.ReLU, "gelu": nn.GELU}


@dataclass
class HeadConfig:
    hidden_size: int = 128
    activation: str = "tanh"
    layers: int = 2
    # Small init keeps untrained logits near zero, so confidence-gated
    # consumers see near-uniform probabilities until the head has learned.
    init_std: float = 0.02

    def __post_init__(self):
        if self.hidden_size <= 0:
            raise ConfigurationError("head hidden_size must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.init_std < 0:
            raise ConfigurationError("head init_std must be non-negative")


@dataclass
class DualHeadOutputs:
    semantic_logits: torch.Tensor | None
    semantic_probs: torch.Tensor | None
    matching_logits: torch.Tensor | None
    matching_probs: torch.Tensor | None

    def detach(self) -> "DualHeadOutputs":
        f = lambda t: None if t is None else t.detach()
        return DualHeadOutputs(
            f(self.semantic_logits), f(self.semantic_probs),
            f(self.matching_logits), f(self.matching_probs),
        )


def _mlp(in_dim: int, out_dim: int, cfg: HeadConfig) -> nn.Sequential:
    act = _ACTIVATIONS[cfg.activation]
    mlp = nn.Sequential(
        nn.Linear(in_dim, cfg.hidden_size),
        act(),
        nn.Linear(cfg.hidden_size, out_dim),
    )
    for module in mlp:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, std=cfg.init_std)
            nn.init.zeros_(module.bias)
    return mlp


class DualHeadModel(nn.Module):
    """Joint classifier.

    ``matching`` selects the matching pathway: ``"csr"`` scores each class
    from concat(pooled, slot-k feature) with one shared scalar head;
    ``"pooled"`` scores all classes from the pooled representation alone
    (the dual-loss control without class slots); ``None`` disables it.
    ``use_csr_input`` controls whether inputs carry class slots at all.
    """

    def __init__(
        self,
        encoder,
        num_classes: int,
        head_cfg: HeadConfig | None = None,
        use_semantic: bool = True,
        matching: str | None = "csr",
        use_csr_input: bool = True,
        max_len: int = 256,
        keep: str = "head",
    ):
        super().__init__()
        if matching == "csr" and not use_csr_input:
            raise ConfigurationError("csr matching requires csr slots in the input")
        if not use_semantic and matching is None:
            raise ConfigurationError("model needs at least one head")
        self.encoder = encoder
        self.num_classes = num_classes
        self.head_cfg = head_cfg or HeadConfig()
        self.use_semantic = use_semantic
        self.matching = matching
        self.use_csr_input = use_csr_input
        self.max_len = max_len
        self.keep = keep

        h = encoder.hidden_dim
        self.semantic_head = _mlp(h, num_classes, self.head_cfg) if use_semantic else None
        if matching == "csr":
            self.matching_head = _mlp(2 * h, 1, self.head_cfg)
        elif matching == "pooled":
            self.matching_head = _mlp(h, num_classes, self.head_cfg)
        else:
            self.matching_head = None

    # -- input construction --------------------------------------------------
    def encode(self, texts: list[str],
               csr: list[ClassSemanticRepresentation] | None = None) -> EncodedBatch:
        if self.use_csr_input:
            if not csr:
                raise ConfigurationError("model expects class representations")
            return encode_with_csr(
                texts, csr, self.encoder.tokenizer, max_len=self.max_len,
                keep=self.keep, embedding_dim=self.encoder.hidden_dim,
            )
        return encode_plain(texts, self.encoder.tokenizer,
                            max_len=self.max_len, keep=self.keep)

    def encoder_forward(self, batch: EncodedBatch,
                        csr: list[ClassSemanticRepresentation] | None = None
                        ) -> EncoderOutput:
        if self.use_csr_input:
            version = max(c.version for c in csr)
            if batch.csr_version != version:
                raise ConfigurationError(
                    f"batch built with CSR version {batch.csr_version}, "
                    f"model given version {version}"
                )
            return self.encoder(batch, slot_embedding_matrix(csr))
        return self.encoder(batch)

    # -- heads ----------------------------------------------------------------
    def forward_dual(self, batch: EncodedBatch,
                     csr: list[ClassSemanticRepresentation] | None = None
                     ) -> DualHeadOutputs:
        out = self.encoder_forward(batch, csr)
        pooled = sentence_representation(out, batch)

        semantic_logits = semantic_probs = None
        if self.use_semantic:
            semantic_logits = self.semantic_head(pooled)
            semantic_probs = torch.softmax(semantic_logits, dim=-1)

        matching_logits = matching_probs = None
        if self.matching == "csr":
            slots = torch.stack(
                [out.token_features[row, slots_row]
                 for row, slots_row in enumerate(batch.csr_slots)]
            )  # [B, K, H]
            expanded = pooled[:, None, :].expand_as(slots)
            matching_logits = self.matching_head(
                torch.cat([expanded, slots], dim=-1)
            ).squeeze(-1)
            matching_probs = torch.sigmoid(matching_logits)
        elif self.matching == "pooled":
            matching_logits = self.matching_head(pooled)
            matching_probs = torch.sigmoid(matching_logits)

        return DualHeadOutputs(semantic_logits, semantic_probs,
                               matching_logits, matching_probs)

    @torch.no_grad()
    def predict(self, batch: EncodedBatch,
                csr: list[ClassSemanticRepresentation] | None = None,
                use_matching: bool = False) -> torch.Tensor:
        """Class indices via argmax of the semantic probabilities (first
        index wins ties); ``use_matching`` switches to the matching head."""
        outputs = self.forward_dual(batch, csr)
        if use_matching or not self.use_semantic:
            return outputs.matching_probs.argmax(dim=-1)
        return outputs.semantic_probs.argmax(dim=-1)

    # -- persistence ------------------------------------------------------------
    def save_checkpoint(self, path: str | Path,
                        csr: list[ClassSemanticRepresentation] | None = None) -> None:
        torch.save(
            {
                "state_dict": self.state_dict(),
                "csr": [c.to_dict() for c in csr] if csr else None,
                "num_classes": self.num_classes,
                "use_semantic": self.use_semantic,
                "matching": self.matching,
                "use_csr_input": self.use_csr_input,
            },
            path,
        )

    def load_checkpoint(self, path: str | Path
                        ) -> list[ClassSemanticRepresentation] | None:
        ckpt = torch.load(path, weights_only=False)
        self.load_state_dict(ckpt["state_dict"])
        if ckpt["csr"] is None:
            return None
        return [ClassSemanticRepresentation.from_dict(d) for d in ckpt["csr"]]
