"""Joint semi-supervised training: supervised CE+BCE loss, agreement-gated
pseudo-target generation, sharpened consistency loss on augmented views, and
progressive class-representation updates driven by a strict-increase trigger
on the unlabeled validation set."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import csr as csr_mod
from .encoding import ConfigurationError
from .model import DualHeadModel, DualHeadOutputs

log = logging.getLogger(__name__)

EPS = 1e-7


@dataclass
class GateConfig:
    confid1: float = 0.95  # min max semantic prob
    confid2: float = 0.7  # min max matching prob
    temperature: float = 0.5

    def __post_init__(self):
        for name in ("confid1", "confid2", "temperature"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigurationError(f"{name} must be in (0, 1], got {v}")


@dataclass
class PseudoTarget:
    passed: bool
    sharpened: torch.Tensor | None = None  # [K], present iff passed
    label: int | None = None  # hard matching label, present iff passed


def sharpen(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Temperature-scaled softmax; lower temperature means lower entropy."""
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    return torch.softmax(logits / temperature, dim=-1)


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(EPS, 1.0 - EPS)


def gate_conditions(outputs: DualHeadOutputs, cfg: GateConfig) -> dict[str, torch.Tensor]:
    """Per-row condition booleans. Conditions whose head is absent are
    treated as satisfied, so single-head variants gate on what they have."""
    ps, pm = outputs.semantic_probs, outputs.matching_probs
    n = (ps if ps is not None else pm).shape[0]
    device = (ps if ps is not None else pm).device
    true = torch.ones(n, dtype=torch.bool, device=device)

    cond1 = ps.max(dim=-1).values >= cfg.confid1 if ps is not None else true
    cond2 = pm.max(dim=-1).values >= cfg.confid2 if pm is not None else true
    if ps is not None and pm is not None:
        cond3 = ps.argmax(dim=-1) == pm.argmax(dim=-1)
    else:
        cond3 = true
    return {"cond1": cond1, "cond2": cond2, "cond3": cond3,
            "passed": cond1 & cond2 & cond3}


def gate(outputs: DualHeadOutputs, cfg: GateConfig) -> list[PseudoTarget]:
    """Pseudo-targets for one batch of ORIGINAL (unaugmented) predictions.

    A row passes iff its max semantic probability reaches ``confid1``, its
    max matching probability reaches ``confid2``, and both heads agree on
    the argmax (conditions for absent heads are vacuous). Targets are
    detached; gradients never flow through them.
    """
    outputs = outputs.detach()
    conds = gate_conditions(outputs, cfg)
    passed = conds["passed"]

    targets: list[PseudoTarget] = []
    for row in range(passed.shape[0]):
        if not passed[row]:
            targets.append(PseudoTarget(passed=False))
            continue
        sharpened = None
        if outputs.semantic_logits is not None:
            sharpened = sharpen(outputs.semantic_logits[row], cfg.temperature)
        if outputs.matching_probs is not None:
            label = int(outputs.matching_probs[row].argmax())
        else:
            label = int(outputs.semantic_probs[row].argmax())
        targets.append(PseudoTarget(passed=True, sharpened=sharpened, label=label))
    return targets


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def labeled_loss(outputs: DualHeadOutputs, labels: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of CE on the semantic head plus BCE (summed over
    all classes) on the matching head against the one-hot label."""
    total = None
    if outputs.semantic_probs is not None:
        ps = _clamp(outputs.semantic_probs)
        ce = -torch.log(ps.gather(1, labels[:, None]).squeeze(1))
        total = ce
    if outputs.matching_probs is not None:
        pm = _clamp(outputs.matching_probs)
        onehot = nn.functional.one_hot(labels, pm.shape[1]).to(pm.dtype)
        bce = -(onehot * torch.log(pm) + (1 - onehot) * torch.log(1 - pm)).sum(dim=1)
        total = bce if total is None else total + bce
    return total.mean()


def unlabeled_loss(
    outputs_aug: DualHeadOutputs,
    targets: list[PseudoTarget],
    kl_direction: str = "target_to_pred",
) -> torch.Tensor:
    """Batch mean of KL(sharpened target, semantic prediction on the
    augmented view) plus BCE of the matching prediction against the hard
    pseudo-label. Rows failing the gate contribute 0 (they still count in
    the denominator); with no gated rows the loss is 0."""
    ref = outputs_aug.semantic_probs
    if ref is None:
        ref = outputs_aug.matching_probs
    rows = [i for i, t in enumerate(targets) if t.passed]
    if not rows:
        return ref.sum() * 0.0

    terms = []
    for i in rows:
        term = ref.new_zeros(())
        if outputs_aug.semantic_probs is not None:
            p = _clamp(outputs_aug.semantic_probs[i])
            q = _clamp(targets[i].sharpened)
            if kl_direction == "target_to_pred":
                term = term + (q * torch.log(q / p)).sum()
            elif kl_direction == "pred_to_target":
                term = term + (p * torch.log(p / q)).sum()
            else:
                raise ConfigurationError(f"unknown kl_direction {kl_direction!r}")
        if outputs_aug.matching_probs is not None:
            pm = _clamp(outputs_aug.matching_probs[i])
            onehot = nn.functional.one_hot(
                torch.tensor(targets[i].label), pm.shape[0]
            ).to(pm.dtype)
            term = term + -(onehot * torch.log(pm)
                            + (1 - onehot) * torch.log(1 - pm)).sum()
        terms.append(term)
    return torch.stack(terms).sum() / len(targets)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainSettings:
    steps: int = 500
    labeled_batch: int = 4
    unlabeled_batch: int = 8
    encoder_lr: float = 5e-6
    head_lr: float = 5e-4
    lambda_u: float = 1.0
    # Linear ramp of the unlabeled weight over the first N steps (0 = off),
    # so consistency training engages only once supervised confidence has
    # had time to form.
    lambda_warmup: int = 0
    weight_decay: float = 0.01
    gate: GateConfig = field(default_factory=GateConfig)
    kl_direction: str = "target_to_pred"
    eval_every: int = 200
    supervised_only: bool = False
    update_csr: bool = True
    top_j: int = 75
    csr_pool_cap: int = 512  # max unlabeled train texts scanned per update
    seed: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None
    early_stop_patience: int | None = None  # eval intervals without gate growth


@dataclass
class TrainState:
    step: int = 0
    running_max: int = 0
    csr_version: int = 0


@dataclass
class DataBundle:
    labeled_texts: list[str]
    labeled_labels: list[int]
    unlabeled_texts: list[str]
    augmented_texts: list[str]
    validation_texts: list[str]
    test_texts: list[str]
    test_labels: list[int]


def evaluate_accuracy(model: DualHeadModel, csr, texts, labels,
                      batch_size: int = 32, use_matching: bool = False) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(texts), batch_size):
            chunk = texts[i : i + batch_size]
            batch = model.encode(chunk, csr)
            pred = model.predict(batch, csr, use_matching=use_matching)
            correct += int((pred == torch.tensor(labels[i : i + batch_size])).sum())
    return correct / max(len(texts), 1)


def _gate_stats(model, csr, texts, cfg: GateConfig, batch_size: int = 32):
    """Condition satisfaction rates and qualifying count on a text pool."""
    model.eval()
    counts = {"cond1": 0, "cond2": 0, "cond3": 0, "passed": 0}
    with torch.no_grad():
        for i in range(0, len(texts), batch_size):
            batch = model.encode(texts[i : i + batch_size], csr)
            outputs = model.forward_dual(batch, csr)
            conds = gate_conditions(outputs, cfg)
            for key in counts:
                counts[key] += int(conds[key].sum())
    n = max(len(texts), 1)
    return {f"{k}_rate": v / n for k, v in counts.items()} | {
        "qualifying_count": counts["passed"]
    }


def _qualifying_samples(model, csr, texts, cfg: GateConfig, cap: int,
                        batch_size: int = 32):
    """Texts from the unlabeled train pool passing the gate, with their
    pseudo-labels, scanning at most ``cap`` texts."""
    model.eval()
    out_texts, out_labels = [], []
    pool = texts[:cap]
    with torch.no_grad():
        for i in range(0, len(pool), batch_size):
            chunk = pool[i : i + batch_size]
            batch = model.encode(chunk, csr)
            outputs = model.forward_dual(batch, csr)
            for j, target in enumerate(gate(outputs, cfg)):
                if target.passed:
                    out_texts.append(chunk[j])
                    out_labels.append(target.label)
    return out_texts, out_labels


def train_step(
    model: DualHeadModel,
    csr,
    optimizer,
    labeled: tuple[list[str], torch.Tensor],
    unlabeled: tuple[list[str], list[str]] | None,
    settings: TrainSettings,
    step: int = 1,
) -> dict[str, float]:
    """One optimization step; returns the loss breakdown and gate count."""
    texts, labels = labeled
    model.train()
    batch = model.encode(texts, csr)
    outputs = model.forward_dual(batch, csr)
    loss_l = labeled_loss(outputs, labels)

    loss_u = torch.zeros(())
    n_gated = 0
    if unlabeled is not None:
        originals, augmented = unlabeled
        model.eval()
        with torch.no_grad():
            out_orig = model.forward_dual(model.encode(originals, csr), csr)
        targets = gate(out_orig, settings.gate)
        n_gated = sum(t.passed for t in targets)
        model.train()
        if n_gated:
            out_aug = model.forward_dual(model.encode(augmented, csr), csr)
            loss_u = unlabeled_loss(out_aug, targets, settings.kl_direction)

    lam = settings.lambda_u
    if settings.lambda_warmup > 0:
        lam *= min(1.0, step / settings.lambda_warmup)
    total = loss_l + lam * loss_u
    if not torch.isfinite(total):
        raise RuntimeError(f"training diverged: loss={float(total)}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return {
        "loss": float(total.detach()),
        "loss_labeled": float(loss_l.detach()),
        "loss_unlabeled": float(loss_u.detach()),
        "gated_rows": n_gated,
    }


def build_optimizer(model: DualHeadModel, settings: TrainSettings):
    head_params = []
    if model.semantic_head is not None:
        head_params += list(model.semantic_head.parameters())
    if model.matching_head is not None:
        head_params += list(model.matching_head.parameters())
    return torch.optim.AdamW(
        [
            {"params": model.encoder.parameters(), "lr": settings.encoder_lr},
            {"params": head_params, "lr": settings.head_lr},
        ],
        weight_decay=settings.weight_decay,
    )


def train(
    model: DualHeadModel,
    csr_list,
    data: DataBundle,
    settings: TrainSettings,
    stopwords: frozenset[str] | None = None,
) -> tuple[list, list[dict]]:
    """Run the joint loop; returns the final class representations and the
    training log (one record per eval interval)."""
    stopwords = stopwords if stopwords is not None else csr_mod.load_stopwords()
    optimizer = build_optimizer(model, settings)
    trigger = csr_mod.UpdateTrigger()
    state = TrainState(csr_version=max(c.version for c in csr_list) if csr_list else 0)
    labeled_rng = np.random.default_rng(settings.seed)
    unlabeled_rng = np.random.default_rng(settings.seed + 1)
    labels_t = torch.tensor(data.labeled_labels, dtype=torch.long)

    records: list[dict] = []
    log_file = open(settings.log_path, "a") if settings.log_path else None
    ckpt_dir = Path(settings.checkpoint_dir) if settings.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    stale_intervals = 0

    def write(record):
        records.append(record)
        if log_file:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()

    try:
        for step in range(1, settings.steps + 1):
            state.step = step
            li = labeled_rng.choice(len(data.labeled_texts),
                                    size=settings.labeled_batch, replace=True)
            labeled = ([data.labeled_texts[i] for i in li], labels_t[li])
            unlabeled = None
            if not settings.supervised_only and data.unlabeled_texts:
                ui = unlabeled_rng.choice(len(data.unlabeled_texts),
                                          size=settings.unlabeled_batch, replace=True)
                unlabeled = ([data.unlabeled_texts[i] for i in ui],
                             [data.augmented_texts[i] for i in ui])
            step_stats = train_step(model, csr_list, optimizer,
                                    labeled, unlabeled, settings, step=step)

            if step % settings.eval_every == 0 or step == settings.steps:
                stats = _gate_stats(model, csr_list, data.validation_texts,
                                    settings.gate)
                acc = evaluate_accuracy(model, csr_list,
                                        data.test_texts, data.test_labels)
                updated = False
                if (settings.update_csr and model.use_csr_input
                        and not settings.supervised_only
                        and trigger.check(stats["qualifying_count"])):
                    q_texts, q_labels = _qualifying_samples(
                        model, csr_list, data.unlabeled_texts, settings.gate,
                        settings.csr_pool_cap,
                    )
                    csr_list = csr_mod.update_csr(
                        csr_list, data.labeled_texts, data.labeled_labels,
                        q_texts, q_labels, model, top_j=settings.top_j,
                        stopwords=stopwords,
                    )
                    state.csr_version = max(c.version for c in csr_list)
                    updated = True
                    if ckpt_dir:
                        model.save_checkpoint(
                            ckpt_dir / f"step{step}_v{state.csr_version}.pt",
                            csr_list,
                        )
                    stale_intervals = 0
                else:
                    stale_intervals += 1
                state.running_max = trigger.running_max
                write({
                    "step": step,
                    **step_stats,
                    **stats,
                    "test_accuracy": acc,
                    "csr_version": state.csr_version,
                    "csr_updated": updated,
                })
                if (settings.early_stop_patience is not None
                        and stale_intervals >= settings.early_stop_patience):
                    log.info("early stop at step %d (gate count plateau)", step)
                    break
    finally:
        if log_file:
            log_file.close()
    if ckpt_dir:
        model.save_checkpoint(ckpt_dir / "final.pt", csr_list)
    return csr_list, records
