"""Experiment harness: configuration with reference defaults, seeded runs
with config hashing, the method roster (two baselines, the full joint method,
and its ablation variants), the unlabeled-pool sweep, and aggregation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import csr as csr_mod
from .data import (
    Corpus,
    fallback_augment_all,
    load_augmentations,
    load_corpus,
    SplitManifest,
    subsample_labels,
    synthetic_topical_corpus,
    truncation_policy,
    KNOWN_CORPORA,
)
from .encoding import EncoderConfig, TransformerEncoder
from .model import DualHeadModel, HeadConfig
from .training import DataBundle, GateConfig, TrainSettings, train

log = logging.getLogger(__name__)

METHODS = (
    "bert-ft",
    "uda",
    "pcm",
    "pcm-no-csr-update",
    "pcm-semantic-only",
    "pcm-matching-only",
    "uda-dcdl",
)

# architecture and loop flags per method; everything else is shared
_METHOD_FLAGS = {
    "bert-ft": dict(use_csr_input=False, use_semantic=True, matching=None,
                    supervised_only=True, update_csr=False),
    "uda": dict(use_csr_input=False, use_semantic=True, matching=None,
                supervised_only=False, update_csr=False),
    "pcm": dict(use_csr_input=True, use_semantic=True, matching="csr",
                supervised_only=False, update_csr=True),
    "pcm-no-csr-update": dict(use_csr_input=True, use_semantic=True,
                              matching="csr", supervised_only=False,
                              update_csr=False),
    "pcm-semantic-only": dict(use_csr_input=True, use_semantic=True,
                              matching=None, supervised_only=False,
                              update_csr=True),
    "pcm-matching-only": dict(use_csr_input=True, use_semantic=False,
                              matching="csr", supervised_only=False,
                              update_csr=True),
    "uda-dcdl": dict(use_csr_input=False, use_semantic=True,
                     matching="pooled", supervised_only=False,
                     update_csr=False),
}


@dataclass
class ExperimentConfig:
    """All knobs of one run; defaults reproduce the reference settings
    (confidence thresholds 0.95/0.7, temperature 0.5, top-75 words, 128-wide
    tanh heads, learning rates 5e-6 encoder / 5e-4 heads, 256 max length)."""

    corpus: str = "synthetic"
    corpus_path: str | None = None
    test_path: str | None = None
    augmentation_path: str | None = None
    method: str = "pcm"
    n_per_class: int = 10
    seeds: tuple[int, ...] = (0, 1, 2)
    data_seed: int = 7

    confid1: float = 0.95
    confid2: float = 0.7
    temperature: float = 0.5
    top_j: int = 75
    head_hidden: int = 128
    encoder_lr: float = 5e-6
    head_lr: float = 5e-4
    init_encoder_lr: float | None = None  # CSR-init fine-tune; defaults to encoder_lr
    init_head_lr: float | None = None
    init_epochs: int = 20
    max_len: int = 256
    lambda_u: float = 1.0
    lambda_warmup: int = 0
    weight_decay: float = 0.01
    kl_direction: str = "target_to_pred"

    steps: int = 4000
    eval_every: int = 200
    labeled_batch: int = 4
    unlabeled_batch: int = 8
    unlabeled_cap: int | None = None
    validation_fraction: float = 0.1
    early_stop_patience: int | None = None

    encoder: str = "tiny"  # "tiny" or a pretrained checkpoint id
    cache_dir: str | None = None
    tiny_hidden: int = 128
    tiny_layers: int = 2
    tiny_heads: int = 4
    tiny_vocab: int = 8192
    tiny_dropout: float = 0.0
    tiny_init_std: float = 0.02
    tiny_word_init_std: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; one of {METHODS}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def replace(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs)


def sem(values: list[float]) -> float | None:
    """Standard error of the mean: sample standard deviation over sqrt(n)."""
    n = len(values)
    if n < 2:
        return None
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var) / math.sqrt(n)


@dataclass
class RunResult:
    method: str
    n_per_class: int
    per_seed_accuracy: dict[int, float]  # percent
    mean: float
    sem: float | None
    config_hash: str
    config: dict
    log_paths: dict[int, str] = field(default_factory=dict)
    per_seed_last_accuracy: dict[int, float] = field(default_factory=dict)
    incomplete: bool = False
    errors: dict[int, str] = field(default_factory=dict)

    def cell(self) -> str:
        if self.incomplete or not self.per_seed_accuracy:
            return "—"
        if self.sem is None:
            return f"{self.mean:.2f}"
        return f"{self.mean:.2f}±{self.sem:.2f}"

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2))


# ---------------------------------------------------------------------------
# Data and model assembly
# ---------------------------------------------------------------------------

def _load_train_test(config: ExperimentConfig) -> tuple[Corpus, Corpus, int]:
    if config.corpus == "synthetic":
        train_corpus = synthetic_topical_corpus(seed=config.data_seed)
        test_corpus = synthetic_topical_corpus(seed=config.data_seed + 1000,
                                               texts_per_class=50)
        return train_corpus, test_corpus, 4
    if not config.corpus_path or not config.test_path:
        raise ValueError("non-synthetic corpora need corpus_path and test_path")
    train_corpus = load_corpus(config.corpus_path, name=config.corpus)
    test_corpus = load_corpus(config.test_path, name=config.corpus, split="test")
    num_classes = KNOWN_CORPORA.get(config.corpus)
    if num_classes is None:
        num_classes = max(train_corpus.labels) + 1
    return train_corpus, test_corpus, num_classes


def prepare_data(config: ExperimentConfig, seed: int
                 ) -> tuple[DataBundle, int, SplitManifest]:
    """Build the per-seed split and augmentation-aligned data bundle."""
    train_corpus, test_corpus, num_classes = _load_train_test(config)
    manifest = subsample_labels(
        train_corpus, config.n_per_class, seed, num_classes=num_classes,
        validation_fraction=config.validation_fraction,
    )
    unlabeled_idx = manifest.unlabeled_indices
    if config.unlabeled_cap is not None:
        unlabeled_idx = unlabeled_idx[: config.unlabeled_cap]
    unlabeled_texts = [train_corpus.texts[i] for i in unlabeled_idx]

    if config.augmentation_path:
        pairs = load_augmentations(config.augmentation_path, unlabeled_texts)
    else:
        pairs = fallback_augment_all(unlabeled_texts, seed=config.data_seed)

    labeled_idx = manifest.all_labeled()
    bundle = DataBundle(
        labeled_texts=[train_corpus.texts[i] for i in labeled_idx],
        labeled_labels=[train_corpus.labels[i] for i in labeled_idx],
        unlabeled_texts=[p.original for p in pairs],
        augmented_texts=[p.augmented for p in pairs],
        validation_texts=[train_corpus.texts[i]
                          for i in manifest.validation_indices],
        test_texts=test_corpus.texts,
        test_labels=test_corpus.labels,
    )
    return bundle, num_classes, manifest


def build_encoder(config: ExperimentConfig):
    if config.encoder == "tiny":
        return TransformerEncoder(EncoderConfig(
            vocab_size=config.tiny_vocab,
            hidden_dim=config.tiny_hidden,
            num_layers=config.tiny_layers,
            num_heads=config.tiny_heads,
            dropout=config.tiny_dropout,
            init_std=config.tiny_init_std,
            word_init_std=config.tiny_word_init_std,
        ))
    from .encoding import PretrainedEncoder

    return PretrainedEncoder(config.encoder, cache_dir=config.cache_dir)


def build_model(config: ExperimentConfig, num_classes: int) -> DualHeadModel:
    flags = _METHOD_FLAGS[config.method]
    return DualHeadModel(
        build_encoder(config),
        num_classes,
        head_cfg=HeadConfig(hidden_size=config.head_hidden),
        use_semantic=flags["use_semantic"],
        matching=flags["matching"],
        use_csr_input=flags["use_csr_input"],
        max_len=config.max_len,
        keep=truncation_policy(config.corpus),
    )


def train_settings(config: ExperimentConfig, seed: int,
                   workdir: Path | None = None) -> TrainSettings:
    flags = _METHOD_FLAGS[config.method]
    return TrainSettings(
        steps=config.steps,
        labeled_batch=config.labeled_batch,
        unlabeled_batch=config.unlabeled_batch,
        encoder_lr=config.encoder_lr,
        head_lr=config.head_lr,
        lambda_u=config.lambda_u,
        lambda_warmup=config.lambda_warmup,
        weight_decay=config.weight_decay,
        gate=GateConfig(config.confid1, config.confid2, config.temperature),
        kl_direction=config.kl_direction,
        eval_every=config.eval_every,
        supervised_only=flags["supervised_only"],
        update_csr=flags["update_csr"],
        top_j=config.top_j,
        seed=seed,
        checkpoint_dir=str(workdir / f"seed{seed}" / "checkpoints") if workdir else None,
        log_path=str(workdir / f"seed{seed}" / "train_log.jsonl") if workdir else None,
        early_stop_patience=config.early_stop_patience,
    )


def run_seed(config: ExperimentConfig, seed: int,
             workdir: Path | None = None) -> dict:
    """One seeded end-to-end run; returns accuracies and artifact paths."""
    if workdir:
        (workdir / f"seed{seed}").mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    bundle, num_classes, manifest = prepare_data(config, seed)
    if workdir:
        manifest.to_json(workdir / f"seed{seed}" / "manifest.json")
    model = build_model(config, num_classes)
    flags = _METHOD_FLAGS[config.method]
    stopwords = csr_mod.load_stopwords()

    csr_list: list = []
    if flags["use_csr_input"]:
        csr_list = csr_mod.initialize_csr(
            bundle.labeled_texts, bundle.labeled_labels, model.encoder,
            num_classes, top_j=config.top_j, stopwords=stopwords,
            max_len=config.max_len, keep=truncation_policy(config.corpus),
            finetune_epochs=config.init_epochs,
            encoder_lr=config.init_encoder_lr or config.encoder_lr,
            head_lr=config.init_head_lr or config.head_lr,
        )
        if workdir:
            csr_mod.save_csr_snapshot(
                workdir / f"seed{seed}" / "csr_v0.json", csr_list
            )

    settings = train_settings(config, seed, workdir)
    csr_list, records = train(model, csr_list, bundle, settings, stopwords)
    if flags["use_csr_input"] and workdir:
        csr_mod.save_csr_snapshot(
            workdir / f"seed{seed}" / "csr_final.json", csr_list
        )

    # checkpoint selection: eval interval with the highest unlabeled-
    # validation gate count, later intervals winning ties; no gating
    # signal (pure supervised) falls back to the last interval
    best = max(records, key=lambda r: (r["qualifying_count"], r["step"]))
    return {
        "accuracy": best["test_accuracy"] * 100.0,
        "last_accuracy": records[-1]["test_accuracy"] * 100.0,
        "records": records,
        "log_path": settings.log_path,
        "csr_versions": [r["csr_version"] for r in records],
    }


def run_method(config: ExperimentConfig,
               workdir: str | Path | None = None) -> RunResult:
    """Run every seed in the config and aggregate mean and S.E.M."""
    workdir = Path(workdir) if workdir else None
    if workdir:
        workdir.mkdir(parents=True, exist_ok=True)
        (workdir / "config.json").write_text(
            json.dumps(config.to_dict() | {"hash": config.config_hash()},
                       indent=2)
        )
    per_seed, per_seed_last, log_paths, errors = {}, {}, {}, {}
    for seed in config.seeds:
        try:
            out = run_seed(config, seed, workdir)
        except Exception as exc:  # noqa: BLE001 - partial results are flagged
            log.exception("seed %d failed", seed)
            errors[seed] = f"{type(exc).__name__}: {exc}"
            continue
        per_seed[seed] = out["accuracy"]
        per_seed_last[seed] = out["last_accuracy"]
        if out["log_path"]:
            log_paths[seed] = out["log_path"]

    values = list(per_seed.values())
    result = RunResult(
        method=config.method,
        n_per_class=config.n_per_class,
        per_seed_accuracy=per_seed,
        mean=sum(values) / len(values) if values else float("nan"),
        sem=sem(values),
        config_hash=config.config_hash(),
        config=config.to_dict(),
        log_paths=log_paths,
        per_seed_last_accuracy=per_seed_last,
        incomplete=bool(errors),
        errors=errors,
    )
    if workdir:
        result.to_json(workdir / "result.json")
    return result


# ---------------------------------------------------------------------------
# Ablations and sweeps
# ---------------------------------------------------------------------------

def assert_parity(configs: list[ExperimentConfig]) -> None:
    """Methods under comparison must share everything except the method."""
    skip = {"method"}
    ref = {k: v for k, v in configs[0].to_dict().items() if k not in skip}
    for cfg in configs[1:]:
        other = {k: v for k, v in cfg.to_dict().items() if k not in skip}
        if other != ref:
            diff = {k for k in ref if ref[k] != other[k]}
            raise ValueError(f"configs differ beyond method: {sorted(diff)}")


def run_ablation_structure(config: ExperimentConfig,
                           workdir: str | Path | None = None
                           ) -> tuple[RunResult, RunResult]:
    """Single-head variants: semantic-only gates on its own confidence and
    drops the matching loss; matching-only drops the K-way head and
    predicts from matching scores."""
    workdir = Path(workdir) if workdir else None
    semantic = config.replace(method="pcm-semantic-only")
    matching = config.replace(method="pcm-matching-only")
    return (
        run_method(semantic, workdir / "semantic-only" if workdir else None),
        run_method(matching, workdir / "matching-only" if workdir else None),
    )


def run_ablation_csr_update(config: ExperimentConfig,
                            workdir: str | Path | None = None
                            ) -> tuple[RunResult, RunResult]:
    """Frozen initial class representations vs progressive updates."""
    workdir = Path(workdir) if workdir else None
    frozen = config.replace(method="pcm-no-csr-update")
    updated = config.replace(method="pcm")
    return (
        run_method(frozen, workdir / "frozen" if workdir else None),
        run_method(updated, workdir / "updated" if workdir else None),
    )


def run_ablation_dcdl(config: ExperimentConfig,
                      workdir: str | Path | None = None) -> RunResult:
    """Dual-classifier-dual-loss control: two heads and agreement gating on
    a plain input without class slots."""
    cfg = config.replace(method="uda-dcdl")
    assert_parity([config, cfg])
    return run_method(cfg, workdir)


def run_unlabeled_sweep(config: ExperimentConfig, pool_sizes: list[int],
                        workdir: str | Path | None = None) -> list[RunResult]:
    """Fix the labeled budget and vary the unlabeled pool cap."""
    workdir = Path(workdir) if workdir else None
    results = []
    for size in pool_sizes:
        cfg = config.replace(unlabeled_cap=size)
        sub = workdir / f"pool{size}" if workdir else None
        results.append(run_method(cfg, sub))
    return results
