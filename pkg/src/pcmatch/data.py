"""Corpus ingestion, class-balanced label subsampling, truncation policy,
augmentation-pair management, and the synthetic keyword-planted fixture used
for CPU-scale experiments."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# class counts for the benchmark corpora; truncation keeps the head except
# where noted
KNOWN_CORPORA = {
    "ag_news": 4,
    "dbpedia": 14,
    "yahoo_answers": 10,
    "imdb": 2,
}
TAIL_TRUNCATED = {"imdb"}


def truncation_policy(corpus_name: str | None) -> str:
    return "tail" if corpus_name in TAIL_TRUNCATED else "head"


@dataclass
class Corpus:
    name: str
    texts: list[str]
    labels: list[int] | None = None
    split: str = "train-labeled"

    @property
    def num_classes(self) -> int | None:
        return KNOWN_CORPORA.get(self.name)

    def __len__(self) -> int:
        return len(self.texts)


@dataclass
class AugmentedPair:
    original: str
    augmented: str
    source: str  # language tag or "fallback"


@dataclass
class SplitManifest:
    seed: int
    n_per_class: int
    labeled_indices: dict[int, list[int]]  # class -> indices
    unlabeled_indices: list[int]
    validation_indices: list[int]

    def all_labeled(self) -> list[int]:
        return sorted(i for idx in self.labeled_indices.values() for i in idx)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "seed": self.seed,
            "n_per_class": self.n_per_class,
            "labeled_indices": {str(k): v for k, v in self.labeled_indices.items()},
            "unlabeled_indices": self.unlabeled_indices,
            "validation_indices": self.validation_indices,
        }, indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "SplitManifest":
        d = json.loads(Path(path).read_text())
        return cls(
            seed=d["seed"],
            n_per_class=d["n_per_class"],
            labeled_indices={int(k): v for k, v in d["labeled_indices"].items()},
            unlabeled_indices=d["unlabeled_indices"],
            validation_indices=d["validation_indices"],
        )


def load_corpus(path: str | Path, name: str = "custom",
                split: str = "train-labeled", labeled: bool | None = None) -> Corpus:
    """Read a delimited-text file with a header of either (label, text) or
    (text). Label values must be integers in [0, K) when K is known."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        fields = [c.strip().lower() for c in reader.fieldnames]
        if "text" not in fields:
            raise ValueError(f"{path}: need a 'text' column, got {fields}")
        has_label = "label" in fields
        if labeled is None:
            labeled = has_label
        if labeled and not has_label:
            raise ValueError(f"{path}: split {split!r} requires a 'label' column")
        texts, labels, bad_rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip().lower(): v for k, v in row.items()}
            texts.append(row["text"])
            if labeled:
                try:
                    labels.append(int(row["label"]))
                except (TypeError, ValueError):
                    bad_rows.append(lineno)
    if not texts:
        raise ValueError(f"{path}: no data rows")
    if bad_rows:
        raise ValueError(f"{path}: non-integer labels on rows {bad_rows[:10]}")

    num_classes = KNOWN_CORPORA.get(name)
    if labeled and num_classes is not None:
        bad = [(i, y) for i, y in enumerate(labels) if not 0 <= y < num_classes]
        if bad:
            raise ValueError(
                f"{path}: labels outside [0, {num_classes}) on rows "
                f"{[i + 2 for i, _ in bad[:10]]}"
            )
    return Corpus(name=name, texts=texts, labels=labels if labeled else None,
                  split=split)


def subsample_labels(corpus: Corpus, n_per_class: int, seed: int,
                     num_classes: int | None = None,
                     validation_fraction: float = 0.1) -> SplitManifest:
    """Pick a class-balanced labeled set from a labeled training corpus; the
    remaining rows become the unlabeled pool (labels discarded), a fraction
    of which is held out as the unlabeled validation set."""
    if corpus.labels is None:
        raise ValueError("subsampling needs a labeled corpus")
    num_classes = num_classes or corpus.num_classes
    if num_classes is None:
        num_classes = max(corpus.labels) + 1
    rng = np.random.default_rng(seed)
    by_class = {k: [] for k in range(num_classes)}
    for i, y in enumerate(corpus.labels):
        by_class[y].append(i)

    labeled: dict[int, list[int]] = {}
    for k in range(num_classes):
        if len(by_class[k]) < n_per_class:
            raise ValueError(
                f"class {k} has only {len(by_class[k])} samples, "
                f"need {n_per_class}"
            )
        labeled[k] = sorted(rng.choice(by_class[k], size=n_per_class,
                                       replace=False).tolist())

    taken = {i for idx in labeled.values() for i in idx}
    pool = [i for i in range(len(corpus.texts)) if i not in taken]
    pool = list(rng.permutation(pool))
    n_val = int(round(validation_fraction * len(pool)))
    return SplitManifest(
        seed=seed,
        n_per_class=n_per_class,
        labeled_indices=labeled,
        unlabeled_indices=[int(i) for i in pool[n_val:]],
        validation_indices=[int(i) for i in pool[:n_val]],
    )


def truncate(tokens: list[str], corpus_name: str | None, max_len: int = 256,
             num_classes: int = 0) -> list[str]:
    """Apply the per-corpus truncation window to a token list. The budget
    reserves 3 special positions plus one slot per class."""
    budget = max_len - 3 - num_classes
    if len(tokens) <= budget:
        return list(tokens)
    if truncation_policy(corpus_name) == "tail":
        return tokens[-budget:]
    return tokens[:budget]


# ---------------------------------------------------------------------------
# Augmentation pairs
# ---------------------------------------------------------------------------

def load_augmentations(path: str | Path, unlabeled_texts: list[str]
                       ) -> list[AugmentedPair]:
    """Read pre-generated augmentations aligned row-for-row with the
    unlabeled pool. The file has a header with an ``augmented`` column and
    optionally a ``source`` column."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    if len(rows) != len(unlabeled_texts):
        raise ValueError(
            f"{path}: {len(rows)} augmentations for {len(unlabeled_texts)} "
            "unlabeled texts"
        )
    return [
        AugmentedPair(original=orig, augmented=row["augmented"],
                      source=row.get("source", "unknown"))
        for orig, row in zip(unlabeled_texts, rows)
    ]


def fallback_augment(text: str, seed: int, dropout: float = 0.1,
                     shuffle_window: int = 3) -> AugmentedPair:
    """Deterministic word-level perturbation for fixtures: drop at most
    ``dropout`` of the tokens, then shuffle within local windows."""
    rng = np.random.default_rng(seed)
    words = text.split()
    if dropout > 0 and len(words) > 1:
        keep = rng.random(len(words)) >= dropout
        kept = [w for w, k in zip(words, keep) if k]
        words = kept or words[:1]
    if shuffle_window > 1:
        out = []
        for i in range(0, len(words), shuffle_window):
            window = words[i : i + shuffle_window]
            out.extend(rng.permutation(window).tolist())
        words = out
    return AugmentedPair(original=text, augmented=" ".join(words),
                         source="fallback")


def fallback_augment_all(texts: list[str], seed: int, dropout: float = 0.1,
                         shuffle_window: int = 3) -> list[AugmentedPair]:
    return [fallback_augment(t, seed + i, dropout, shuffle_window)
            for i, t in enumerate(texts)]


# ---------------------------------------------------------------------------
# Synthetic keyword-planted fixture
# ---------------------------------------------------------------------------

def synthetic_topical_corpus(
    num_classes: int = 4,
    keywords_per_class: int = 40,
    texts_per_class: int = 120,
    keywords_per_text: int = 5,
    fillers_per_text: int = 0,
    seed: int = 7,
) -> Corpus:
    """Keyword-planted topical texts: each sentence draws a few words from
    its class's keyword inventory, optionally mixed with filler words that
    never repeat, so only the keywords carry class signal. Hard enough that
    a tiny labeled set sees only part of each inventory."""
    rng = np.random.default_rng(seed)
    inventories = [
        [f"c{k}word{i}" for i in range(keywords_per_class)]
        for k in range(num_classes)
    ]
    texts, labels = [], []
    filler_counter = 0
    for k in range(num_classes):
        for _ in range(texts_per_class):
            kws = rng.choice(inventories[k], size=keywords_per_text,
                             replace=False).tolist()
            # seed-prefixed so differently seeded corpora share no fillers
            fill = [f"fl{seed}x{filler_counter + i}"
                    for i in range(fillers_per_text)]
            filler_counter += fillers_per_text
            words = kws + fill
            rng.shuffle(words)
            texts.append(" ".join(words))
            labels.append(k)
    order = rng.permutation(len(texts))
    return Corpus(
        name="synthetic",
        texts=[texts[i] for i in order],
        labels=[labels[i] for i in order],
        split="train-labeled",
    )
