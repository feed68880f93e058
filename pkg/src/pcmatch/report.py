"""Result rendering: method-by-budget accuracy grids as delimited text,
line plots for sweeps and ablations as image files, and before/after class
word-list comparisons."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .csr import ClassSemanticRepresentation
from .experiments import RunResult

MISSING = "—"


def accuracy_grid(results: list[RunResult], path: str | Path) -> None:
    """method × labels-per-class grid, cells formatted "mean±sem" with two
    decimals; absent cells render as an em dash, never zero."""
    methods = sorted({r.method for r in results})
    budgets = sorted({r.n_per_class for r in results})
    cells = {(r.method, r.n_per_class): r.cell() for r in results}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method"] + [str(n) for n in budgets])
        for m in methods:
            writer.writerow([m] + [cells.get((m, n), MISSING) for n in budgets])


def plot_sweep(pool_sizes: list[int], results: list[RunResult],
               path: str | Path, title: str = "Accuracy vs unlabeled pool size"
               ) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    means = [r.mean for r in results]
    ax.plot(pool_sizes, means, marker="o")
    sems = [r.sem for r in results]
    if all(s is not None for s in sems):
        lo = [m - s for m, s in zip(means, sems)]
        hi = [m + s for m, s in zip(means, sems)]
        ax.fill_between(pool_sizes, lo, hi, alpha=0.2)
    ax.set_xlabel("unlabeled pool size")
    ax.set_ylabel("test accuracy (%)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_method_comparison(results: list[RunResult], path: str | Path,
                           title: str = "Method comparison") -> None:
    """One line per method over the labels-per-class grid; single-budget
    inputs degrade to point markers."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    methods = sorted({r.method for r in results})
    for m in methods:
        rows = sorted((r for r in results if r.method == m),
                      key=lambda r: r.n_per_class)
        ax.plot([r.n_per_class for r in rows], [r.mean for r in rows],
                marker="o", label=m)
    ax.set_xlabel("labels per class")
    ax.set_ylabel("test accuracy (%)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def csr_word_report(initial: list[ClassSemanticRepresentation],
                    final: list[ClassSemanticRepresentation],
                    path: str | Path, top_n: int = 20) -> None:
    """Juxtapose version-0 and final word lists per class."""
    lines = []
    for init_c, final_c in zip(initial, final):
        lines.append(f"class {init_c.class_id}")
        lines.append("  initial: " + ", ".join(init_c.word_list()[:top_n]))
        lines.append(f"  final (v{final_c.version}): "
                     + ", ".join(final_c.word_list()[:top_n]))
        lines.append("")
    Path(path).write_text("\n".join(lines))


def write_report(results: list[RunResult], outdir: str | Path,
                 sweep: tuple[list[int], list[RunResult]] | None = None,
                 csr_pair: tuple[list, list] | None = None) -> list[Path]:
    """Emit every applicable artifact into ``outdir``; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if results:
        grid = outdir / "accuracy_grid.csv"
        accuracy_grid(results, grid)
        written.append(grid)
        fig = outdir / "method_comparison.png"
        plot_method_comparison(results, fig)
        written.append(fig)
    if sweep:
        pool_sizes, sweep_results = sweep
        fig = outdir / "unlabeled_sweep.png"
        plot_sweep(pool_sizes, sweep_results, fig)
        written.append(fig)
        table = outdir / "unlabeled_sweep.csv"
        with open(table, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["pool_size", "accuracy"])
            for size, r in zip(pool_sizes, sweep_results):
                writer.writerow([size, r.cell()])
        written.append(table)
    if csr_pair:
        path = outdir / "csr_words.txt"
        csr_word_report(csr_pair[0], csr_pair[1], path)
        written.append(path)
    return written
