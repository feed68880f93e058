"""Report rendering (CSV grid + PNG figures) and the command-line surface."""

import csv
import json

import pytest
import torch

from pcmatch.cli import main
from pcmatch.csr import ClassSemanticRepresentation
from pcmatch.experiments import RunResult
from pcmatch.report import (
    MISSING,
    accuracy_grid,
    csr_word_report,
    plot_method_comparison,
    plot_sweep,
    write_report,
)


def result(method="pcm", n=10, mean=70.0, sem_=1.5, seeds=(0, 1)):
    return RunResult(
        method=method, n_per_class=n,
        per_seed_accuracy={s: mean for s in seeds},
        mean=mean, sem=sem_, config_hash="abc", config={},
    )


def csr_pair():
    a = [ClassSemanticRepresentation(k, [("init", 1.0, "labeled")],
                                     torch.zeros(4), 0) for k in range(2)]
    b = [ClassSemanticRepresentation(k, [("later", 1.0, "unlabeled")],
                                     torch.zeros(4), 3) for k in range(2)]
    return a, b


class TestReport:
    def test_grid_contents_and_missing_cells(self, tmp_path):
        out = tmp_path / "grid.csv"
        incomplete = RunResult(method="uda", n_per_class=10,
                               per_seed_accuracy={}, mean=float("nan"),
                               sem=None, config_hash="x", config={},
                               incomplete=True)
        accuracy_grid([result("pcm", 10, 72.5, 0.25),
                       result("pcm", 200, 88.0, 0.5), incomplete], out)
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["method", "10", "200"]
        grid = {r[0]: r[1:] for r in rows[1:]}
        assert grid["pcm"] == ["72.50±0.25", "88.00±0.50"]
        assert grid["uda"] == [MISSING, MISSING]

    def test_single_seed_cell_has_no_sem(self, tmp_path):
        out = tmp_path / "grid.csv"
        accuracy_grid([result(sem_=None, seeds=(0,))], out)
        rows = list(csv.reader(open(out)))
        assert rows[1][1] == "70.00"

    def test_plots_written(self, tmp_path):
        plot_sweep([100, 200], [result(), result(mean=75.0)],
                   tmp_path / "sweep.png")
        plot_method_comparison([result("pcm"), result("uda", mean=60.0)],
                               tmp_path / "cmp.png")
        for name in ("sweep.png", "cmp.png"):
            data = (tmp_path / name).read_bytes()
            assert data[:8] == b"\x89PNG\r\n\x1a\n"

    def test_csr_word_report(self, tmp_path):
        a, b = csr_pair()
        out = tmp_path / "words.txt"
        csr_word_report(a, b, out)
        text = out.read_text()
        assert "class 0" in text and "class 1" in text
        assert "initial: init" in text
        assert "final (v3): later" in text

    def test_write_report_bundle(self, tmp_path):
        paths = write_report([result()], tmp_path,
                             sweep=([100], [result()]), csr_pair=csr_pair())
        names = {p.name for p in paths}
        assert names == {"accuracy_grid.csv", "method_comparison.png",
                         "unlabeled_sweep.png", "unlabeled_sweep.csv",
                         "csr_words.txt"}
        assert all(p.exists() for p in paths)


MICRO_ARGS = [
    "--n-per-class", "2", "--seeds", "0", "--steps", "20",
    "--eval-every", "10", "--init-epochs", "1", "--unlabeled-cap", "12",
    "--max-len", "16", "--top-j", "5", "--head-hidden", "16",
    "--encoder-lr", "1e-3", "--head-lr", "1e-3",
    "--tiny-hidden", "32", "--tiny-heads", "2", "--tiny-vocab", "1024",
    "--tiny-word-init-std", "0",
]


class TestCli:
    def test_probe_writes_result_file(self, tmp_path):
        out = tmp_path / "probe.json"
        rc = main(["probe", "--text", "piano and violin on stage",
                   "--class-words", "music,sports", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert len(doc) == 1
        assert doc[0]["class_words"] == ["music", "sports"]
        assert len(doc[0]["cosine"]) == 2
        assert all(-1.0001 <= c <= 1.0001 for c in doc[0]["cosine"])
        assert len(doc[0]["best_class"]) == len(doc[0]["tokens"])

    def test_init_csr_snapshot(self, tmp_path):
        out = tmp_path / "csr.json"
        rc = main(["init-csr", *MICRO_ARGS, "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["version"] == 0
        assert len(doc["classes"]) == 4

    def test_train_and_report_round_trip(self, tmp_path, capsys):
        work = tmp_path / "runs"
        rc = main(["train", "--method", "bert-ft", *MICRO_ARGS,
                   "--workdir", str(work)])
        assert rc == 0
        assert "bert-ft (n=2):" in capsys.readouterr().out

        rep = tmp_path / "report"
        rc = main(["report", "--results", str(work), "--out", str(rep)])
        assert rc == 0
        assert (rep / "accuracy_grid.csv").exists()
        assert (rep / "method_comparison.png").exists()

    def test_ablate_structure(self, tmp_path, capsys):
        rc = main(["ablate", "--kind", "structure", *MICRO_ARGS,
                   "--workdir", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "pcm-semantic-only" in out and "pcm-matching-only" in out

    def test_sweep_writes_figure(self, tmp_path):
        rc = main(["sweep", "--method", "uda", "--pool-sizes", "8,12",
                   *MICRO_ARGS, "--workdir", str(tmp_path)])
        assert rc == 0
        sweeps = list(tmp_path.glob("sweep-*/unlabeled_sweep.png"))
        assert len(sweeps) == 1

    def test_failing_run_exits_nonzero(self, tmp_path, capsys):
        rc = main(["train", "--method", "pcm", "--corpus", "ag_news",
                   "--corpus-path", str(tmp_path / "missing.csv"),
                   "--test-path", str(tmp_path / "missing2.csv"),
                   *MICRO_ARGS, "--workdir", str(tmp_path / "runs")])
        assert rc == 1
        assert "FAILED" in capsys.readouterr().err
