"""Command-line entry points: probe, init-csr, train, ablate, sweep, report.

The cache directory for pretrained checkpoints can be set with the
``PCMATCH_CACHE_DIR`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import csr as csr_mod
from .experiments import (
    METHODS,
    ExperimentConfig,
    RunResult,
    run_ablation_csr_update,
    run_ablation_dcdl,
    run_ablation_structure,
    run_method,
    run_unlabeled_sweep,
)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    defaults = ExperimentConfig()
    p.add_argument("--corpus", default=defaults.corpus)
    p.add_argument("--corpus-path")
    p.add_argument("--test-path")
    p.add_argument("--augmentation-path")
    p.add_argument("--method", choices=METHODS, default=defaults.method)
    p.add_argument("--n-per-class", type=int, default=defaults.n_per_class)
    p.add_argument("--seeds", default="0,1,2",
                   help="comma-separated label-set seeds")
    p.add_argument("--confid1", type=float, default=defaults.confid1)
    p.add_argument("--confid2", type=float, default=defaults.confid2)
    p.add_argument("--temperature", type=float, default=defaults.temperature)
    p.add_argument("--top-j", type=int, default=defaults.top_j)
    p.add_argument("--head-hidden", type=int, default=defaults.head_hidden)
    p.add_argument("--encoder-lr", type=float, default=defaults.encoder_lr)
    p.add_argument("--head-lr", type=float, default=defaults.head_lr)
    p.add_argument("--init-epochs", type=int, default=defaults.init_epochs)
    p.add_argument("--max-len", type=int, default=defaults.max_len)
    p.add_argument("--lambda-u", type=float, default=defaults.lambda_u)
    p.add_argument("--lambda-warmup", type=int, default=defaults.lambda_warmup)
    p.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    p.add_argument("--kl-direction", default=defaults.kl_direction,
                   choices=["target_to_pred", "pred_to_target"])
    p.add_argument("--data-seed", type=int, default=defaults.data_seed)
    p.add_argument("--steps", type=int, default=defaults.steps)
    p.add_argument("--eval-every", type=int, default=defaults.eval_every)
    p.add_argument("--labeled-batch", type=int, default=defaults.labeled_batch)
    p.add_argument("--unlabeled-batch", type=int,
                   default=defaults.unlabeled_batch)
    p.add_argument("--unlabeled-cap", type=int)
    p.add_argument("--encoder", default=defaults.encoder,
                   help='"tiny" or a pretrained checkpoint id')
    p.add_argument("--tiny-hidden", type=int, default=defaults.tiny_hidden)
    p.add_argument("--tiny-layers", type=int, default=defaults.tiny_layers)
    p.add_argument("--tiny-heads", type=int, default=defaults.tiny_heads)
    p.add_argument("--tiny-vocab", type=int, default=defaults.tiny_vocab)
    p.add_argument("--tiny-dropout", type=float, default=defaults.tiny_dropout)
    p.add_argument("--tiny-word-init-std", type=float,
                   default=defaults.tiny_word_init_std)
    p.add_argument("--workdir", default="runs")


def _config_from_args(args) -> ExperimentConfig:
    return ExperimentConfig(
        corpus=args.corpus,
        corpus_path=args.corpus_path,
        test_path=args.test_path,
        augmentation_path=args.augmentation_path,
        method=args.method,
        n_per_class=args.n_per_class,
        seeds=tuple(int(s) for s in args.seeds.split(",") if s),
        confid1=args.confid1,
        confid2=args.confid2,
        temperature=args.temperature,
        top_j=args.top_j,
        head_hidden=args.head_hidden,
        encoder_lr=args.encoder_lr,
        head_lr=args.head_lr,
        init_epochs=args.init_epochs,
        max_len=args.max_len,
        lambda_u=args.lambda_u,
        lambda_warmup=args.lambda_warmup,
        weight_decay=args.weight_decay,
        kl_direction=args.kl_direction,
        data_seed=args.data_seed,
        steps=args.steps,
        eval_every=args.eval_every,
        labeled_batch=args.labeled_batch,
        unlabeled_batch=args.unlabeled_batch,
        unlabeled_cap=args.unlabeled_cap,
        encoder=args.encoder,
        cache_dir=os.environ.get("PCMATCH_CACHE_DIR"),
        tiny_hidden=args.tiny_hidden,
        tiny_layers=args.tiny_layers,
        tiny_heads=args.tiny_heads,
        tiny_vocab=args.tiny_vocab,
        tiny_dropout=args.tiny_dropout,
        tiny_word_init_std=args.tiny_word_init_std,
    )


def _print_result(result: RunResult) -> int:
    print(f"{result.method} (n={result.n_per_class}): {result.cell()} "
          f"[hash {result.config_hash}]")
    for seed, err in result.errors.items():
        print(f"  seed {seed} FAILED: {err}", file=sys.stderr)
    return 1 if result.incomplete else 0


def cmd_probe(args) -> int:
    if args.encoder == "tiny":
        from .encoding import TransformerEncoder

        encoder = TransformerEncoder()
    else:
        from .encoding import PretrainedEncoder

        encoder = PretrainedEncoder(args.encoder,
                                    cache_dir=os.environ.get("PCMATCH_CACHE_DIR"))
    class_words = args.class_words.split(",")
    results = []
    for text in args.text:
        res = csr_mod.probe_inherent_matching(text, class_words, encoder)
        results.append({"text": text, "class_words": class_words,
                        **res.to_dict()})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(results, indent=2))
    print(f"wrote {out}")
    return 0


def cmd_init_csr(args) -> int:
    from .experiments import build_encoder, prepare_data

    config = _config_from_args(args)
    seed = config.seeds[0]
    import torch

    torch.manual_seed(seed)
    bundle, num_classes, _ = prepare_data(config, seed)
    encoder = build_encoder(config)
    csr_list = csr_mod.initialize_csr(
        bundle.labeled_texts, bundle.labeled_labels, encoder, num_classes,
        top_j=config.top_j, max_len=config.max_len,
        finetune_epochs=config.init_epochs,
        encoder_lr=config.init_encoder_lr or config.encoder_lr,
        head_lr=config.init_head_lr or config.head_lr,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csr_mod.save_csr_snapshot(out, csr_list)
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    result = run_method(config, Path(args.workdir) / config.config_hash())
    return _print_result(result)


def cmd_ablate(args) -> int:
    config = _config_from_args(args)
    workdir = Path(args.workdir) / f"ablate-{args.kind}-{config.config_hash()}"
    if args.kind == "structure":
        results = list(run_ablation_structure(config, workdir))
    elif args.kind == "csr-update":
        results = list(run_ablation_csr_update(config, workdir))
    else:
        results = [run_ablation_dcdl(config, workdir)]
    return max(_print_result(r) for r in results)


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    pool_sizes = [int(s) for s in args.pool_sizes.split(",") if s]
    workdir = Path(args.workdir) / f"sweep-{config.config_hash()}"
    results = run_unlabeled_sweep(config, pool_sizes, workdir)
    from .report import write_report

    write_report([], workdir, sweep=(pool_sizes, results))
    return max(_print_result(r) for r in results)


def cmd_report(args) -> int:
    from .report import write_report

    results = []
    for root in args.results:
        for path in sorted(Path(root).rglob("result.json")):
            d = json.loads(path.read_text())
            d["per_seed_accuracy"] = {int(k): v
                                      for k, v in d["per_seed_accuracy"].items()}
            d["per_seed_last_accuracy"] = {
                int(k): v for k, v in d.get("per_seed_last_accuracy", {}).items()
            }
            d["log_paths"] = {int(k): v for k, v in d.get("log_paths", {}).items()}
            d["errors"] = {int(k): v for k, v in d.get("errors", {}).items()}
            results.append(RunResult(**d))
    csr_pair = None
    if args.csr_initial and args.csr_final:
        csr_pair = (csr_mod.load_csr_snapshot(args.csr_initial),
                    csr_mod.load_csr_snapshot(args.csr_final))
    written = write_report(results, args.out, csr_pair=csr_pair)
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcmatch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("probe", help="literal class-word matching probe")
    p.add_argument("--text", action="append", required=True)
    p.add_argument("--class-words", required=True,
                   help="comma-separated, one word per class")
    p.add_argument("--encoder", default="tiny")
    p.add_argument("--out", default="probe_result.json")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("init-csr", help="mine initial class word lists")
    _add_config_args(p)
    p.add_argument("--out", default="csr_v0.json")
    p.set_defaults(func=cmd_init_csr)

    p = sub.add_parser("train", help="run one method over all seeds")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run an ablation pair")
    _add_config_args(p)
    p.add_argument("--kind", choices=["structure", "csr-update", "dcdl"],
                   required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="vary the unlabeled pool size")
    _add_config_args(p)
    p.add_argument("--pool-sizes", default="500,1000,2000")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render tables and figures from results")
    p.add_argument("--results", nargs="+", default=["runs"])
    p.add_argument("--csr-initial")
    p.add_argument("--csr-final")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
