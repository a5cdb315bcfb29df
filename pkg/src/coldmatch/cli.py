"""Command-line interface.

Subcommands: prepare, synth, train, evaluate, ablate, export-embeddings.
Global flags --config/--seed/--out apply to every command; any config key
can also be overridden with repeated --set key=value flags. Each artifact
embeds the fully resolved configuration (as '#'-prefixed lines) so every
output is reproducible from its own header. Exit codes: 0 success,
2 usage/config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import data as D
from . import encoder as enc
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (RunConfig, format_config, load_config, parse_config_text,
                     with_hyper)
from .errors import ColdmatchError, ConfigError, DataError, NumericError
from .trainer import (EVAL_CUTOFFS, evaluate, meta_train, oracle_scorer,
                      pipeline_from_checkpoint, random_scorer)

_SCORERS = {"model": None, "random": random_scorer, "oracle": oracle_scorer}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coldmatch",
        description="Few-shot matching for cold-start sequential recommendation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, metavar="PATH",
                        help="flat key = value config file")
    common.add_argument("--seed", type=int, default=None, help="master RNG seed")
    common.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default: out)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides", help="override any config key")

    p = sub.add_parser("prepare", parents=[common],
                       help="ingest a log and report split statistics")
    p.add_argument("data", help="interaction log (tsv)")
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a clustered synthetic interaction log")
    p.set_defaults(handler=cmd_synth)

    hyper_flags = argparse.ArgumentParser(add_help=False)
    hyper_flags.add_argument("--epochs", type=int, default=None)
    hyper_flags.add_argument("--dim", type=int, default=None)
    hyper_flags.add_argument("--k-shot", type=int, default=None)
    hyper_flags.add_argument("--t-steps", type=int, default=None)
    hyper_flags.add_argument("--learning-rate", type=float, default=None)

    p = sub.add_parser("train", parents=[common, hyper_flags],
                       help="meta-train a matcher")
    p.add_argument("data", help="interaction log (tsv)")
    p.add_argument("--variant", default=None,
                   choices=["full", "variant1", "variant2", "variant3"])
    p.add_argument("--embeddings", default=None, metavar="PATH",
                   help="warm-start item embeddings (text format)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="rank held-out queries against sampled negatives")
    p.add_argument("data", help="interaction log (tsv)")
    p.add_argument("--checkpoint", default=None, metavar="PATH")
    p.add_argument("--split", default=None, choices=["train", "valid", "test"])
    p.add_argument("--scorer", default=None, choices=["model", "random", "oracle"],
                   help="test hook: replace the model scorer")
    p.add_argument("--eval-seeds", type=int, default=None,
                   help="number of evaluation seeds (0..n-1)")
    p.add_argument("--query-limit", type=int, default=None,
                   help="cap per-seed query count (0 = no cap)")
    p.add_argument("--variant", default=None,
                   choices=["full", "variant1", "variant2", "variant3"])
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common, hyper_flags],
                       help="train and evaluate all ablation variants")
    p.add_argument("data", help="interaction log (tsv)")
    p.add_argument("--train-seeds", type=int, default=None,
                   help="seeds per variant (seed..seed+n-1, default 3)")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("export-embeddings", parents=[common],
                       help="export query representations grouped by target item")
    p.add_argument("data", help="interaction log (tsv)")
    p.add_argument("--checkpoint", default=None, metavar="PATH")
    p.add_argument("--items", type=int, default=None,
                   help="number of held-out items to export")
    p.add_argument("--queries", type=int, default=None,
                   help="queries per item (capped by pool size)")
    p.set_defaults(handler=cmd_export_embeddings)
    return parser


def _resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """(resolved config, set of keys explicitly given by file or flags)."""
    overrides: dict[str, str] = {}
    for text in args.overrides:
        if "=" not in text:
            raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
        key, value = text.split("=", 1)
        overrides[key.strip()] = value.strip()
    flag_map = {
        "seed": "seed", "out": "out", "variant": "variant", "epochs": "epochs",
        "dim": "dim", "k_shot": "k_shot", "t_steps": "t_steps",
        "learning_rate": "learning_rate", "embeddings": "embeddings",
        "checkpoint": "checkpoint", "split": "eval_split", "scorer": "scorer",
        "eval_seeds": "eval_seeds", "query_limit": "eval_query_limit",
        "items": "export_items", "queries": "export_queries",
        "train_seeds": "train_seeds",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "data", None) is not None:
        overrides["data"] = args.data
    explicit = set(overrides)
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                explicit |= set(parse_config_text(fh.read(), source=args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
    config = load_config(args.config, overrides)
    return config, explicit


def _ensure_out(config: RunConfig) -> str:
    os.makedirs(config.out, exist_ok=True)
    return config.out


def _config_comment(config: RunConfig) -> str:
    """Resolved config as comment lines; t_steps echoes the effective value."""
    shown = config
    if config.hyper.variant in ("variant2", "variant3"):
        shown = with_hyper(config, t_steps=0)
    return "".join(f"# {line}\n" for line in format_config(shown).splitlines())


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_sequences(config: RunConfig) -> list[D.InteractionSequence]:
    if not config.data:
        raise ConfigError("no data path given (positional DATA or 'data' config key)")
    if not os.path.exists(config.data):
        raise ConfigError(f"data path does not exist: {config.data}")
    return D.load_interactions(config.data)


def _prepare(config: RunConfig):
    sequences = _load_sequences(config)
    rng = np.random.default_rng(config.hyper.seed)
    return D.prepare_dataset(sequences, rng, max_len=config.max_prefix_len,
                             cold_fraction=config.cold_fraction,
                             ratios=config.ratios)


def cmd_prepare(config: RunConfig, explicit: set[str]) -> int:
    sequences = _load_sequences(config)
    vocab, splits = _prepare(config)
    pairs = [pair for seq in sequences
             for pair in D.augment(seq, max_len=config.max_prefix_len)]
    n_targets = len(D.count_targets(pairs))
    meta_pairs = sum(len(split.pools[item])
                     for split in (splits.train, splits.valid, splits.test)
                     for item in split.items)
    lines = [
        f"items_total = {len(vocab)}",
        f"target_items = {n_targets}",
        f"cold_items = {len(splits.cold_items)}",
        f"cold_fraction = {len(splits.cold_items) / n_targets:.2f}",
        f"pairs_total = {len(pairs)}",
        f"pretrain_pairs = {len(splits.pretrain_pairs)}",
        f"meta_pairs = {meta_pairs}",
        f"meta_pair_proportion = {meta_pairs / len(pairs):.4f}",
        f"split_train_items = {len(splits.train.items)}",
        f"split_valid_items = {len(splits.valid.items)}",
        f"split_test_items = {len(splits.test.items)}",
        f"split_train_pairs = {sum(len(p) for p in splits.train.pools.values())}",
        f"split_valid_pairs = {sum(len(p) for p in splits.valid.pools.values())}",
        f"split_test_pairs = {sum(len(p) for p in splits.test.pools.values())}",
    ]
    report = _config_comment(config) + "\n".join(lines) + "\n"
    out = _ensure_out(config)
    _write_text(os.path.join(out, "prepare_summary.txt"), report)
    sys.stdout.write(report)
    return 0


def cmd_synth(config: RunConfig, explicit: set[str]) -> int:
    synth = D.SynthConfig(n_clusters=config.synth_clusters,
                          items_per_cluster=config.synth_items_per_cluster,
                          n_sequences=config.synth_sequences,
                          seq_len_range=(config.synth_len_min, config.synth_len_max),
                          within_cluster_prob=config.synth_within_prob,
                          markov_prob=config.synth_markov_prob,
                          niche_clusters=config.synth_niche_clusters,
                          niche_share=config.synth_niche_share,
                          hub_items=config.synth_hub_items)
    rng = np.random.default_rng(config.hyper.seed)
    sequences = D.synth_generate(synth, rng)
    out = _ensure_out(config)
    path = os.path.join(out, "synthetic.tsv")
    D.write_interactions(path, sequences)
    summary = (_config_comment(config)
               + f"sequences = {len(sequences)}\n"
               + f"items = {synth.n_items()}\n"
               + f"path = {path}\n")
    _write_text(os.path.join(out, "synth_summary.txt"), summary)
    sys.stdout.write(summary)
    return 0


def cmd_train(config: RunConfig, explicit: set[str]) -> int:
    vocab, splits = _prepare(config)
    hyper = config.hyper
    item_emb = None
    if config.embeddings:
        init_rng = np.random.default_rng(hyper.seed)
        item_emb = enc.load_pretrained_embeddings(config.embeddings, vocab,
                                                  hyper.dim, init_rng)
    result = meta_train(splits, vocab, hyper, item_emb=item_emb,
                        valid_query_limit=config.valid_query_limit,
                        log_fn=lambda line: print(line, flush=True))
    out = _ensure_out(config)
    ckpt_path = config.checkpoint or os.path.join(out, "model.ckpt")
    save_checkpoint(ckpt_path, result.checkpoint)

    rows = ["epoch\tmean_loss\tvalid_hr10\tbest_hr10"]
    rows += [f"{r.epoch}\t{r.mean_loss:.6f}\t{r.valid_hr10:.6f}\t{r.best_so_far:.6f}"
             for r in result.log]
    log_text = _config_comment(config) + "\n".join(rows) + "\n"
    _write_text(os.path.join(out, "train_log.tsv"), log_text)
    best = result.checkpoint.best_metric
    tail = f"best valid hr@10 {best:.6f}" if best is not None else "no epochs run"
    print(f"checkpoint written to {ckpt_path} ({tail})")
    return 0


def _eval_hyper(config: RunConfig, ckpt: Checkpoint, explicit: set[str]) -> RunConfig:
    """Evaluation settings: checkpoint hyper, explicit config keys override.

    Structural fields (dim, precision) always come from the checkpoint;
    protocol fields follow the checkpoint unless the user set them.
    """
    hyper = ckpt.hyper
    for key in ("n_eval", "k_shot", "t_steps", "seed", "variant"):
        if key in explicit:
            hyper = replace(hyper, **{key: getattr(config.hyper, key)})
    return replace(config, hyper=hyper)


def _load_pipeline(config: RunConfig, explicit: set[str]):
    path = config.checkpoint or os.path.join(config.out, "model.ckpt")
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint does not exist: {path}")
    ckpt = load_checkpoint(path)
    vocab, splits = _prepare(config)
    resolved = _eval_hyper(config, ckpt, explicit)
    pipeline = pipeline_from_checkpoint(ckpt, vocab, variant=resolved.hyper.variant)
    return resolved, pipeline, splits


def cmd_evaluate(config: RunConfig, explicit: set[str]) -> int:
    resolved, pipeline, splits = _load_pipeline(config, explicit)
    split = splits.split(resolved.eval_split)
    seeds = list(range(resolved.eval_seeds))
    report = evaluate(split, pipeline, resolved.hyper, seeds=seeds,
                      scorer=_SCORERS[resolved.scorer],
                      query_limit=resolved.eval_query_limit)
    per_seed_lines = [
        f"{name}[seed={seed}]\t{report.per_seed[name][i]:.6f}"
        for name in sorted(report.per_seed)
        for i, seed in enumerate(report.seeds)]
    text = (_config_comment(resolved) + report.to_text()
            + "\n".join(per_seed_lines) + "\n")
    out = _ensure_out(resolved)
    _write_text(os.path.join(out, "eval_report.txt"), text)
    _write_text(os.path.join(out, "eval_report.json"), report.to_json())
    sys.stdout.write(text)
    return 0


def cmd_ablate(config: RunConfig, explicit: set[str]) -> int:
    vocab, splits = _prepare(config)
    seeds = [config.hyper.seed + i for i in range(config.train_seeds)]
    table: dict[str, dict[str, float]] = {}
    out = _ensure_out(config)
    for variant in ("full", "variant1", "variant2", "variant3"):
        totals = {"hr@10": 0.0, "ndcg@10": 0.0, "mrr": 0.0}
        for seed in seeds:
            run_cfg = with_hyper(config, variant=variant, seed=seed)
            result = meta_train(splits, vocab, run_cfg.hyper,
                                valid_query_limit=config.valid_query_limit)
            pipeline = pipeline_from_checkpoint(result.checkpoint, vocab)
            report = evaluate(splits.test, pipeline, run_cfg.hyper, seeds=[0],
                              query_limit=config.eval_query_limit)
            for key in totals:
                totals[key] += report.metrics[key]
            print(f"{variant} seed={seed} test hr@10 {report.metrics['hr@10']:.6f}",
                  flush=True)
        table[variant] = {key: value / len(seeds) for key, value in totals.items()}
        sidecar = (f"# seeds = {','.join(str(s) for s in seeds)}\n"
                   + _config_comment(with_hyper(config, variant=variant)))
        _write_text(os.path.join(out, f"ablate_{variant}.config.txt"), sidecar)

    variants = ("full", "variant1", "variant2", "variant3")
    rows = ["metric\t" + "\t".join(variants)]
    for metric in ("hr@10", "ndcg@10", "mrr"):
        rows.append(metric + "\t"
                    + "\t".join(f"{table[v][metric]:.6f}" for v in variants))
    text = (_config_comment(config)
            + f"# seeds = {','.join(str(s) for s in seeds)}\n"
            + "\n".join(rows) + "\n")
    _write_text(os.path.join(out, "ablation.tsv"), text)
    sys.stdout.write(text)
    return 0


def cmd_export_embeddings(config: RunConfig, explicit: set[str]) -> int:
    resolved, pipeline, splits = _load_pipeline(config, explicit)
    split = splits.split(resolved.eval_split)
    rng = np.random.default_rng([resolved.hyper.seed, 0])
    eligible = [item for item in split.items if len(split.pools[item]) > 0]
    if len(eligible) < resolved.export_items:
        raise DataError(
            f"split '{split.name}' has {len(eligible)} items with queries; "
            f"cannot export {resolved.export_items}")
    picks = rng.choice(len(eligible), size=resolved.export_items, replace=False)
    chosen = sorted(eligible[i] for i in picks)

    labels: list[str] = []
    rows: list[np.ndarray] = []
    for item in chosen:
        pool = split.pools[item]
        take = min(len(pool), resolved.export_queries)
        idx = rng.choice(len(pool), size=take, replace=False)
        for i in sorted(idx):
            labels.append(item)
            rows.append(pipeline.query_repr(pool[i]).data)
    out = _ensure_out(resolved)
    path = os.path.join(out, "query_embeddings.txt")
    enc.write_embedding_file(path, labels, np.stack(rows))
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(_config_comment(resolved))
    print(f"wrote {len(rows)} query representations for {len(chosen)} items to {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config, explicit = _resolve_config(args)
        return args.handler(config, explicit)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ColdmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
