import argparse
import sys
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, Optional, Sequence

import anyio
from loguru import logger

from .adapters import PARAM_FILTERS, name_filter, param_table
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    build_config,
    build_model_config,
    load_config,
    load_env_config,
    read_config_tree,
)
from .const import SE_PLACEMENT
from .corpus import Corpus, build_corpus
from .data_source import read_corpus, write_corpus
from .errors import ConfigError, ContractError, CorpusError, UsageError
from .evaluation import evaluate_corpus, read_trials, write_results, write_trials
from .experiment import METHODS, run_experiment
from .model import init_params
from .types import AdaptPolicy, CheckpointMeta, ResultRow
from .training import adapt, pretrain, write_loss_log
from .utils import format_count, format_eer, parse_groups

Command = Callable[[argparse.Namespace], Awaitable[Any]]

COMMANDS: Dict[str, Command] = {}


def command(name: str):
    def deco(func: Command) -> Command:
        COMMANDS[name] = func
        return func

    return deco


def setup_logging(level: str):
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="<g>{time:HH:mm:ss}</g> | <lvl>{level:<7}</lvl> | {message}",
    )


def _config(args: argparse.Namespace, overrides: Optional[Dict[str, Dict[str, Any]]] = None):
    tree = read_config_tree(args.config) if getattr(args, "config", None) else {}
    for section, values in (overrides or {}).items():
        tree.setdefault(section, {}).update(
            {k: v for k, v in values.items() if v is not None},
        )
    return build_config(tree)


def pick_domain(corpus: Corpus, domain: Optional[str]) -> Corpus:
    """Dev/test utterances of `domain`, which may be omitted if only one has them."""
    pool = Corpus([u for u in corpus if u.split in ("dev", "test")])
    domains = pool.domains
    if domain is None:
        if len(domains) != 1:
            raise CorpusError(f"corpus holds several domains {domains}, pass --domain")
        domain = domains[0]
    if domain not in domains:
        raise CorpusError(f"no dev/test data for domain {domain}, corpus has {domains}")
    return pool.select(domain=domain)


@command("gen-data")
async def gen_data(args: argparse.Namespace):
    config = _config(
        args,
        {
            "train": {"seed": args.seed},
            "data": {
                "domains": args.domains,
                "pretrain_speakers": args.speakers,
                "heldout_speakers": args.speakers,
                "target_speakers": args.speakers,
                "pretrain_utts": args.utts,
                "target_utts": args.utts,
            },
            "model": {"mel_bins": args.mel_bins},
        },
    )
    corpus = build_corpus(config.data, config.train.seed, config.model.mel_bins)
    await write_corpus(corpus, args.out)


@command("pretrain")
async def pretrain_cmd(args: argparse.Namespace):
    config = load_config(args.config)
    corpus = await read_corpus(args.data)
    result = pretrain(corpus, config)

    await save_checkpoint(
        args.out_ckpt,
        result.params,
        CheckpointMeta(
            model=config.model,
            se_placement=SE_PLACEMENT,
            trainable_params=result.trainable,
        ),
    )
    log_path = args.loss_log or Path(args.out_ckpt).with_suffix(".loss.csv")
    await write_loss_log(result.log, log_path)
    logger.info(f"Training loss {result.first_loss:.4f} -> {result.last_loss:.4f}")


@command("adapt")
async def adapt_cmd(args: argparse.Namespace):
    config = load_config(args.config)
    policy = config.adapt.model_copy(
        update={
            k: v
            for k, v in {
                "mode": args.mode,
                "groups": tuple(parse_groups(args.groups)) if args.groups else None,
            }.items()
            if v is not None
        },
    )
    policy = AdaptPolicy.model_validate(policy.model_dump())

    params, meta = await load_checkpoint(args.ckpt)
    corpus = pick_domain(await read_corpus(args.data), args.domain)
    result = adapt(params, meta.model, corpus, config, policy)

    await save_checkpoint(
        args.out_ckpt,
        result.params,
        meta.model_copy(update={"method": policy.tag, "trainable_params": result.trainable}),
    )
    if args.loss_log:
        await write_loss_log(result.log, args.loss_log)


@command("evaluate")
async def evaluate_cmd(args: argparse.Namespace):
    params, meta = await load_checkpoint(args.ckpt)
    corpus = pick_domain(await read_corpus(args.data), args.domain)

    trials = await read_trials(args.trials) if args.trials else None
    value, scored = await evaluate_corpus(
        params,
        meta.model,
        corpus,
        args.workers or load_env_config().sebn_workers,
        trials,
    )
    if args.make_trials:
        unscored = [t.model_copy(update={"score": None}) for t in scored]
        await write_trials(unscored, args.make_trials)
    if args.scores:
        await write_trials(scored, args.scores)

    seed = args.seed if args.seed is not None else load_env_config().sebn_seed
    row = ResultRow(
        method=meta.method,
        n_params=meta.trainable_params,
        domain=corpus.domains[0],
        n_speakers=len(corpus.select(split="dev").speakers()),
        seed=0 if seed is None else seed,
        eer=value,
    )
    await write_results([row], args.out_csv, append=args.append)
    print(f"EER {format_eer(value)}%")


@command("count-params")
async def count_params_cmd(args: argparse.Namespace):
    if args.config:
        cfg = build_model_config(read_config_tree(args.config).get("model", {}))
    else:
        cfg = build_model_config({"preset": args.preset})

    groups = parse_groups(args.groups) if args.groups else None
    params = init_params(cfg, 0)
    rows = param_table(params, args.filter, groups)
    for row in rows:
        print(f"{row['scope']:<6} {row['params']:>12,d}  {row['rounded']:>8}")

    selected = params.count(name_filter(args.filter, groups))
    total = params.count()
    share = selected / total
    print(f"{selected} of {total} parameters ({share:.2%}, {format_count(total)} total)")


@command("experiment")
async def experiment_cmd(args: argparse.Namespace):
    seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
    if not seeds:
        raise ConfigError("--seeds needs at least one seed")
    config = _config(
        args,
        {
            "train": {"seed": seeds[0]},
            "sweep": {
                "groups": args.sweep_groups,
                "split_sizes": args.split_sizes,
                "use_se": args.use_se,
            },
        },
    )
    methods = [x.strip() for x in args.methods.split(",") if x.strip()]
    if unknown := [x for x in methods if x not in METHODS]:
        raise ConfigError(f"unknown methods {unknown}, expected some of {list(METHODS)}")
    await run_experiment(config, args.out, seeds, methods, save=not args.no_save)


class Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(
        prog="sebn",
        description="SE/BN adapters for low-resource speaker verification",
    )
    parser.add_argument("--log-level", help="overrides SEBN_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--domains", help="comma-separated target domains")
    p.add_argument("--speakers", type=int, help="speakers per corpus part")
    p.add_argument("--utts", type=int, help="utterances per speaker")
    p.add_argument("--mel-bins", type=int)

    p = sub.add_parser("pretrain", help="train a model with AAM-Softmax")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--loss-log", help="defaults to <out-ckpt>.loss.csv")

    p = sub.add_parser("adapt", help="adapt a checkpoint with GE2E on a dev split")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain")
    p.add_argument("--mode", choices=METHODS)
    p.add_argument("--groups", help="e.g. all, g1, 1,3")
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--loss-log")

    p = sub.add_parser("evaluate", help="score trials and write the EER CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain")
    trials = p.add_mutually_exclusive_group()
    trials.add_argument("--trials", help="trial list to score")
    trials.add_argument("--make-trials", help="write the cross-paired trial list here")
    p.add_argument("--scores", help="write the scored trial list here")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--append", action="store_true")
    p.add_argument("--seed", type=int, help="seed column of the CSV row")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("count-params", help="print parameter counts")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--preset", choices=("tiny", "paper"), default="tiny")
    source.add_argument("--config")
    p.add_argument("--filter", choices=list(PARAM_FILTERS), default="all")
    p.add_argument("--groups")

    p = sub.add_parser("experiment", help="pretrain, adapt with every method, evaluate")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--sweep-groups", help="extra SE rows per group, e.g. all or 1,3")
    p.add_argument("--split-sizes", help="extra split sizes, e.g. 50,100,200,400")
    p.add_argument("--use-se", help="architectures to pretrain, e.g. true,false")
    p.add_argument("--no-save", action="store_true", help="keep only the CSVs")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        env = load_env_config()
        setup_logging(args.log_level or env.sebn_log_level)
        anyio.run(COMMANDS[args.command], args)
    except Exception as e:
        if not isinstance(e, ContractError):
            logger.opt(exception=e).debug("Unexpected failure")
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
