"""End-to-end desk-scale experiment: pretrain once per seed, adapt per method and domain."""

from pathlib import Path
from statistics import median
from typing import Dict, List, Sequence, Tuple, Union

import anyio
from loguru import logger

from .adapters import trainable_names
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .const import SE_PLACEMENT
from .corpus import (
    SOURCE_DOMAIN,
    Corpus,
    build_corpus,
    domain_pool,
    make_low_resource_split,
)
from .data_source import write_corpus
from .evaluation import evaluate_corpus, write_results
from .training import TrainResult, adapt, pretrain, write_loss_log
from .types import AdaptPolicy, CheckpointMeta, ResultRow
from .utils import format_eer

METHODS = ("fine_tune", "se", "bn", "se_bn")

PathLike = Union[str, Path]


Summary = Tuple[str, str, int, float, int]


def summarize(rows: Sequence[ResultRow]) -> List[Summary]:
    """(method, domain, split speakers, median EER, seeds) per method, domain and split."""
    grouped: Dict[Tuple[str, str, int], List[float]] = {}
    for row in rows:
        grouped.setdefault((row.method, row.domain, row.n_speakers), []).append(row.eer)
    return [(m, d, s, median(v), len(v)) for (m, d, s), v in grouped.items()]


def format_summary(summary: Sequence[Summary]) -> str:
    lines = ["method,domain,n_speakers,median_eer,seeds"]
    lines.extend(f"{m},{d},{s},{format_eer(e)},{n}" for m, d, s, e, n in summary)
    return "\n".join(lines) + "\n"


def architecture_tag(use_se: bool) -> str:
    return "resnet34se" if use_se else "resnet34"


def sweep_policies(config: ExperimentConfig, methods: Sequence[str]) -> List[AdaptPolicy]:
    """Main methods over `adapt.groups`, then one SE row per swept group."""
    refresh = config.adapt.bn_stats_refresh
    policies = [
        AdaptPolicy(mode=m, groups=config.adapt.groups, bn_stats_refresh=refresh)
        for m in methods
    ]
    policies.extend(
        AdaptPolicy(mode="se", groups=(g,), bn_stats_refresh=refresh)
        for g in config.sweep.groups
    )
    return list({p.tag: p for p in policies}.values())


async def _score_domain(
    pretrained: TrainResult,
    config: ExperimentConfig,
    part: Corpus,
    policies: Sequence[AdaptPolicy],
    prefix: str,
) -> List[ResultRow]:
    cfg, seed = config.model, config.train.seed
    domain = part.domains[0]
    speakers = len(part.select(split="dev").speakers())

    def row(method: str, n_params: int, value: float) -> ResultRow:
        return ResultRow(
            method=prefix + method,
            n_params=n_params,
            domain=domain,
            n_speakers=speakers,
            seed=seed,
            eer=value,
        )

    value, _ = await evaluate_corpus(pretrained.params, cfg, part, config.eval.workers)
    rows = [row("pretrain", 0, value)]
    if domain == SOURCE_DOMAIN:
        return rows

    for policy in policies:
        if not trainable_names(pretrained.params, policy):
            logger.warning(f"Skipping {policy.tag}: the model has no parameters to adapt")
            continue
        adapted = adapt(pretrained.params.copy(), cfg, part, config, policy)
        value, _ = await evaluate_corpus(adapted.params, cfg, part, config.eval.workers)
        rows.append(row(policy.tag, adapted.trainable, value))
    return rows


async def _run_architecture(
    config: ExperimentConfig,
    corpus: Corpus,
    workdir: Path,
    methods: Sequence[str],
    save: bool,
    prefix: str,
) -> List[ResultRow]:
    cfg, data, seed = config.model, config.data, config.train.seed
    pretrained = pretrain(corpus, config)
    if save:
        name = f"pretrain-{prefix[:-1]}" if prefix else "pretrain"
        await save_checkpoint(
            workdir / f"{name}.ckpt",
            pretrained.params,
            CheckpointMeta(model=cfg, se_placement=SE_PLACEMENT),
        )
        await write_loss_log(pretrained.log, workdir / f"{name}_loss.csv")

    policies = sweep_policies(config, methods)
    rows: List[ResultRow] = []
    for domain in [SOURCE_DOMAIN, *data.domains]:
        part = corpus.select(domain=domain)
        rows.extend(await _score_domain(pretrained, config, part, policies, prefix))
        if domain == SOURCE_DOMAIN:
            continue

        default = len(part.select(split="dev").speakers())
        if not (sizes := [n for n in config.sweep.split_sizes if n != default]):
            continue
        pool = domain_pool(data, seed, cfg.mel_bins, domain)
        for n in sizes:
            dev, test = make_low_resource_split(pool, n, seed)
            split = Corpus().extend(dev).extend(test)
            rows.extend(await _score_domain(pretrained, config, split, policies, prefix))
    return rows


async def run_seed(
    config: ExperimentConfig,
    out: Path,
    methods: Sequence[str] = METHODS,
    save: bool = True,
) -> List[ResultRow]:
    seed = config.train.seed
    workdir = out / f"seed{seed}"
    await anyio.Path(workdir).mkdir(parents=True, exist_ok=True)

    corpus = build_corpus(config.data, seed, config.model.mel_bins)
    if save:
        await write_corpus(corpus, workdir / "data")

    rows: List[ResultRow] = []
    for use_se in config.sweep.use_se or (config.model.use_se,):
        variant = config.model_copy(
            update={
                "model": config.model.model_copy(
                    update={"num_classes": config.data.pretrain_speakers, "use_se": use_se},
                ),
            },
        )
        prefix = f"{architecture_tag(use_se)}/" if config.sweep.use_se else ""
        rows.extend(await _run_architecture(variant, corpus, workdir, methods, save, prefix))
    return rows


async def run_experiment(
    config: ExperimentConfig,
    out: PathLike,
    seeds: Sequence[int],
    methods: Sequence[str] = METHODS,
    save: bool = True,
) -> List[ResultRow]:
    out = Path(out)
    rows: List[ResultRow] = []
    for seed in seeds:
        logger.info(f"Experiment seed {seed}")
        seeded = config.model_copy(
            update={"train": config.train.model_copy(update={"seed": seed})},
        )
        rows.extend(await run_seed(seeded, out, methods, save))

    await write_results(rows, out / "results.csv")

    summary = summarize(rows)
    await anyio.Path(out / "summary.csv").write_text(format_summary(summary), encoding="u8")
    for method, domain, speakers, value, n in summary:
        logger.info(
            f"{method:>10} {domain:>6} ({speakers} speakers): "
            f"median EER {format_eer(value)}% over {n} seeds",
        )
    return rows
