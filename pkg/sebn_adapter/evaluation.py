"""Enrollment, cross-paired trials, cosine scoring and EER."""

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import anyio
import numpy as np
from loguru import logger

from . import kv_parser
from .autograd import Tensor, no_grad
from .corpus import Corpus, Utterance
from .errors import ContractError, TrialError
from .model import ParameterStore, embed_batch
from .types import ModelConfig, ResultRow, TrialRecord
from .utils import format_eer, gather_ordered

RESULT_FIELDS = ("method", "n_params", "domain", "n_speakers", "seed", "eer")

PathLike = Union[str, Path]


@dataclass
class Enrollment:
    speaker: int
    vector: np.ndarray
    """Unit-norm speaker model"""


def _unit(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not (norm := float(np.linalg.norm(x))) > 0:
        raise ContractError(f"{what} has zero norm")
    return x / norm


def enroll(speaker: int, embeddings: Sequence[np.ndarray]) -> Enrollment:
    """Re-normalized mean of the normalized embeddings."""
    if not len(embeddings):
        raise ContractError(f"speaker {speaker} has no enrollment utterances")
    mean = np.mean([_unit(e, f"embedding of speaker {speaker}") for e in embeddings], axis=0)
    return Enrollment(speaker, _unit(mean, f"enrollment of speaker {speaker}"))


def enroll_corpus(dev: Corpus, embeddings: Mapping[str, np.ndarray]) -> Dict[int, Enrollment]:
    try:
        return {
            speaker: enroll(speaker, [embeddings[u.id] for u in utts])
            for speaker, utts in sorted(dev.by_speaker().items())
        }
    except KeyError as e:
        raise TrialError(f"no embedding for dev utterance {e.args[0]}") from e


def cross_pair_trials(
    enrollments: Iterable[int],
    test: Sequence[Utterance],
) -> List[TrialRecord]:
    """One trial per (enrolled speaker, test utterance), target iff speakers match."""
    speakers = list(enrollments)
    return [
        TrialRecord(speaker=s, utterance=u.id, target=s == u.speaker)
        for s in speakers
        for u in test
    ]


def score_trials(
    trials: Sequence[TrialRecord],
    enrollments: Mapping[int, Enrollment],
    embeddings: Mapping[str, np.ndarray],
) -> List[TrialRecord]:
    seen = set()
    scored = []
    for trial in trials:
        if (key := (trial.speaker, trial.utterance)) in seen:
            raise TrialError(f"trial {trial.speaker} {trial.utterance} listed twice")
        seen.add(key)
        if trial.speaker not in enrollments:
            raise TrialError(f"speaker {trial.speaker} is not enrolled")
        if trial.utterance not in embeddings:
            raise TrialError(f"no embedding for test utterance {trial.utterance}")

        test = _unit(embeddings[trial.utterance], f"embedding of {trial.utterance}")
        score = float(np.clip(enrollments[trial.speaker].vector @ test, -1.0, 1.0))
        scored.append(trial.model_copy(update={"score": score}))
    return scored


def eer_from_scores(targets: Sequence[float], nontargets: Sequence[float]) -> float:
    """Crossing of FAR(t) = P(nontarget >= t) and FRR(t) = P(target < t).

    Thresholds sweep the sorted unique scores plus +inf; between the last
    operating point with FAR > FRR and the first with FAR <= FRR both rates are
    interpolated linearly.
    """
    tgt = np.sort(np.asarray(targets, dtype=np.float64))
    non = np.sort(np.asarray(nontargets, dtype=np.float64))
    if not (tgt.size and non.size):
        raise TrialError("EER needs at least one target and one nontarget trial")
    if not (np.all(np.isfinite(tgt)) and np.all(np.isfinite(non))):
        raise TrialError("EER needs finite scores")

    thresholds = np.append(np.unique(np.concatenate([tgt, non])), np.inf)
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    frr = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    diff = far - frr

    i = int(np.argmax(diff <= 0))
    if diff[i] == 0 or i == 0:
        return float(far[i])
    ratio = diff[i - 1] / (diff[i - 1] - diff[i])
    return float(far[i - 1] + ratio * (far[i] - far[i - 1]))


def eer(trials: Iterable[TrialRecord]) -> float:
    targets, nontargets = [], []
    for trial in trials:
        if trial.score is None:
            raise TrialError(f"trial {trial.speaker} {trial.utterance} has no score")
        (targets if trial.target else nontargets).append(trial.score)
    return eer_from_scores(targets, nontargets)


async def extract_embeddings(
    utterances: Sequence[Utterance],
    cfg: ModelConfig,
    params: ParameterStore,
    workers: int = 4,
) -> Dict[str, np.ndarray]:
    """Eval-mode embeddings keyed by utterance id, computed on a thread pool.

    Utterances of equal length share one batch; eval-mode BN and pooling are
    per sample, so batching does not change any embedding.
    """
    by_length: Dict[int, List[Utterance]] = {}
    for u in utterances:
        by_length.setdefault(u.frames, []).append(u)
    batches = list(by_length.values())

    def embed_same_length(batch: List[Utterance]) -> np.ndarray:
        x = np.stack([u.features for u in batch])[:, None]
        return embed_batch(Tensor(x), cfg, params, "eval").data

    with no_grad():
        outputs = await gather_ordered(embed_same_length, batches, workers)
    found = {u.id: v for batch, out in zip(batches, outputs) for u, v in zip(batch, out)}
    return {u.id: found[u.id] for u in utterances}


async def read_trials(path: PathLike) -> List[TrialRecord]:
    try:
        text = await anyio.Path(path).read_text(encoding="u8")
    except OSError as e:
        raise TrialError(f"cannot read trials {path}: {e.strerror}") from e
    return kv_parser.parse_trials(text)


async def write_trials(trials: Iterable[TrialRecord], path: PathLike):
    await anyio.Path(path).write_text(kv_parser.dump_trials(trials), encoding="u8")


def format_results(rows: Iterable[ResultRow], header: bool = True) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if header:
        writer.writerow(RESULT_FIELDS)
    for row in rows:
        writer.writerow(
            [
                row.method,
                row.n_params,
                row.domain,
                row.n_speakers,
                row.seed,
                format_eer(row.eer),
            ],
        )
    return buffer.getvalue()


async def write_results(rows: Iterable[ResultRow], path: PathLike, append: bool = False):
    """Writes the EER CSV; `append` adds rows under an existing header."""
    file = anyio.Path(path)
    rows = list(rows)
    if append and await file.exists():
        async with await anyio.open_file(path, "a", encoding="u8") as f:
            await f.write(format_results(rows, header=False))
    else:
        await file.write_text(format_results(rows), encoding="u8")
    for row in rows:
        logger.info(
            f"{row.method} on {row.domain} ({row.n_speakers} speakers, seed {row.seed}): "
            f"EER {format_eer(row.eer)}%",
        )


async def evaluate_corpus(
    params: ParameterStore,
    cfg: ModelConfig,
    corpus: Corpus,
    workers: int = 4,
    trials: Optional[Sequence[TrialRecord]] = None,
) -> Tuple[float, List[TrialRecord]]:
    """Enrolls every dev speaker, scores `trials` (cross-paired by default), returns EER."""
    dev, test = corpus.select(split="dev"), corpus.select(split="test")
    if not (len(dev) and len(test)):
        raise TrialError("evaluation needs both a dev (enroll) and a test split")

    embeddings = await extract_embeddings(dev.utterances + test.utterances, cfg, params, workers)
    enrollments = enroll_corpus(dev, embeddings)
    if trials is None:
        trials = cross_pair_trials(enrollments, test.utterances)
    scored = score_trials(trials, enrollments, embeddings)
    return eer(scored), scored
