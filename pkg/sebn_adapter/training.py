import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import anyio
import numpy as np
from loguru import logger

from .adapters import apply_policy, bn_stats_refresh, bn_train_layers, refresh_layers
from .autograd import Tensor, reshape
from .config import ExperimentConfig
from .corpus import Corpus, Utterance
from .errors import ContractError, CorpusError
from .losses import AAMHead, GE2EParams, aam_softmax_loss, ge2e_loss, margin_at
from .model import ParameterStore, embed_batch, init_params
from .model.network import BNMode
from .types import AdaptPolicy, ModelConfig
from .utils import format_count, rng

LOG_FIELDS = ("phase", "epoch", "step", "lr", "margin", "loss")


class Adam:
    def __init__(
        self,
        tensors: Dict[str, Tensor],
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.tensors = tensors
        self.betas = betas
        self.eps = eps
        self.steps = 0
        self.m = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in tensors.items()}

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def step(self, lr: float):
        self.steps += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.steps
        c2 = 1 - b2**self.steps
        for k, t in self.tensors.items():
            if t.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * t.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * t.grad * t.grad
            update = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            t.data -= update.astype(t.dtype)


def warmup_lr(step: int, total_steps: int, base_lr: float, warmup: float) -> float:
    """Linear ramp to `base_lr` over the first `warmup` fraction of the steps."""
    if (ramp := math.ceil(warmup * total_steps)) <= 0 or step >= ramp:
        return base_lr
    return base_lr * (step + 1) / ramp


@dataclass
class LossRecord:
    phase: str
    epoch: int
    step: int
    lr: float
    margin: float
    loss: float


@dataclass
class TrainResult:
    params: ParameterStore
    log: List[LossRecord] = field(default_factory=list)
    trainable: int = 0
    ge2e: Optional[GE2EParams] = None

    @property
    def first_loss(self) -> float:
        return self.log[0].loss

    @property
    def last_loss(self) -> float:
        return self.log[-1].loss


def crop(gen: np.random.Generator, features: np.ndarray, frames: int) -> np.ndarray:
    total = features.shape[1]
    if total < frames:
        raise CorpusError(f"utterance of {total} frames is shorter than a {frames}-frame segment")
    start = int(gen.integers(0, total - frames + 1))
    return features[:, start : start + frames]


def _check_features(corpus: Corpus, cfg: ModelConfig):
    if corpus.mel_bins != cfg.mel_bins:
        raise CorpusError(
            f"corpus has {corpus.mel_bins} frequency bins, model expects {cfg.mel_bins}",
        )


def classification_batches(
    gen: np.random.Generator,
    utterances: Sequence[Utterance],
    labels: Sequence[int],
    batch_size: int,
    frames: int,
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    order = gen.permutation(len(utterances))
    for start in range(0, len(order), batch_size):
        index = order[start : start + batch_size]
        x = np.stack([crop(gen, utterances[i].features, frames) for i in index])
        yield x[:, None], np.asarray([labels[i] for i in index])


def speaker_batches(
    gen: np.random.Generator,
    grouped: Dict[int, List[Utterance]],
    speakers_per_batch: int,
    utts_per_speaker: int,
    frames: int,
) -> Iterator[np.ndarray]:
    """One epoch of (P*M, 1, F, frames) GE2E batches, speaker-major order."""
    speakers = sorted(grouped)
    order = gen.permutation(len(speakers))
    for start in range(0, len(order) - speakers_per_batch + 1, speakers_per_batch):
        segments = []
        for i in order[start : start + speakers_per_batch]:
            utts = grouped[speakers[i]]
            picks = gen.choice(len(utts), size=utts_per_speaker, replace=False)
            segments.extend(crop(gen, utts[j].features, frames) for j in picks)
        yield np.stack(segments)[:, None]


def ge2e_shape(grouped: Dict[int, List[Utterance]], config: ExperimentConfig) -> Tuple[int, int]:
    if (fewest := min(len(x) for x in grouped.values())) < 2:
        raise CorpusError("every speaker needs at least 2 utterances for GE2E batches")
    p = min(config.train.ge2e_speakers, len(grouped))
    if p < 2:
        raise CorpusError(f"GE2E batches need at least 2 speakers, data has {len(grouped)}")
    return p, min(config.train.ge2e_utts, fewest)


def _ge2e_step(
    x: np.ndarray,
    shape: Tuple[int, int],
    cfg: ModelConfig,
    params: ParameterStore,
    ge2e: GE2EParams,
    mode: BNMode,
) -> Tensor:
    emb = embed_batch(Tensor(x), cfg, params, mode)
    return ge2e_loss(reshape(emb, (*shape, cfg.embedding_dim)), ge2e)


def pretrain(corpus: Corpus, config: ExperimentConfig) -> TrainResult:
    """Trains a fresh model on the `pretrain` split."""
    cfg, train, loss_cfg = config.model, config.train, config.loss
    data = corpus.select(split="pretrain")
    if not len(data):
        raise CorpusError("corpus has no pretrain split")
    _check_features(data, cfg)

    speakers = data.speakers()
    if loss_cfg.name == "aam" and cfg.num_classes != len(speakers):
        raise CorpusError(
            f"model.num_classes ({cfg.num_classes}) must equal "
            f"the {len(speakers)} pretraining speakers",
        )

    params = init_params(cfg, train.seed)
    gen = rng(train.seed, "pretrain")
    label_of = {s: i for i, s in enumerate(speakers)}
    utts = data.utterances
    labels = [label_of[u.speaker] for u in utts]

    ge2e = None
    tensors = {k: params[k] for k in params.trainable_names()}
    if loss_cfg.name == "ge2e":
        grouped = data.by_speaker()
        shape = ge2e_shape(grouped, config)
        ge2e = GE2EParams.create(loss_cfg.ge2e_w_init, loss_cfg.ge2e_b_init)
        tensors.update({"ge2e.w": ge2e.w, "ge2e.b": ge2e.b})
        steps_per_epoch = len(grouped) // shape[0]
    else:
        steps_per_epoch = math.ceil(len(utts) / train.batch_size)

    adam = Adam(tensors, train.betas)
    total = train.epochs * steps_per_epoch
    result = TrainResult(params, trainable=params.count(lambda n: n in tensors), ge2e=ge2e)
    logger.info(
        f"Pretraining on {len(utts)} utterances of {len(speakers)} speakers, "
        f"{train.epochs} epochs x {steps_per_epoch} steps, "
        f"{format_count(result.trainable)} parameters",
    )

    step = 0
    for epoch in range(train.epochs):
        margin = margin_at(epoch, train.epochs, loss_cfg.margin, loss_cfg.margin_ramp)
        if ge2e is not None:
            batches = (
                (x, None)
                for x in speaker_batches(gen, grouped, *shape, train.segment_frames)
            )
        else:
            batches = classification_batches(
                gen,
                utts,
                labels,
                train.batch_size,
                train.segment_frames,
            )

        losses = []
        for x, y in batches:
            lr = warmup_lr(step, total, train.lr, train.warmup)
            adam.zero_grad()
            if ge2e is None:
                head = AAMHead(params["head.w"], margin, loss_cfg.scale)
                loss = aam_softmax_loss(embed_batch(Tensor(x), cfg, params, "train"), y, head)
            else:
                loss = _ge2e_step(x, shape, cfg, params, ge2e, "train")
            loss.backward()
            adam.step(lr)
            if ge2e is not None:
                ge2e.clamp()

            losses.append(loss.item())
            result.log.append(LossRecord("pretrain", epoch, step, lr, margin, loss.item()))
            logger.debug(f"pretrain step {step}: loss {loss.item():.4f} lr {lr:.2e}")
            step += 1

        logger.info(f"Epoch {epoch + 1}/{train.epochs}: mean loss {np.mean(losses):.4f}")
    return result


def adapt(
    params: ParameterStore,
    cfg: ModelConfig,
    corpus: Corpus,
    config: ExperimentConfig,
    policy: Optional[AdaptPolicy] = None,
) -> TrainResult:
    """GE2E adaptation of `params` on the dev utterances of `corpus`, in place."""
    policy = policy or config.adapt
    train = config.train
    dev = corpus.select(split="dev")
    if not len(dev):
        raise CorpusError("corpus has no dev split to adapt on")
    _check_features(dev, cfg)

    apply_policy(params, policy)
    grouped = dev.by_speaker()
    shape = ge2e_shape(grouped, config)
    ge2e = GE2EParams.create(config.loss.ge2e_w_init, config.loss.ge2e_b_init)

    tensors = {k: params[k] for k in params.trainable_names()}
    trainable = params.count(lambda n: n in tensors)
    tensors.update({"ge2e.w": ge2e.w, "ge2e.b": ge2e.b})

    fine_tune = policy.mode == "fine_tune"
    lr = train.adapt_lr if fine_tune else train.adapter_lr
    layers = bn_train_layers(params, policy)
    mode: BNMode = "train" if fine_tune else frozenset(layers)
    snapshot = {k: v.copy() for k, v in params.buffers()}
    refresh = [] if fine_tune or not policy.bn_stats_refresh else refresh_layers(params, policy)

    def full_utterances():
        return (u.features[None, None] for u in dev)

    # frozen layers inside the policy then normalize with target statistics while training
    if refresh:
        bn_stats_refresh(params, cfg, full_utterances(), refresh)

    adam = Adam(tensors, train.betas)
    gen = rng(train.seed, "adapt", policy.tag)
    steps_per_epoch = len(grouped) // shape[0]
    total = train.adapt_epochs * steps_per_epoch
    result = TrainResult(params, trainable=trainable, ge2e=ge2e)
    logger.info(
        f"Adapting with {policy.tag}: {trainable} ({format_count(trainable)}) trainable "
        f"parameters, {len(grouped)} speakers, batches of {shape[0]}x{shape[1]}",
    )

    step = 0
    for epoch in range(train.adapt_epochs):
        for x in speaker_batches(gen, grouped, *shape, train.segment_frames):
            rate = warmup_lr(step, total, lr, train.warmup)
            adam.zero_grad()
            loss = _ge2e_step(x, shape, cfg, params, ge2e, mode)
            loss.backward()
            adam.step(rate)
            ge2e.clamp()

            result.log.append(LossRecord("adapt", epoch, step, rate, 0.0, loss.item()))
            logger.debug(f"adapt step {step}: loss {loss.item():.4f}")
            step += 1

    if not fine_tune:
        for k, v in snapshot.items():
            params.buffer(k)[...] = v
        if refresh:
            bn_stats_refresh(params, cfg, full_utterances(), refresh)
    if not result.log:
        raise ContractError("adaptation ran no steps")
    logger.info(f"Adaptation loss {result.first_loss:.4f} -> {result.last_loss:.4f}")
    return result


def format_loss_log(log: Sequence[LossRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LOG_FIELDS)
    for r in log:
        writer.writerow(
            [r.phase, r.epoch, r.step, f"{r.lr:.6g}", f"{r.margin:.4f}", f"{r.loss:.6f}"],
        )
    return buffer.getvalue()


async def write_loss_log(log: Sequence[LossRecord], path: Union[str, Path]):
    await anyio.Path(path).write_text(format_loss_log(log), encoding="u8")
