"""Deterministic synthetic multi-domain speaker corpus.

Frames of speaker `s` follow `x_t = A v_s + n_t`: a seed-derived mixing matrix
`A` (F x 16) applied to a standard-normal speaker latent plus AR(1) noise. A
`DomainSpec` then tilts, compresses, modulates and adds white noise.

Every random draw comes from `utils.rng(seed, ...)` keyed by what it produces,
so any utterance can be regenerated on its own.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from loguru import logger

from .config import DataConfig
from .const import (
    AR_INNOVATION_STD,
    AR_RHO,
    DEV_UTTS_MAX,
    FRAMES_RANGE,
    LATENT_DIM,
    LOW_RESOURCE_SIZES,
    TEST_UTTS_RANGE,
)
from .errors import CorpusError
from .types import DomainSpec, Split
from .utils import rng

SOURCE_DOMAIN = "source"
SPEAKER_BLOCK = 10000
"""Speaker-id stride between corpus parts, so ids never collide"""


def _source(bins: np.ndarray) -> DomainSpec:
    return DomainSpec(name="source", tilt=tuple(np.ones_like(bins)), noise_std=0.05)


# Target gains stay below 1: an overall level drop plus a per-bin slope.
def _int(bins: np.ndarray) -> DomainSpec:
    return DomainSpec(name="int", tilt=tuple(0.7 + 0.2 * bins), noise_std=0.2)


def _ent(bins: np.ndarray) -> DomainSpec:
    return DomainSpec(
        name="ent",
        tilt=tuple(0.8 - 0.3 * bins),
        noise_std=0.3,
        compress=0.5,
    )


def _live(bins: np.ndarray) -> DomainSpec:
    return DomainSpec(
        name="live",
        tilt=tuple(0.5 + 0.2 * np.sin(np.pi * bins)),
        noise_std=0.45,
        compress=0.8,
    )


def _sing(bins: np.ndarray) -> DomainSpec:
    return DomainSpec(
        name="sing",
        tilt=tuple(0.35 + 0.4 * bins),
        noise_std=0.5,
        compress=1.0,
        tremolo_rate=0.05,
        tremolo_depth=0.5,
    )


DOMAIN_PRESETS: Dict[str, Callable[[np.ndarray], DomainSpec]] = {
    "source": _source,
    "int": _int,
    "ent": _ent,
    "live": _live,
    "sing": _sing,
}
"""Preset builders over normalized bin positions in [0, 1]"""


def domain_preset(name: str, mel_bins: int) -> DomainSpec:
    if name not in DOMAIN_PRESETS:
        raise CorpusError(f"unknown domain {name}, expected one of {list(DOMAIN_PRESETS)}")
    return DOMAIN_PRESETS[name](np.linspace(0.0, 1.0, mel_bins))


def severity(domain: DomainSpec) -> float:
    """Scalar shift score; orders the presets source < int < ent < live < sing."""
    tilt = np.asarray(domain.tilt)
    return float(
        np.abs(tilt - 1).mean()
        + domain.noise_std
        + domain.compress / 2
        + domain.tremolo_depth,
    )


@dataclass
class Utterance:
    id: str  # noqa: A003
    speaker: int
    domain: str
    split: Split
    features: np.ndarray
    """(F, T) float32"""

    @property
    def frames(self) -> int:
        return self.features.shape[1]


@dataclass
class Corpus:
    utterances: List[Utterance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def mel_bins(self) -> int:
        if not self.utterances:
            raise CorpusError("empty corpus has no feature dimension")
        return self.utterances[0].features.shape[0]

    @property
    def domains(self) -> List[str]:
        return sorted({u.domain for u in self.utterances})

    def select(
        self,
        domain: Optional[str] = None,
        split: Optional[Split] = None,
    ) -> "Corpus":
        return Corpus(
            [
                u
                for u in self.utterances
                if (domain is None or u.domain == domain)
                and (split is None or u.split == split)
            ],
        )

    def speakers(self) -> List[int]:
        return sorted({u.speaker for u in self.utterances})

    def by_speaker(self) -> Dict[int, List[Utterance]]:
        grouped: Dict[int, List[Utterance]] = {}
        for u in self.utterances:
            grouped.setdefault(u.speaker, []).append(u)
        return grouped

    def extend(self, other: Iterable[Utterance]) -> "Corpus":
        self.utterances.extend(other)
        return self


def utterance_id(domain: str, speaker: int, index: int) -> str:
    return f"{domain}-spk{speaker:04d}-utt{index:03d}"


def mixing_matrix(seed: int, mel_bins: int, scale: float = 0.35) -> np.ndarray:
    gen = rng(seed, "mixing", mel_bins)
    return gen.standard_normal((mel_bins, LATENT_DIM)) * (scale / np.sqrt(LATENT_DIM))


def speaker_latent(seed: int, speaker: int) -> np.ndarray:
    return rng(seed, "speaker", speaker).standard_normal(LATENT_DIM)


def utterance_stream(seed: int, domain: str, speaker: int, index: int) -> np.random.Generator:
    return rng(seed, "utterance", domain, speaker, index)


def base_frames(
    gen: np.random.Generator,
    latent: np.ndarray,
    mixing: np.ndarray,
) -> np.ndarray:
    """Speaker mean plus stationary AR(1) noise, (F, T) with T in FRAMES_RANGE."""
    low, high = FRAMES_RANGE
    frames = int(gen.integers(low, high + 1))
    innovations = gen.standard_normal((mixing.shape[0], frames)) * AR_INNOVATION_STD

    noise = np.empty_like(innovations)
    noise[:, 0] = innovations[:, 0] / np.sqrt(1 - AR_RHO**2)
    for t in range(1, frames):
        noise[:, t] = AR_RHO * noise[:, t - 1] + innovations[:, t]
    return (mixing @ latent)[:, None] + noise


def apply_domain(x: np.ndarray, domain: DomainSpec, gen: np.random.Generator) -> np.ndarray:
    tilt = np.asarray(domain.tilt, dtype=np.float64)
    if tilt.shape != (x.shape[0],):
        raise CorpusError(
            f"domain {domain.name} has {tilt.size} tilt gains for {x.shape[0]} bins",
        )

    y = tilt[:, None] * x
    if domain.compress > 0:
        y = np.tanh(domain.compress * y) / domain.compress
    if domain.tremolo_rate > 0 and domain.tremolo_depth > 0:
        phase = gen.uniform(0, 2 * np.pi)
        t = np.arange(x.shape[1])
        y = y * (1 + domain.tremolo_depth * np.sin(2 * np.pi * domain.tremolo_rate * t + phase))
    if domain.noise_std > 0:
        y = y + domain.noise_std * gen.standard_normal(y.shape)
    return y


def gen_corpus(
    seed: int,
    n_speakers: int,
    utts_per_speaker: int,
    domain: DomainSpec,
    mel_bins: int,
    speaker_offset: int = 0,
    split: Split = "pretrain",
    mixing_scale: float = 0.35,
) -> Corpus:
    if n_speakers < 2:
        raise CorpusError(f"a corpus needs at least 2 speakers, got {n_speakers}")
    if utts_per_speaker < 1:
        raise CorpusError("a corpus needs at least 1 utterance per speaker")

    mixing = mixing_matrix(seed, mel_bins, mixing_scale)
    corpus = Corpus()
    for speaker in range(speaker_offset, speaker_offset + n_speakers):
        latent = speaker_latent(seed, speaker)
        for index in range(utts_per_speaker):
            gen = utterance_stream(seed, domain.name, speaker, index)
            features = apply_domain(base_frames(gen, latent, mixing), domain, gen)
            if not np.all(np.isfinite(features)):
                raise CorpusError(f"non-finite frames for speaker {speaker}")
            corpus.utterances.append(
                Utterance(
                    id=utterance_id(domain.name, speaker, index),
                    speaker=speaker,
                    domain=domain.name,
                    split=split,
                    features=features.astype(np.float32),
                ),
            )

    logger.debug(
        f"Generated {len(corpus)} utterances of {n_speakers} speakers in {domain.name}",
    )
    return corpus


def make_low_resource_split(
    corpus: Corpus,
    n_speakers: int,
    seed: int,
) -> Tuple[Corpus, Corpus]:
    """Closed-set dev (enroll, up to 5 utts) / test (5-10 utts) split."""
    if n_speakers not in LOW_RESOURCE_SIZES:
        logger.warning(
            f"Split size {n_speakers} is not one of the low-resource sizes {LOW_RESOURCE_SIZES}",
        )

    min_utts = 2 + TEST_UTTS_RANGE[0]
    grouped = corpus.by_speaker()
    eligible = sorted(s for s, utts in grouped.items() if len(utts) >= min_utts)
    if len(eligible) < n_speakers:
        raise CorpusError(
            f"need {n_speakers} speakers with {min_utts}+ utterances, "
            f"corpus has {len(eligible)}",
        )

    gen = rng(seed, "split", n_speakers)
    chosen = sorted(gen.choice(eligible, size=n_speakers, replace=False).tolist())

    dev, test = Corpus(), Corpus()
    for speaker in chosen:
        utts = sorted(grouped[speaker], key=lambda u: u.id)
        order = gen.permutation(len(utts))
        n_dev = min(DEV_UTTS_MAX, len(utts) - TEST_UTTS_RANGE[0])
        n_test = int(
            gen.integers(TEST_UTTS_RANGE[0], min(TEST_UTTS_RANGE[1], len(utts) - n_dev) + 1),
        )
        dev.utterances.extend(replace(utts[i], split="dev") for i in order[:n_dev])
        test.utterances.extend(
            replace(utts[i], split="test") for i in order[n_dev : n_dev + n_test]
        )
    return dev, test


def domain_pool(data: DataConfig, seed: int, mel_bins: int, name: str) -> Corpus:
    """Every generated speaker of an evaluation domain, before any split."""
    parts = [SOURCE_DOMAIN, *data.domains]
    if name not in parts:
        raise CorpusError(f"domain {name} is not part of this corpus, expected one of {parts}")
    return gen_corpus(
        seed,
        data.heldout_speakers if name == SOURCE_DOMAIN else data.target_speakers,
        data.target_utts,
        domain_preset(name, mel_bins),
        mel_bins,
        speaker_offset=(parts.index(name) + 1) * SPEAKER_BLOCK,
        split="dev",
        mixing_scale=data.mixing_scale,
    )


def build_corpus(data: DataConfig, seed: int, mel_bins: int) -> Corpus:
    """Pretraining speakers, held-out source speakers and every target domain."""
    source = domain_preset(SOURCE_DOMAIN, mel_bins)
    corpus = gen_corpus(
        seed,
        data.pretrain_speakers,
        data.pretrain_utts,
        source,
        mel_bins,
        mixing_scale=data.mixing_scale,
    )

    for name in [SOURCE_DOMAIN, *data.domains]:
        pool = domain_pool(data, seed, mel_bins, name)
        dev, test = make_low_resource_split(
            pool,
            min(data.split_speakers, len(pool.speakers())),
            seed,
        )
        corpus.extend(dev).extend(test)
        logger.info(
            f"Domain {name}: {len(dev.speakers())} speakers, "
            f"{len(dev)} dev / {len(test)} test utterances",
        )
    return corpus
