import struct
from pathlib import Path
from typing import List, Union

import anyio
import numpy as np
from loguru import logger

from .const import FEATS_DIR, FEATURE_MAGIC, MANIFEST_NAME
from .corpus import Corpus, Utterance
from .errors import CorpusError
from .types import UtteranceRecord

HEADER = struct.Struct("<4sHH")
MANIFEST_FIELDS = ("id", "speaker", "domain", "split", "path", "frames")

PathLike = Union[str, Path]


def encode_features(features: np.ndarray) -> bytes:
    if features.ndim != 2:
        raise CorpusError(f"features must be (F, T), got {features.shape}")
    f, t = features.shape
    if f > 0xFFFF or t > 0xFFFF:
        raise CorpusError(f"feature matrix {features.shape} too large for the header")
    payload = np.ascontiguousarray(features, dtype="<f4").tobytes()
    return HEADER.pack(FEATURE_MAGIC, f, t) + payload


def decode_features(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(raw) < HEADER.size:
        raise CorpusError(f"{name}: truncated feature header")
    magic, f, t = HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise CorpusError(f"{name}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if len(raw) != HEADER.size + 4 * f * t:
        raise CorpusError(
            f"{name}: payload holds {len(raw) - HEADER.size} bytes, header says {f}x{t}",
        )
    features = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(f, t)
    if not np.all(np.isfinite(features)):
        raise CorpusError(f"{name}: non-finite feature values")
    return features.astype(np.float32)


async def read_features(path: PathLike) -> np.ndarray:
    try:
        raw = await anyio.Path(path).read_bytes()
    except OSError as e:
        raise CorpusError(f"cannot read features {path}: {e.strerror}") from e
    return decode_features(raw, str(path))


def _manifest_line(record: UtteranceRecord) -> str:
    return "\t".join(str(getattr(record, k)) for k in MANIFEST_FIELDS)


def parse_manifest(text: str) -> List[UtteranceRecord]:
    lines = [x for x in text.splitlines() if x.strip()]
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_FIELDS:
        raise CorpusError(f"manifest header must be {' '.join(MANIFEST_FIELDS)}")

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        values = line.split("\t")
        if len(values) != len(MANIFEST_FIELDS):
            raise CorpusError(f"manifest line {lineno}: expected {len(MANIFEST_FIELDS)} fields")
        try:
            records.append(UtteranceRecord(**dict(zip(MANIFEST_FIELDS, values))))
        except ValueError as e:
            raise CorpusError(f"manifest line {lineno}: {e}") from e

    if len({r.id for r in records}) != len(records):
        raise CorpusError("manifest lists an utterance id twice")
    return records


async def write_corpus(corpus: Corpus, out: PathLike) -> Path:
    root = anyio.Path(out)
    await (root / FEATS_DIR).mkdir(parents=True, exist_ok=True)

    lines = ["\t".join(MANIFEST_FIELDS)]
    for u in sorted(corpus, key=lambda x: x.id):
        path = f"{FEATS_DIR}/{u.id}.sbft"
        await (root / path).write_bytes(encode_features(u.features))
        lines.append(
            _manifest_line(
                UtteranceRecord(
                    id=u.id,
                    speaker=u.speaker,
                    domain=u.domain,
                    split=u.split,
                    path=path,
                    frames=u.frames,
                ),
            ),
        )

    await (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="u8")
    logger.info(f"Wrote {len(corpus)} utterances to {out}")
    return Path(out)


async def read_corpus(root: PathLike) -> Corpus:
    manifest = anyio.Path(root) / MANIFEST_NAME
    try:
        text = await manifest.read_text(encoding="u8")
    except OSError as e:
        raise CorpusError(f"cannot read manifest {manifest}: {e.strerror}") from e

    corpus = Corpus()
    for record in parse_manifest(text):
        features = await read_features(Path(root) / record.path)
        if features.shape[1] != record.frames:
            raise CorpusError(
                f"{record.id}: manifest says {record.frames} frames, "
                f"file has {features.shape[1]}",
            )
        corpus.utterances.append(
            Utterance(
                id=record.id,
                speaker=record.speaker,
                domain=record.domain,
                split=record.split,
                features=features,
            ),
        )

    if corpus.utterances and len({u.features.shape[0] for u in corpus}) != 1:
        raise CorpusError("utterances disagree on the number of frequency bins")
    logger.debug(f"Loaded {len(corpus)} utterances from {root}")
    return corpus
