import re
from dataclasses import dataclass
from typing import Dict, Iterable, List

from .errors import ConfigError, TrialError
from .types import TrialRecord


@dataclass
class KeyLine:
    section: str
    key: str
    value: str
    lineno: int
    """1-based line in the source file"""


KEY_LINE_REGEX = re.compile(
    r"^\s*(?P<section>[a-z_]+)\.(?P<key>[a-z_][a-z0-9_]*)\s*=\s*(?P<value>[^#]*?)\s*(#.*)?$",
)
TRIAL_LINE_REGEX = re.compile(
    r"^\s*(?P<speaker>-?\d+)\s+(?P<utt>\S+)\s+(?P<label>[01])(\s+(?P<score>\S+))?\s*$",
)


def parse(text: str) -> List[KeyLine]:
    parsed = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if (not line.strip()) or line.lstrip().startswith("#"):
            continue
        if not (m := KEY_LINE_REGEX.match(line)):
            raise ConfigError(f"line {lineno}: expected `section.key = value`")
        parsed.append(KeyLine(m["section"], m["key"], m["value"], lineno))
    return parsed


def nest(lines: Iterable[KeyLine]) -> Dict[str, Dict[str, str]]:
    tree: Dict[str, Dict[str, str]] = {}
    for li in lines:
        section = tree.setdefault(li.section, {})
        if li.key in section:
            raise ConfigError(f"line {li.lineno}: duplicate key {li.section}.{li.key}")
        section[li.key] = li.value
    return tree


def parse_trials(text: str) -> List[TrialRecord]:
    trials = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if not (m := TRIAL_LINE_REGEX.match(line)):
            raise TrialError(
                f"trial line {lineno}: expected `<speaker-id> <utterance-id> <0|1>`",
            )
        try:
            score = float(m["score"]) if m["score"] else None
        except ValueError as e:
            raise TrialError(f"trial line {lineno}: bad score {m['score']!r}") from e
        trials.append(
            TrialRecord(
                speaker=int(m["speaker"]),
                utterance=m["utt"],
                target=m["label"] == "1",
                score=score,
            ),
        )
    return trials


def dump_trials(trials: Iterable[TrialRecord]) -> str:
    lines = []
    for x in trials:
        line = f"{x.speaker} {x.utterance} {int(x.target)}"
        if x.score is not None:
            line = f"{line} {x.score:.6f}"
        lines.append(line)
    return "\n".join(lines) + "\n"
