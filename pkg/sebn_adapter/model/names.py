"""Hierarchical parameter names.

    stem.conv.w  stem.bn.{gamma,beta}
    group<g>.block<b>.{conv1,conv2}.w
    group<g>.block<b>.{bn1,bn2}.{gamma,beta}
    group<g>.block<b>.se.{w1,b1,w2,b2}
    group<g>.block<b>.downsample.conv.w  group<g>.block<b>.downsample.bn.{gamma,beta}
    asp.{w,b,v}  embedding.{w,b}  head.w

Batch-norm layers additionally own the buffers
`<layer>.{running_mean,running_var,num_batches_tracked}`.
"""

import re
from typing import Iterable, Optional

BLOCK = r"group(?P<group>[1-4])\.block(?P<block>\d+)"

SE_PARAM_REGEX = re.compile(rf"^{BLOCK}\.se\.(w1|b1|w2|b2)$")
MAIN_BN_PARAM_REGEX = re.compile(rf"^{BLOCK}\.bn[12]\.(gamma|beta)$")
MAIN_BN_LAYER_REGEX = re.compile(rf"^{BLOCK}\.bn[12]$")
PARAM_REGEX = re.compile(
    r"^(stem\.conv\.w|stem\.bn\.(gamma|beta)"
    rf"|{BLOCK}\.(conv[12]\.w|bn[12]\.(gamma|beta)|se\.(w1|b1|w2|b2)"
    r"|downsample\.conv\.w|downsample\.bn\.(gamma|beta))"
    r"|asp\.(w|b|v)|embedding\.(w|b)|head\.w)$",
)
BUFFER_REGEX = re.compile(
    rf"^(stem\.bn|{BLOCK}\.(bn[12]|downsample\.bn))"
    r"\.(running_mean|running_var|num_batches_tracked)$",
)


def block_prefix(group: int, block: int) -> str:
    return f"group{group}.block{block}"


def group_of(name: str) -> Optional[int]:
    m = re.match(BLOCK, name)
    return int(m["group"]) if m else None


def _in_groups(m: Optional[re.Match], groups: Optional[Iterable[int]]) -> bool:
    if not m:
        return False
    return groups is None or int(m["group"]) in set(groups)


def is_se_param(name: str, groups: Optional[Iterable[int]] = None) -> bool:
    return _in_groups(SE_PARAM_REGEX.match(name), groups)


def is_bn_adapter_param(name: str, groups: Optional[Iterable[int]] = None) -> bool:
    """Main-path BN gamma/beta; stem and downsample BNs are excluded."""
    return _in_groups(MAIN_BN_PARAM_REGEX.match(name), groups)


def is_bn_adapter_layer(layer: str, groups: Optional[Iterable[int]] = None) -> bool:
    return _in_groups(MAIN_BN_LAYER_REGEX.match(layer), groups)


def is_head_param(name: str) -> bool:
    return name.startswith("head.")


def is_known_param(name: str) -> bool:
    return bool(PARAM_REGEX.match(name))


def is_known_buffer(name: str) -> bool:
    return bool(BUFFER_REGEX.match(name))
