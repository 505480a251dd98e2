"""Freeze / adapt policies over a pretrained `ParameterStore`."""

from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from loguru import logger

from .autograd import Tensor, no_grad
from .const import GROUPS
from .errors import ContractError
from .model import ParameterStore
from .model.names import (
    group_of,
    is_bn_adapter_layer,
    is_bn_adapter_param,
    is_head_param,
    is_known_param,
    is_se_param,
)
from .model.network import embed_batch
from .types import AdaptPolicy, ModelConfig
from .utils import format_count

NameFilter = Callable[[str], bool]

PARAM_FILTERS: Dict[str, Callable[[Optional[Sequence[int]]], NameFilter]] = {
    "all": lambda groups: (
        (lambda n: True) if groups is None else (lambda n: group_of(n) in groups)
    ),
    "encoder": lambda groups: (
        lambda n: not is_head_param(n) and (groups is None or group_of(n) in groups)
    ),
    "se": lambda groups: lambda n: is_se_param(n, groups),
    "bn": lambda groups: lambda n: is_bn_adapter_param(n, groups),
    "se_bn": lambda groups: (
        lambda n: is_se_param(n, groups) or is_bn_adapter_param(n, groups)
    ),
}


def name_filter(kind: str, groups: Optional[Sequence[int]] = None) -> NameFilter:
    if kind not in PARAM_FILTERS:
        raise ContractError(f"unknown filter {kind}, expected one of {list(PARAM_FILTERS)}")
    return PARAM_FILTERS[kind](None if groups is None else tuple(groups))


def trainable_names(params: ParameterStore, policy: AdaptPolicy) -> List[str]:
    """Closed-form trainable set of `policy`; `params` is left untouched."""
    if policy.mode == "fine_tune":
        return params.names()
    selected = name_filter(policy.mode, policy.groups)
    return [n for n in params if selected(n)]


def apply_policy(params: ParameterStore, policy: AdaptPolicy) -> ParameterStore:
    if unknown := [n for n in params if not is_known_param(n)]:
        raise ContractError(f"unknown parameter names: {', '.join(unknown[:5])}")

    names = set(trainable_names(params, policy))
    if not names:
        raise ContractError(
            f"policy {policy.tag} selects no parameters"
            " (SE adapters need a model built with use_se=true)",
        )

    for name in params:
        params.set_trainable(name, name in names)

    logger.info(
        f"Policy {policy.tag}: {len(names)} trainable tensors, "
        f"{params.count(lambda n: n in names)} "
        f"({format_count(params.count(lambda n: n in names))}) parameters",
    )
    return params


def frozen_drift_check(before: ParameterStore, after: ParameterStore) -> float:
    """Largest absolute change of any parameter frozen in `after`."""
    if set(before.names()) != set(after.names()):
        missing = set(before.names()) ^ set(after.names())
        raise ContractError(f"parameter name sets differ: {sorted(missing)[:5]}")

    drift = 0.0
    for name, tensor in after.items():
        if after.is_trainable(name):
            continue
        old = before[name].data
        if old.shape != tensor.shape:
            raise ContractError(f"{name} changed shape {old.shape} -> {tensor.shape}")
        drift = max(drift, float(np.max(np.abs(tensor.data.astype(np.float64) - old))))
    return drift


def bn_train_layers(params: ParameterStore, policy: AdaptPolicy) -> List[str]:
    """BN layers whose gamma/beta the policy adapts."""
    if policy.mode == "fine_tune":
        return params.bn_layers()
    if policy.mode == "se":
        return []
    return [x for x in params.bn_layers() if is_bn_adapter_layer(x, policy.groups)]


def refresh_layers(params: ParameterStore, policy: AdaptPolicy) -> List[str]:
    """BN layers whose running statistics an adapter policy re-estimates.

    Every BN inside the adapted groups, downsample shortcuts included, plus the
    stem when group 1 is adapted. Only statistics move; the trainable set is
    still `trainable_names`. SE-only policies keep the pretrained statistics.
    """
    if policy.mode == "fine_tune":
        return params.bn_layers()
    if policy.mode == "se":
        return []
    groups = set(policy.groups)
    return [
        x
        for x in params.bn_layers()
        if group_of(x) in groups or (x == "stem.bn" and 1 in groups)
    ]


def bn_stats_refresh(
    params: ParameterStore,
    cfg: ModelConfig,
    batches: Iterable[np.ndarray],
    layers: Optional[Sequence[str]] = None,
) -> List[str]:
    """Re-estimates running statistics of `layers` on `batches`.

    Statistics are reset and replaced by a cumulative average over every batch;
    gamma/beta and all other layers are untouched. `layers` defaults to the
    main-path BN layers of every group.
    """
    if layers is None:
        layers = [x for x in params.bn_layers() if is_bn_adapter_layer(x, GROUPS)]
    if unknown := [x for x in layers if x not in params.bn_layers()]:
        raise ContractError(f"unknown BN layers: {', '.join(unknown)}")
    if not layers:
        return []

    saved = {x: params.bn_state(x, None, cfg.bn_eps) for x in layers}
    snapshot = {
        x: (s.running_mean.copy(), s.running_var.copy(), s.num_batches_tracked.copy())
        for x, s in saved.items()
    }
    for state in saved.values():
        state.reset()

    def restore():
        for x, (mean, var, tracked) in snapshot.items():
            saved[x].running_mean[...] = mean
            saved[x].running_var[...] = var
            saved[x].num_batches_tracked[...] = tracked

    seen = 0
    mode = frozenset(layers)
    try:
        with no_grad():
            for batch in batches:
                embed_batch(Tensor(batch), cfg, params, mode, cumulative=True)
                seen += 1
    except Exception:
        restore()
        raise

    if not seen:
        restore()
        raise ContractError("bn_stats_refresh needs at least one batch")

    logger.info(f"Re-estimated running statistics of {len(layers)} BN layers on {seen} batches")
    return list(layers)


def param_table(
    params: ParameterStore,
    kind: str = "all",
    groups: Optional[Sequence[int]] = None,
) -> List[Dict[str, object]]:
    """Per-group rows plus a total row for `kind`, counts rounded to K / M."""
    selected = name_filter(kind, groups)
    rows: List[Dict[str, object]] = []
    for g in GROUPS if groups is None else sorted(groups):
        count = params.count(lambda n, g=g: group_of(n) == g and selected(n))
        rows.append({"scope": f"G{g}", "params": count, "rounded": format_count(count)})
    if kind in ("all", "encoder") and groups is None:
        rest = params.count(lambda n: group_of(n) is None and selected(n))
        rows.append({"scope": "other", "params": rest, "rounded": format_count(rest)})
    total = params.count(selected)
    rows.append({"scope": "total", "params": total, "rounded": format_count(total)})
    return rows
