from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..autograd import BatchNormState, Tensor
from ..errors import ContractError

NameFilter = Callable[[str], bool]

BUFFER_SUFFIXES = ("running_mean", "running_var", "num_batches_tracked")


class ParameterStore:
    """Ordered name -> Tensor map with per-name trainable flags.

    Running batch-norm statistics live next to the parameters as plain arrays
    (`buffers`); they are not parameters and never count towards sizes.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._trainable: Dict[str, bool] = {}
        self._buffers: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params or name in self._buffers:
            raise ContractError(f"duplicate parameter name {name}")
        tensor = Tensor(value, requires_grad=trainable)
        self._params[name] = tensor
        self._trainable[name] = trainable
        return tensor

    def add_buffer(self, name: str, value: np.ndarray):
        if name in self._params or name in self._buffers:
            raise ContractError(f"duplicate buffer name {name}")
        self._buffers[name] = np.array(value)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError as e:
            raise ContractError(f"unknown parameter {name}") from e

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self._params.items()

    def buffer(self, name: str) -> np.ndarray:
        try:
            return self._buffers[name]
        except KeyError as e:
            raise ContractError(f"unknown buffer {name}") from e

    def buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self._buffers.items()

    def is_trainable(self, name: str) -> bool:
        if name not in self._trainable:
            raise ContractError(f"unknown parameter {name}")
        return self._trainable[name]

    def set_trainable(self, name: str, trainable: bool):
        self[name].requires_grad = trainable
        self._trainable[name] = trainable

    def trainable_names(self) -> List[str]:
        return [k for k, v in self._trainable.items() if v]

    def count(self, name_filter: Optional[NameFilter] = None) -> int:
        return sum(
            t.size for k, t in self._params.items() if (not name_filter) or name_filter(k)
        )

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for k, t in self._params.items():
            other.add(k, t.data.copy(), self._trainable[k])
        for k, v in self._buffers.items():
            other.add_buffer(k, v.copy())
        return other

    def bn_state(self, prefix: str, momentum: Optional[float], eps: float) -> BatchNormState:
        return BatchNormState(
            running_mean=self.buffer(f"{prefix}.running_mean"),
            running_var=self.buffer(f"{prefix}.running_var"),
            num_batches_tracked=self.buffer(f"{prefix}.num_batches_tracked"),
            momentum=momentum,
            eps=eps,
        )

    def bn_layers(self) -> List[str]:
        return [
            k[: -len(".running_mean")] for k in self._buffers if k.endswith(".running_mean")
        ]

    def seed_running_stats(self):
        """Identity statistics for every BN layer, so untrained models can run eval."""
        for layer in self.bn_layers():
            self.bn_state(layer, None, 0.0).seed()


def count_params(params: ParameterStore, name_filter: Optional[NameFilter] = None) -> int:
    return params.count(name_filter)
