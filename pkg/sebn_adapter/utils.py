import zlib
from functools import partial, wraps
from typing import Awaitable, Callable, List, Optional, Sequence, TypeVar, Union
from typing_extensions import ParamSpec

import anyio
import anyio.to_thread
import numpy as np

P = ParamSpec("P")
TR = TypeVar("TR")
IT = TypeVar("IT")

SeedKey = Union[int, str]


def awaitable(
    func: Callable[P, TR],
    limiter: Optional[anyio.CapacityLimiter] = None,
) -> Callable[P, Awaitable[TR]]:
    @wraps(func)
    async def run(*args: P.args, **kwargs: P.kwargs) -> TR:
        return await anyio.to_thread.run_sync(
            partial(func, *args, **kwargs),
            limiter=limiter,
        )

    return run


async def gather_ordered(
    func: Callable[[IT], TR],
    items: Sequence[IT],
    workers: int = 4,
) -> List[TR]:
    """Runs `func` over `items` on a thread pool, results in input order."""
    limiter = anyio.CapacityLimiter(max(1, workers))
    run = awaitable(func, limiter=limiter)
    results: List[TR] = [None] * len(items)  # type: ignore

    async def worker(index: int, item: IT):
        results[index] = await run(item)

    async with anyio.create_task_group() as tg:
        for i, item in enumerate(items):
            tg.start_soon(worker, i, item)

    return results


def stable_key(key: SeedKey) -> int:
    if isinstance(key, int):
        return key
    return zlib.crc32(key.encode("u8"))


def rng(seed: int, *keys: SeedKey) -> np.random.Generator:
    """Counter-based stream for `seed`, split by `keys`.

    Streams with different keys are independent, so any sub-generator can be
    reproduced without replaying the others.
    """
    seq = np.random.SeedSequence(seed, spawn_key=tuple(stable_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def format_count(count: int) -> str:
    """876 -> `0.9 K`, 8_577_452 -> `8.6 M`"""
    if count < 100:
        return str(count)
    if count < 1_000_000:
        return f"{count / 1000:.1f} K"
    return f"{count / 1_000_000:.1f} M"


def format_eer(eer: float) -> str:
    return f"{eer * 100:.3f}"


def parse_groups(text: str) -> List[int]:
    text = text.strip().lower()
    if text in ("all", "g1-g4", "1-4"):
        return [1, 2, 3, 4]
    return sorted({int(x.strip().lstrip("g")) for x in text.split(",") if x.strip()})
