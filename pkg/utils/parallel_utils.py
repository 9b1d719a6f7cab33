# utils/parallel_utils.py
import asyncio
import logging
from typing import Callable, Iterable, List, Optional, TypeVar

from core.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


async def _gather_ordered(fn: Callable[[T], R], items: List[T], threads: int) -> List[R]:
    semaphore = asyncio.Semaphore(threads)

    async def _run(item: T) -> R:
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    # gather keeps submission order, so results line up with the grid index
    return await asyncio.gather(*(_run(item) for item in items))


def run_ordered(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Run fn over items on a capped worker pool and return results in input order."""
    items = list(items)
    threads = settings.THREADS if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"dispatching {len(items)} jobs over {threads} workers")
    return asyncio.run(_gather_ordered(fn, items, threads))
