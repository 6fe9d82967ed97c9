import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "LAWWARP_THREADS"


def worker_count(threads=None) -> int:
    """Resolve a worker count; ``None`` reads ``LAWWARP_THREADS`` (0 = auto)."""
    if threads is None:
        raw = os.environ.get(ENV_THREADS, "0").strip() or "0"
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ValueError("thread count must be >= 0")
    if threads == 0:
        threads = os.cpu_count() or 1
    return threads


def pmap(fn, items, threads=None) -> list:
    """Ordered map; runs in a thread pool when more than one worker is allowed."""
    items = list(items)
    n = min(worker_count(threads), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
