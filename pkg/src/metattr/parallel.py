"""Ordered fan-out over a bounded thread pool."""

from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, threads=1):
    """``[fn(x) for x in items]``, optionally on ``threads`` workers; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
