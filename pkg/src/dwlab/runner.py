"""Replication scheduling: deterministic parallel map over rep indices.

Results are collected positionally, and every replication derives its own
RNG stream from (seed, rep), so output is byte-identical for any thread
count.  The simulation kernels release the GIL, so threads give real
overlap on multi-core hosts.
"""

from concurrent.futures import ThreadPoolExecutor

__all__ = ["set_threads", "get_threads", "pmap"]

_threads = 1


def set_threads(k: int) -> None:
    global _threads
    _threads = max(1, int(k))


def get_threads() -> int:
    return _threads


def pmap(fn, n: int) -> list:
    """[fn(0), ..., fn(n-1)], evaluated with the configured thread count."""
    if _threads <= 1 or n < 2:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=_threads) as ex:
        return list(ex.map(fn, range(n)))
