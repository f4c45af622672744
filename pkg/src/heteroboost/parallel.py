"""Process-wide worker pool setting; every parallel map goes through ``pmap``.

Results are always returned in input order, and each task carries its own
seed, so output does not depend on scheduling.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_THREADS = None


def set_threads(n):
    global _THREADS
    _THREADS = None if n is None else max(1, int(n))


def get_threads():
    return _THREADS if _THREADS is not None else (os.cpu_count() or 1)


def pmap(fn, items, threads=None):
    items = list(items)
    n = get_threads() if threads is None else max(1, int(threads))
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))
