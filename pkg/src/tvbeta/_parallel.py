"""Order-preserving map over a process pool (serial when ``n_jobs == 1``)."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(n_jobs: int | None) -> int:
    if n_jobs is None or n_jobs == 0:
        return 1
    if n_jobs < 0:
        return max(1, (os.cpu_count() or 1) + 1 + n_jobs)
    return n_jobs


def pmap(func, items, n_jobs: int | None = 1, chunksize: int = 1) -> list:
    """``[func(x) for x in items]``, optionally across worker processes.

    ``func`` must be picklable (module-level).  Results keep input order, so
    seeded work is reproducible regardless of ``n_jobs``.
    """
    items = list(items)
    jobs = min(resolve_jobs(n_jobs), max(1, len(items)))
    if jobs == 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(func, items, chunksize=chunksize))
