"""Process-level parallelism capped by ``DESGRADA_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_VAR = "DESGRADA_THREADS"


def worker_count() -> int:
    """Worker cap from the environment, defaulting to the machine's cores."""
    raw = os.environ.get(ENV_VAR, "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, fanned out over processes when allowed.

    Results keep input order, so output never depends on scheduling.
    ``fn`` must be picklable (a module-level function).
    """
    items = list(items)
    workers = min(worker_count() if workers is None else workers, len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
