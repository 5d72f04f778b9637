"""Order-preserving worker pool; ``jobs=1`` runs inline."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

_STATE: dict[str, Any] = {}


def _init(state: dict[str, Any]) -> None:
    _STATE.clear()
    _STATE.update(state)


def _call(args):
    fn, item = args
    return fn(_STATE, item)


def ordered_map(fn: Callable[[dict, Any], Any], items: Sequence, state: dict[str, Any], jobs: int = 1) -> list:
    """Apply ``fn(state, item)`` to every item; results keep input order.

    ``fn`` must be a module-level function so worker processes can import it.
    """
    if jobs <= 1 or len(items) < 2:
        return [fn(state, item) for item in items]
    chunk = max(1, len(items) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init, initargs=(state,)) as pool:
        return list(pool.map(_call, [(fn, item) for item in items], chunksize=chunk))
