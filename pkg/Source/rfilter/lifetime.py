from concurrent.futures import Executor, ThreadPoolExecutor
from types import TracebackType
from typing import Callable, Iterable, Sequence, TypeVar
from weakref import finalize


_TItem = TypeVar("_TItem")
_TResult = TypeVar("_TResult")


class Lifetime:
    """
    Represents a lifetime.
    Exposes automatic disposal via finalization (GC),
    context disposal via `with` blocks,
    and explicit disposal via `dispose()`.
    """
    def __init__(self):
        self._is_disposed = False
        self._finalizer = finalize(self, type(self)._release, self._resources())

    def _resources(self) -> list[object]:
        """
        Objects that must be released when this lifetime ends.
        Must not reference `self`, or finalization never happens.
        """
        return []

    @staticmethod
    def _release(resources: list[object]) -> None:
        """ Releases whatever `_resources()` handed over. """

    def __enter__(self):
        return self

    def __exit__(self,
        exc_type: type[BaseException] | None,
        exc_value: BaseException | None,
        traceback: TracebackType | None
    ) -> bool:
        self.dispose()
        return False

    def dispose(self) -> None:
        """ Explicitly disposes of this lifetime. Robust to multiple calls. """
        self._is_disposed = True
        self._finalizer()

    def is_alive(self) -> bool:
        """ Returns True if this lifetime is still alive. """
        return not self._is_disposed


class SamplePool(Lifetime):
    """
    A bounded pool of workers for chunked Monte Carlo work.

    Results always come back in submission order, so reductions over them
    do not depend on how many workers ran or in which order chunks finished.
    With a single worker, chunks run inline on the calling thread.
    """
    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self._workers = workers
        self._executor: Executor | None = (
            ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        )
        super().__init__()

    @property
    def workers(self) -> int:
        return self._workers

    def _resources(self) -> list[object]:
        return [self._executor] if self._executor else []

    @staticmethod
    def _release(resources: list[object]) -> None:
        for resource in resources:
            if isinstance(resource, Executor):
                resource.shutdown(wait=True)

    def map(self,
        fn: Callable[[_TItem], _TResult],
        items: Iterable[_TItem],
        on_result: Callable[[int, _TResult], None] | None = None,
    ) -> list[_TResult]:
        """
        Applies `fn` to every item and returns the results in item order.
        `on_result(index, result)` is called on the calling thread,
        in item order, as results become available.
        """
        assert self.is_alive()
        items = list(items)
        results: list[_TResult] = []
        if self._executor is None:
            for index, item in enumerate(items):
                result = fn(item)
                results.append(result)
                if on_result:
                    on_result(index, result)
            return results
        futures = [self._executor.submit(fn, item) for item in items]
        for index, future in enumerate(futures):
            result = future.result()
            results.append(result)
            if on_result:
                on_result(index, result)
        return results


def chunk_ranges(n_items: int, chunk_size: int) -> Sequence[range]:
    """
    Splits `range(n_items)` into contiguous chunks of `chunk_size`
    (the last may be shorter). Boundaries depend only on the arguments.
    """
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    return [
        range(start, min(start + chunk_size, n_items))
        for start in range(0, n_items, chunk_size)
    ]
