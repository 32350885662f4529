"""
Progress notification for chunked Monte Carlo runs.
"""
import logging
from dataclasses import dataclass
from typing import Callable
from weakref import WeakSet, ref as weak_ref

from .lifetime import Lifetime


@dataclass(frozen=True)
class ProgressEvent:
    """
    Progress of a chunked Monte Carlo run.
    """
    label: str
    done: int
    total: int

    @property
    def fraction(self) -> float:
        return self.done / self.total if self.total else 1.0


ProgressHandler = Callable[[ProgressEvent], None]


class _ProgressBinding(Lifetime):
    """
    Keeps its handler alive, never its notifier.
    """
    def __init__(self, notifier: 'ProgressNotifier', handler: ProgressHandler):
        super().__init__()
        self._notifier = weak_ref(notifier)
        self._handler: ProgressHandler | None = handler
        notifier._bindings.add(self)

    def deliver(self, event: ProgressEvent) -> None:
        if self._handler:
            self._handler(event)

    def dispose(self) -> None:
        if self._notifier and (notifier := self._notifier()):
            notifier._bindings.discard(self)
        self._notifier = None
        self._handler = None
        super().dispose()


class ProgressNotifier:
    """
    Fans `ProgressEvent`s out to bound handlers. Bindings are held weakly:
    a handler stays bound while the lifetime returned by `bind` is alive.
    """
    def __init__(self):
        self._bindings = WeakSet[_ProgressBinding]()

    def bind(self, handler: ProgressHandler) -> Lifetime:
        return _ProgressBinding(self, handler)

    def fire(self, event: ProgressEvent) -> None:
        # handlers may unbind while we deliver
        for binding in list(self._bindings):
            if binding in self._bindings:
                binding.deliver(event)


def log_progress(logger: logging.Logger, level: int = logging.INFO) -> ProgressHandler:
    """ A handler writing each event as `<label>: <done>/<total>`. """
    def handle(event: ProgressEvent) -> None:
        logger.log(level, "%s: %d/%d", event.label, event.done, event.total)
    return handle


class ProgressReporter:
    """
    Counts completed work items for one labelled run and fires a
    `ProgressEvent` on an (optional) notifier after each completed chunk.
    """
    def __init__(self,
        notifier: ProgressNotifier | None,
        label: str,
        total: int
    ):
        self._notifier = notifier
        self._label = label
        self._total = total
        self._done = 0

    def advance(self, count: int) -> None:
        self._done += count
        if self._notifier:
            self._notifier.fire(ProgressEvent(self._label, self._done, self._total))
