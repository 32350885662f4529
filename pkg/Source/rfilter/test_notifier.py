import logging
import unittest
from unittest.mock import Mock

from .notifier import ProgressEvent, ProgressNotifier, ProgressReporter, log_progress


EVENT = ProgressEvent("theta", 1, 2)


class TestProgressNotifier(unittest.TestCase):

    def test_bind_and_fire(self):
        notifier = ProgressNotifier()
        handler = Mock()
        binding = notifier.bind(handler)
        notifier.fire(EVENT)
        handler.assert_called_once_with(EVENT)
        binding.dispose()

    def test_dispose_unbinds(self):
        notifier = ProgressNotifier()
        handler = Mock()
        binding = notifier.bind(handler)
        binding.dispose()
        self.assertFalse(binding.is_alive())
        notifier.fire(EVENT)
        handler.assert_not_called()

    def test_dropped_binding_unbinds(self):
        notifier = ProgressNotifier()
        handler = Mock()
        notifier.bind(handler)
        notifier.fire(EVENT)
        handler.assert_not_called()

    def test_handler_may_unbind_during_fire(self):
        notifier = ProgressNotifier()
        calls = Mock()
        bindings = []

        def once(event: ProgressEvent):
            calls(event)
            bindings[0].dispose()

        bindings.append(notifier.bind(once))
        notifier.fire(EVENT)
        notifier.fire(ProgressEvent("theta", 2, 2))
        calls.assert_called_once_with(EVENT)

    def test_log_progress(self):
        logger = logging.getLogger("rfilter.test_notifier")
        with self.assertLogs(logger, "INFO") as logs:
            log_progress(logger)(EVENT)
        self.assertEqual(logs.records[0].getMessage(), "theta: 1/2")


class TestProgressReporter(unittest.TestCase):

    def test_events(self):
        notifier = ProgressNotifier()
        events: list[ProgressEvent] = []
        with notifier.bind(events.append):
            reporter = ProgressReporter(notifier, "theta", 10)
            reporter.advance(4)
            reporter.advance(6)
        self.assertEqual(events, [ProgressEvent("theta", 4, 10), ProgressEvent("theta", 10, 10)])
        self.assertEqual(events[-1].fraction, 1.0)

    def test_without_notifier(self):
        ProgressReporter(None, "quiet", 3).advance(3)

    def test_empty_run_is_complete(self):
        self.assertEqual(ProgressEvent("none", 0, 0).fraction, 1.0)

if __name__ == '__main__':
    unittest.main()
