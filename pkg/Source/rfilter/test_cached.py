import gc
import unittest
from unittest.mock import Mock

from .cached import CachedProperty, cached

class TestCached(unittest.TestCase):

    def test_computed_once(self):
        count = Mock()

        class Thing:
            @cached
            def value(self) -> int:
                count()
                return 7

        thing = Thing()
        self.assertFalse(Thing.value.is_cached(thing))
        self.assertEqual(thing.value, 7)
        self.assertEqual(thing.value, 7)
        self.assertTrue(Thing.value.is_cached(thing))
        self.assertEqual(count.call_count, 1)

    def test_per_instance(self):
        class Thing:
            def __init__(self, n: int):
                self.n = n

            @cached
            def double(self) -> int:
                return 2 * self.n

        self.assertEqual(Thing(2).double, 4)
        self.assertEqual(Thing(5).double, 10)

    def test_read_only(self):
        class Thing:
            @cached
            def value(self) -> int:
                return 1

        thing = Thing()
        with self.assertRaises(AttributeError):
            thing.value = 2

    def test_class_access_returns_descriptor(self):
        class Thing:
            @cached
            def value(self) -> int:
                """ Docs. """
                return 1

        self.assertIsInstance(Thing.value, CachedProperty)
        self.assertEqual(Thing.value.__doc__, " Docs. ")

    def test_does_not_keep_instance_alive(self):
        class Thing:
            @cached
            def value(self) -> int:
                return 1

        thing = Thing()
        _ = thing.value
        descriptor = Thing.__dict__['value']
        del thing
        gc.collect()
        self.assertEqual(len(descriptor._values), 0)

if __name__ == '__main__':
    unittest.main()
