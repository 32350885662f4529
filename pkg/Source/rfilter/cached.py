from threading import RLock
from typing import Any, Callable, Generic, Self, TypeVar, overload
from weakref import WeakKeyDictionary


TClass = TypeVar("TClass")
TValue = TypeVar("TValue")

Getter = Callable[[TClass], TValue]


class CachedProperty(Generic[TClass, TValue]):
    """
    A read-only property backed by a compute function, computed at most once
    per instance.

    Intended for derived data of immutable objects. Values are stashed in a
    weak dictionary keyed by instance, so instances must be hashable
    (identity hashing is fine) and the cache never keeps them alive.
    Computation is serialized by a lock, so concurrent readers all see the
    same value regardless of who computed it first.
    """
    def __init__(self, fcompute: Getter[TClass, TValue]):
        self.fcompute = fcompute
        self.__doc__ = fcompute.__doc__
        self._name = fcompute.__name__
        self._values = WeakKeyDictionary[TClass, TValue]()
        self._lock = RLock()

    @overload
    def __get__(self,
        instance: None,
        owner: type[TClass] | None = None
    ) -> Self: ...

    @overload
    def __get__(self,
        instance: TClass,
        owner: type[TClass] | None = None
    ) -> TValue: ...

    def __get__(self,
        instance: TClass | None,
        owner: type[TClass] | None = None
    ) -> TValue | Self:
        if instance is None:
            return self
        return self.get(instance)

    def get(self, instance: TClass) -> TValue:
        """
        Gets the (possibly cached) value for the given instance.
        """
        with self._lock:
            if instance in self._values:
                return self._values[instance]
            value = self.fcompute(instance)
            self._values[instance] = value
            return value

    def is_cached(self, instance: TClass) -> bool:
        """ Returns True if the value has already been computed. """
        with self._lock:
            return instance in self._values

    def __set__(self, instance: Any, value: TValue) -> None:
        raise AttributeError(f"Property '{self._name}' is read-only.")

    def __set_name__(self, owner: type[TClass] | None = None, name: str = '') -> None:
        self._name = name


def cached(fcompute: Getter[TClass, TValue]) -> CachedProperty[TClass, TValue]:
    """
    Decorator that creates a lazily computed, cached, read-only property.
    """
    return CachedProperty(fcompute)
