"""
FWP Application Registry
========================

Static registry of FWP application types keyed by name.

Applications are compiled-in handlers. Each subclasses FwpApp and registers
its callbacks from `init` through the runtime API, the same way a native
FWP calls eos_receive_fn/eos_postinit from its startup code.

Usage:
    from app.fwp import FwpApp, register_app

    @register_app("fwd")
    class Forwarder(FwpApp):
        def init(self, fwp, config):
            fwp.eos_receive_fn(self.receive)

        def receive(self, fwp, handle, source, data):
            fwp.eos_send(fwp.egress, handle)
"""

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Mapping, Type, TypeVar

from .exceptions import UnknownFwpType

if TYPE_CHECKING:
    from .runtime import FwpInstance

A = TypeVar("A", bound="FwpApp")

_REGISTRY: Dict[str, Type["FwpApp"]] = {}


class FwpApp(ABC):
    """
    Entry points of an FWP application.

    One object per FWP instance. Mutable per-flow state must live in the
    FWP's arena (via eos_sbrk) so that restore erases it; attributes set on
    the object itself should only hold offsets and immutable configuration.
    """

    name: str = ""

    @abstractmethod
    def init(self, fwp: "FwpInstance", config: Mapping[str, Any]) -> None:
        """Startup code: parse config, allocate arena state, register callbacks."""
        pass

    def postinit(self, fwp: "FwpInstance", data: Any) -> None:
        """Runs once after init, right before the checkpoint is taken."""
        pass

    def receive(self, fwp: "FwpInstance", handle, source: int, data: Any) -> None:
        """Per-message callback."""
        raise NotImplementedError


def register_app(name: str) -> Callable[[Type[A]], Type[A]]:
    """Class decorator adding an application type to the registry."""
    def _wrap(cls: Type[A]) -> Type[A]:
        if name in _REGISTRY and _REGISTRY[name] is not cls:
            raise ValueError(f"FWP type '{name}' registered twice")
        cls.name = name
        _REGISTRY[name] = cls
        return cls
    return _wrap


def get_app_type(name: str) -> Type[FwpApp]:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownFwpType(f"unknown FWP type '{name}'") from None


def create_app(name: str) -> FwpApp:
    return get_app_type(name)()


def app_names() -> List[str]:
    return sorted(_REGISTRY)


def is_registered(name: str) -> bool:
    return name in _REGISTRY
