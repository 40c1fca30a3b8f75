"""
RunMode auto-discovery.

Every concrete RunMode subclass defined in a module of this package is
picked up by the experiment runner; ``mode: <name>`` in a config selects it.
"""

import importlib
import inspect
import logging
import pkgutil
from types import ModuleType
from typing import Iterable, List, Type

from ..errors import ConfigError

logger = logging.getLogger(__name__)


def collect_modes(modules: Iterable[ModuleType]) -> List[Type]:
    """Concrete, named RunMode classes found in *modules*, sorted by name.

    A class re-exported by a second module is counted once; two different
    classes claiming one mode name raise ConfigError.
    """
    from .base import RunMode

    by_name = {}
    for mod in modules:
        for obj in vars(mod).values():
            if not (inspect.isclass(obj) and issubclass(obj, RunMode)):
                continue
            if obj is RunMode or inspect.isabstract(obj):
                continue
            if getattr(obj, "name", None) is None:
                continue
            seen = by_name.get(obj.name)
            if seen is not None and seen is not obj:
                raise ConfigError(
                    f"Mode name '{obj.name}' is claimed by both "
                    f"{seen.__module__}.{seen.__qualname__} and "
                    f"{obj.__module__}.{obj.__qualname__}", "mode")
            by_name[obj.name] = obj
    return [by_name[name] for name in sorted(by_name)]


def discover_modes() -> List[Type]:
    """Import every module of this package and collect its run modes."""
    modules = []
    pkg = importlib.import_module(__name__)
    for _, mod_name, _ in pkgutil.iter_modules(pkg.__path__):
        if mod_name == "base":
            continue
        try:
            modules.append(importlib.import_module(f".{mod_name}", __name__))
        except Exception as exc:
            logger.warning("Failed to import modes.%s: %s", mod_name, exc)
    mode_classes = collect_modes(modules)
    logger.info("Discovered %d run modes: %s", len(mode_classes),
                ", ".join(c.name for c in mode_classes))
    return mode_classes
