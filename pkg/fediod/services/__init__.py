"""
ServiceRegistry: container for the per-seed federation services.

Instantiated once per seed by the experiment runner and handed to every
run mode.
"""

import logging

from ..config import RunConfig
from .base import BaseService

logger = logging.getLogger(__name__)


class ServiceRegistry:
    """Holds every domain service; passed to RunMode.execute."""

    def __init__(self, cfg: RunConfig, seed: int):
        # Core infrastructure (must be first)
        self.base = BaseService(cfg, seed)
        self.base._registry = self

        # Imported lazily: federation pulls in the whole numerical stack.
        from .federation import FederationService

        self.federation = FederationService(self)

        logger.info("ServiceRegistry ready (seed=%d)", seed)

    # Convenience shortcuts delegated to base
    @property
    def cfg(self) -> RunConfig:
        return self.base.cfg

    @property
    def seed(self) -> int:
        return self.base.seed
