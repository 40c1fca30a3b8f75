"""
RunMode: base class for every experiment mode.

Each mode class IS its own definition:
  - name, description
  - validate(cfg) -> raises ConfigError
  - execute(registry, seed) -> SeedReport

The runner auto-discovers all subclasses and dispatches by name.
"""

from abc import ABC, abstractmethod

from ..config import RunConfig
from ..report import SeedReport


class RunMode(ABC):
    """Contract for an experiment mode.

    Subclass attributes (required):
        name:        config value of ``mode`` (e.g. "fediod")
        description: one line shown by ``fediod modes``
    """

    name: str = None
    description: str = ""

    def validate(self, cfg: RunConfig):
        """Mode-specific config checks beyond the schema.  Default: none."""

    @abstractmethod
    def execute(self, registry, seed: int) -> SeedReport:
        """Run the mode for one seed on a fresh ServiceRegistry."""
        ...
