"""FedAvg baseline: rounds of broadcast, local SGD and weighted averaging."""

from ..errors import ConfigError
from .base import RunMode


class FedAvgMode(RunMode):
    name = "fedavg"
    description = ("Parameter-averaging baseline; every node must share one "
                   "architecture")

    def validate(self, cfg):
        if cfg.architectures.teacher_per_node is not None:
            archs = set(cfg.architectures.teacher_per_node)
            if len(archs) > 1:
                raise ConfigError(
                    "fedavg cannot average heterogeneous architectures; "
                    "remove architectures.teacher_per_node",
                    "architectures.teacher_per_node")

    def execute(self, registry, seed):
        fed = registry.federation
        return fed.run_fedavg(fed.build_state())
