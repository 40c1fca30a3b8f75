from .base import RunMode


class CentralizedMode(RunMode):
    name = "centralized"
    description = "One model on the pooled shards (upper bound)"

    def execute(self, registry, seed):
        fed = registry.federation
        return fed.run_centralized(fed.build_state())
