from .base import RunMode


class StandaloneMode(RunMode):
    name = "standalone"
    description = "Each node trains alone; mean and std over nodes"

    def execute(self, registry, seed):
        fed = registry.federation
        return fed.run_standalone(fed.build_state())
