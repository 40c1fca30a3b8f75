"""One-way federated distillation: local teachers, then the central student."""

from ..errors import ConfigError
from .base import RunMode


class FedIODMode(RunMode):
    name = "fediod"
    description = ("Train and freeze local teachers, then distill them into "
                   "a central student through generated inputs")

    def validate(self, cfg):
        if cfg.distill.batch_size < 2:
            raise ConfigError("distill.batch_size must be >= 2 for the "
                              "adapted inception score", "distill.batch_size")

    def execute(self, registry, seed):
        fed = registry.federation
        state = fed.build_state()
        teacher_accs = fed.train_locals(state)
        report = fed.run_fediod(state)
        report.extras["teacher_accuracies"] = teacher_accs
        report.extras["teacher_train_accuracies"] = [
            n.train_log["train_accuracy"] for n in state.nodes]
        return report
