"""
ExperimentRunner: dispatches a configured mode over every seed and writes
the run's output files.

Each seed runs on its own ServiceRegistry, so seeds share no mutable state.
Failures inside a mode are caught by the dispatcher and returned as result
dicts, the same shape for every mode.
"""

import logging
import os
import time
from typing import Any, Dict, List

from .config import RunConfig
from .errors import ConfigError
from .modes import discover_modes
from .nets import save_checkpoint
from .report import (
    RunReport,
    SeedReport,
    emit_svg,
    write_ledger_csv,
    write_losses_csv,
)
from .services import ServiceRegistry

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
LOSSES_FILE = "losses.csv"
LEDGER_FILE = "ledger.csv"
CHART_FILE = "accuracy.svg"
CHECKPOINT_FILE = "student.json"

_X_LABELS = {
    "fediod": "distillation step",
    "fedavg": "round",
    "standalone": "node",
    "centralized": "epoch",
}


class ExperimentRunner:
    """Runs one RunConfig with auto-discovered modes."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.modes: Dict[str, Any] = {}
        for mode_cls in discover_modes():
            mode = mode_cls()
            self.modes[mode.name] = mode
        logger.info("ExperimentRunner ready: %d modes", len(self.modes))

    def validate(self):
        mode = self.modes.get(self.cfg.mode)
        if mode is None:
            raise ConfigError(
                f"Unknown mode: '{self.cfg.mode}' "
                f"(available: {', '.join(sorted(self.modes))})", "mode")
        mode.validate(self.cfg)

    def execute_mode(self, mode_name: str, seed: int) -> Dict[str, Any]:
        """Run one mode for one seed; never raises."""
        mode = self.modes.get(mode_name)
        if mode is None:
            return {
                "success": False,
                "error": f"Unknown mode: {mode_name}",
                "error_type": "ConfigError",
                "available_modes": list(self.modes.keys()),
            }

        t0 = time.perf_counter()
        try:
            registry = ServiceRegistry(self.cfg, seed)
            report = mode.execute(registry, seed)
            result = {"success": True, "mode": mode_name, "seed": seed,
                      "report": report}
        except Exception as e:
            logger.error("Mode '%s' (seed %d) error: %s", mode_name, seed, e,
                         exc_info=True)
            result = {"success": False, "error": str(e),
                      "error_type": type(e).__name__,
                      "mode": mode_name, "seed": seed}
        elapsed = time.perf_counter() - t0
        result["_elapsed_ms"] = round(elapsed * 1000, 1)
        return result

    def run(self) -> Dict[str, Any]:
        """All seeds in order, then the join and the output files."""
        try:
            self.validate()
        except ConfigError as e:
            return {"success": False, "error": str(e),
                    "error_type": "ConfigError", "field": e.field}

        t0 = time.perf_counter()
        seed_reports: List[SeedReport] = []
        for seed in self.cfg.seeds:
            result = self.execute_mode(self.cfg.mode, seed)
            if not result["success"]:
                return result
            logger.info("Seed %d done in %.1f ms: final acc %.4f", seed,
                        result["_elapsed_ms"],
                        result["report"].final_accuracy)
            seed_reports.append(result["report"])

        report = RunReport(self.cfg.to_dict(), self.cfg.mode, seed_reports,
                           time.perf_counter() - t0, LOSSES_FILE)
        paths = self.write_outputs(report)
        return {"success": True, "report": report, "paths": paths,
                "_elapsed_ms": round(report.wall_clock_seconds * 1000, 1)}

    def write_outputs(self, report: RunReport) -> Dict[str, str]:
        out = self.cfg.output_dir
        os.makedirs(out, exist_ok=True)
        paths = {
            "report": os.path.join(out, REPORT_FILE),
            "losses": os.path.join(out, LOSSES_FILE),
            "ledger": os.path.join(out, LEDGER_FILE),
            "chart": os.path.join(out, CHART_FILE),
        }
        report.write_json(paths["report"])
        write_losses_csv(report.seeds, paths["losses"])
        write_ledger_csv(report.seeds, paths["ledger"])
        emit_svg({f"seed {s.seed}": s.series for s in report.seeds},
                 paths["chart"], title=f"{report.mode} accuracy",
                 x_label=_X_LABELS.get(report.mode, "step"))
        if self.cfg.save_checkpoints:
            for s in report.seeds:
                if s.model is None:
                    continue
                ckpt_dir = os.path.join(out, "checkpoints", f"seed{s.seed}")
                os.makedirs(ckpt_dir, exist_ok=True)
                paths[f"checkpoint_seed{s.seed}"] = os.path.join(
                    ckpt_dir, CHECKPOINT_FILE)
                save_checkpoint(s.model, paths[f"checkpoint_seed{s.seed}"])
        return paths
