"""
In-process message channel with byte accounting.

Every simulated message is appended to the CommLedger as one record:
sender, receiver, payload kind, fp64 byte count (8 per element), round and
whether the payload was sanitized before release.
"""

import csv
import logging
from collections import Counter
from dataclasses import astuple, dataclass, fields
from typing import Dict, List

import numpy as np

from ..distill import NodeLink
from ..errors import ProtocolError
from ..privacy import DpConfig, Release, sanitize_rows

logger = logging.getLogger(__name__)

SERVER = "server"

PAYLOAD_KINDS = (
    "model_params",
    "logits",
    "disc_scores",
    "label_counts",
    "generated_batch",
    "gradient",
)

# Node -> server payloads that go through the sanitizer when DP is on.
SANITIZED_KINDS = ("logits", "disc_scores")

BYTES_PER_ELEMENT = 8


def node_name(k: int) -> str:
    return f"node{k}"


@dataclass(frozen=True)
class LedgerRecord:
    sender: str
    receiver: str
    payload_kind: str
    bytes: int
    round: int
    sanitized: bool = False


class CommLedger:
    """Append-only message log."""

    def __init__(self):
        self._records: List[LedgerRecord] = []

    def append(self, record: LedgerRecord):
        if record.payload_kind not in PAYLOAD_KINDS:
            raise ProtocolError(f"Unknown payload kind: '{record.payload_kind}'")
        self._records.append(record)

    @property
    def records(self) -> List[LedgerRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def total_bytes(self, kind: str = None) -> int:
        return sum(r.bytes for r in self._records
                   if kind is None or r.payload_kind == kind)

    def totals_by_kind(self) -> Dict[str, int]:
        """Bytes per payload kind; every kind present, zero when unused."""
        totals = dict.fromkeys(PAYLOAD_KINDS, 0)
        for r in self._records:
            totals[r.payload_kind] += r.bytes
        return totals

    def counts_by_kind(self) -> Dict[str, int]:
        return dict(Counter(r.payload_kind for r in self._records))

    def to_csv(self, path: str, seed: int = None, append: bool = False):
        """Dump records; a ``seed`` column is prepended when *seed* is given."""
        header = [f.name for f in fields(LedgerRecord)]
        if seed is not None:
            header = ["seed"] + header
        with open(path, "a" if append else "w", encoding="utf-8",
                  newline="") as f:
            writer = csv.writer(f)
            if not append:
                writer.writerow(header)
            for r in self._records:
                row = list(astuple(r))
                writer.writerow([seed] + row if seed is not None else row)


class Channel(NodeLink):
    """Routes payloads between server and nodes, logging each message.

    With DP enabled, node->server logits and discriminator scores are
    sanitized exactly once, on the node side, each node with its own noise
    stream.
    """

    def __init__(self, ledger: CommLedger, dp: DpConfig = None):
        self.ledger = ledger
        self.dp = dp or DpConfig()
        self.round = 0
        self.sanitize_count = 0
        self._node_dp: Dict[int, DpConfig] = {}

    def _dp_for(self, k: int) -> DpConfig:
        if k not in self._node_dp:
            self._node_dp[k] = self.dp.spawn(k)
        return self._node_dp[k]

    def send(self, sender: str, receiver: str, kind: str, payload,
             round: int = None, sanitize_with: DpConfig = None) -> Release:
        """Deliver *payload*, log it, and return what the receiver sees."""
        payload = np.asarray(payload, dtype=np.float64)
        if sanitize_with is not None and sanitize_with.enabled:
            release = sanitize_rows(payload, sanitize_with)
            self.sanitize_count += 1
        else:
            release = Release(payload)
        self.ledger.append(LedgerRecord(
            sender, receiver, kind, BYTES_PER_ELEMENT * int(payload.size),
            self.round if round is None else round, release.sanitized))
        return release

    # -- NodeLink --

    def broadcast(self, k: int, x: np.ndarray):
        self.send(SERVER, node_name(k), "generated_batch", x)

    def upload(self, k: int, kind: str, rows: np.ndarray) -> Release:
        dp = self._dp_for(k) if kind in SANITIZED_KINDS else None
        return self.send(node_name(k), SERVER, kind, rows, sanitize_with=dp)
