"""
BaseService: shared per-seed infrastructure for the federation services.

Holds the run config and seed, loads the dataset once, takes the global
test hold-out, builds the Dirichlet partition, and hands out independent
random streams so every consumer draws from its own generator.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from ..config import RunConfig
from ..data import (
    Dataset,
    PartitionSpec,
    dirichlet_partition,
    load_idx,
    make_blobs,
    train_test_split,
)

logger = logging.getLogger(__name__)

# Fixed stream ids; adding a stream must not shift the others.
STREAMS = {
    "split": 0,
    "partition": 1,
    "init": 2,
    "local": 3,
    "distill": 4,
    "dp": 5,
    "nodes": 6,
    "baseline": 7,
}


class BaseService:
    """Per-seed data and randomness shared by every domain service."""

    def __init__(self, cfg: RunConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        self._dataset: Optional[Dataset] = None
        self._split: Optional[Tuple[Dataset, Dataset]] = None
        self._partition: Optional[PartitionSpec] = None
        self._registry = None   # set by ServiceRegistry after construction
        logger.info("BaseService initialized (seed=%d)", self.seed)

    # ------------------------------------------------------------------
    # Random streams
    # ------------------------------------------------------------------

    def rng(self, stream: str, index: int = 0) -> np.random.Generator:
        """Generator for (*stream*, *index*), independent of every other."""
        return np.random.default_rng([self.seed, STREAMS[stream], index])

    def init_seed(self, role: str, index: int = 0) -> int:
        """Integer seed for network initialisation of *role* number *index*."""
        role_id = ("teacher", "student", "generator", "discriminator").index(role)
        rng = self.rng("init", role_id * 10_000 + index)
        return int(rng.integers(0, 2**31 - 1))

    # ------------------------------------------------------------------
    # Data
    # ------------------------------------------------------------------

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            ds = self.cfg.dataset
            if ds.kind == "idx":
                self._dataset = load_idx(ds.images, ds.labels, ds.downsample_to)
            else:
                self._dataset = make_blobs(ds.num_classes, ds.per_class,
                                           ds.dim, ds.spread, ds.seed)
            logger.info("Dataset %s: %d samples, d=%d, C=%d",
                        self._dataset.name, len(self._dataset),
                        self._dataset.dim, self._dataset.num_classes)
        return self._dataset

    def _ensure_split(self) -> Tuple[Dataset, Dataset]:
        if self._split is None:
            split_seed = int(self.rng("split").integers(0, 2**31 - 1))
            self._split = train_test_split(
                self.dataset, self.cfg.federation.test_fraction, split_seed)
        return self._split

    @property
    def train(self) -> Dataset:
        return self._ensure_split()[0]

    @property
    def test(self) -> Dataset:
        return self._ensure_split()[1]

    @property
    def partition(self) -> PartitionSpec:
        if self._partition is None:
            fed = self.cfg.federation
            part_seed = int(self.rng("partition").integers(0, 2**31 - 1))
            self._partition = dirichlet_partition(self.train, fed.nodes,
                                                  fed.alpha, part_seed)
            self._partition.validate(self.train)
            logger.info("Partitioned %d samples over %d nodes (alpha=%g): %s",
                        len(self.train), fed.nodes, fed.alpha,
                        self._partition.sizes.tolist())
        return self._partition

    def shard(self, k: int) -> Dataset:
        return self.train.subset(self.partition.node_indices[k],
                                 f"{self.train.name}-node{k}")
