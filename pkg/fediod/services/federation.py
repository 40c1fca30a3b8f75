"""
FederationService: the four experiment protocols over one partition.

  - local_train / train_locals: stage 1, each teacher on its own shard
  - run_fediod:      one-way distillation into the central student
  - run_fedavg:      parameter-averaging baseline
  - run_standalone:  every node alone, evaluated on the global test set
  - run_centralized: one model on the pooled shards (upper bound)
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from ..config import DistillConfig, FedAvgConfig, LocalConfig
from ..core import SGD, Adam, Tensor, backward, cross_entropy
from ..data import Dataset, class_prior_matrix, heterogeneity
from ..distill import DistillSettings, DistillState, distill_step
from ..errors import PartitionError, ProtocolError
from ..metrics import adapted_inception_score
from ..nets import Network, NoiseSpec, build, sample_noise
from ..privacy import DpConfig
from ..report import SeedReport
from .channel import SERVER, Channel, CommLedger, node_name

logger = logging.getLogger(__name__)


class Phase(enum.IntEnum):
    LOCAL_TRAINING = 0
    DISTILLATION = 1
    DONE = 2


@dataclass
class LocalNode:
    id: int
    shard: Dataset
    teacher: Network
    discriminator: Network
    label_counts: np.ndarray
    rng: np.random.Generator
    train_log: Dict[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.shard)


@dataclass
class FederationState:
    nodes: List[LocalNode]
    generator: Network
    student: Network
    channel: Channel
    phase: Phase = Phase.LOCAL_TRAINING
    round: int = 0
    server_state: Optional[DistillState] = None
    global_model: Optional[Network] = None

    @property
    def ledger(self) -> CommLedger:
        return self.channel.ledger

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def teachers(self) -> List[Network]:
        return [n.teacher for n in self.nodes]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([n.size for n in self.nodes], dtype=np.float64)

    def advance(self, phase: Phase):
        """Move forward to *phase*; phases never go back."""
        if phase < self.phase:
            raise ProtocolError(
                f"Cannot go back from {self.phase.name} to {phase.name}")
        if phase != self.phase:
            logger.info("Phase %s -> %s", self.phase.name, phase.name)
        self.phase = phase


def evaluate(model: Network, test: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    logits = model(Tensor(test.inputs)).values
    return float(np.mean(np.argmax(logits, axis=1) == test.labels))


def _fit(net: Network, ds: Dataset, epochs: int, lr: float, batch_size: int,
         optimizer: str, rng: np.random.Generator,
         on_epoch: Callable[[int, float], None] = None) -> List[float]:
    """Cross-entropy training; returns the mean loss of every epoch."""
    opt = (Adam(net.parameters(), lr) if optimizer == "adam"
           else SGD(net.parameters(), lr))
    n = len(ds)
    batch = n if batch_size <= 0 else min(batch_size, n)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss = cross_entropy(net(Tensor(ds.inputs[idx])), ds.labels[idx])
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += loss.item() * idx.size
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch + 1, history[-1])
    net.zero_grad()
    return history


def _flat(net: Network) -> np.ndarray:
    return np.concatenate([p.values.ravel() for p in net.parameters()])


def _eval_points(total: int, interval: int) -> set:
    points = set(range(interval, total + 1, interval))
    points.add(total)
    return points


class FederationService:
    """Builds per-seed federation state and runs the protocols on it."""

    def __init__(self, registry):
        self._registry = registry
        self.base = registry.base
        self.cfg = registry.base.cfg

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def build_state(self) -> FederationState:
        base, cfg = self.base, self.cfg
        arch = cfg.architectures
        part = base.partition
        d, c = base.train.dim, base.train.num_classes
        nodes = []
        for k in range(part.num_nodes):
            teacher = build("teacher", [d, *arch.teacher_hidden(k), c],
                            arch.activation, base.init_seed("teacher", k))
            disc = build("discriminator",
                         [d, *arch.discriminator, arch.patch ** 2],
                         arch.activation, base.init_seed("discriminator", k))
            nodes.append(LocalNode(k, base.shard(k), teacher, disc,
                                   part.label_histogram[k].copy(),
                                   base.rng("nodes", k)))
        generator = build("generator",
                          [cfg.distill.noise_dim, *arch.generator, d],
                          arch.activation, base.init_seed("generator"))
        student = build("student", [d, *arch.student, c], arch.activation,
                        base.init_seed("student"))
        dp = DpConfig(cfg.dp.clip_norm, cfg.dp.noise_multiplier,
                      cfg.dp.enabled,
                      seed=int(base.rng("dp").integers(0, 2**31 - 1)))
        state = FederationState(nodes, generator, student,
                                Channel(CommLedger(), dp))
        logger.info("Federation built: %d nodes, d=%d, C=%d, dp=%s",
                    len(nodes), d, c, dp.enabled)
        return state

    # ------------------------------------------------------------------
    # Stage 1
    # ------------------------------------------------------------------

    def local_train(self, state: FederationState, node: LocalNode,
                    epochs: int = None, hp: LocalConfig = None) -> Dict[str, Any]:
        """Train node's teacher on its shard only, then freeze it."""
        hp = hp or self.cfg.local
        epochs = epochs or hp.epochs
        if state.phase != Phase.LOCAL_TRAINING:
            raise ProtocolError(
                f"local training requested in phase {state.phase.name}")
        if node.size == 0:
            raise PartitionError(f"node {node.id} has an empty shard")
        history = _fit(node.teacher, node.shard, epochs, hp.lr, hp.batch_size,
                       hp.optimizer, self.base.rng("local", node.id))
        node.teacher.freeze()
        node.train_log = {
            "node": node.id,
            "epochs": epochs,
            "final_loss": history[-1],
            "train_accuracy": evaluate(node.teacher, node.shard),
            "losses": history,
        }
        logger.info("Node %d trained: %d samples, train acc %.4f",
                    node.id, node.size, node.train_log["train_accuracy"])
        return node.train_log

    def train_locals(self, state: FederationState,
                     hp: LocalConfig = None) -> List[float]:
        """Stage 1 for every node; returns teacher accuracies on the test set."""
        for node in state.nodes:
            self.local_train(state, node, hp=hp)
        return [evaluate(n.teacher, self.base.test) for n in state.nodes]

    # ------------------------------------------------------------------
    # FedIOD
    # ------------------------------------------------------------------

    def _real_batch(self, node: LocalNode, batch: int) -> np.ndarray:
        idx = node.rng.choice(node.size, size=batch, replace=node.size < batch)
        return node.shard.inputs[idx]

    def run_fediod(self, state: FederationState, steps: int = None,
                   hp: DistillConfig = None) -> SeedReport:
        hp = hp or self.cfg.distill
        steps = steps or hp.steps
        interval = self.cfg.eval_interval
        if any(not t.frozen for t in state.teachers):
            raise ProtocolError("distillation requires every local teacher "
                                "to finish training first")
        state.advance(Phase.DISTILLATION)
        channel = state.channel
        before = [t.checksum() for t in state.teachers]

        channel.round = 0
        counts = np.stack([
            channel.send(node_name(n.id), SERVER, "label_counts",
                         n.label_counts).values
            for n in state.nodes])
        prior = class_prior_matrix(counts)
        pi = counts.sum(axis=1) / counts.sum()

        settings = DistillSettings(
            batch_size=hp.batch_size, noise_dim=hp.noise_dim,
            lr_generator=hp.lr_generator, lr_student=hp.lr_student,
            lr_discriminator=hp.lr_discriminator, beta1=hp.beta1,
            beta2=hp.beta2, tau=hp.tau, lambda_gan=hp.lambda_gan,
            lambda_conf=hp.lambda_conf, lambda_unique=hp.lambda_unique,
            lambda_mimic=hp.lambda_mimic, ensemble=hp.ensemble,
            mimic=hp.mimic, gan_weighting=hp.gan_weighting,
            running_decay=hp.running_decay, warmup_steps=hp.warmup_steps,
            student_steps=hp.student_steps, replay_batches=hp.replay_batches,
            total_steps=steps if hp.cosine else 0)
        discs = [n.discriminator for n in state.nodes]
        dstate = DistillState(state.generator, state.student, discs,
                              prior, pi, settings)
        state.server_state = dstate
        rng = self.base.rng("distill")
        test = self.base.test

        losses, series = [], []
        points = _eval_points(steps, interval)
        for i in range(steps):
            channel.round = state.round = i + 1
            real = [self._real_batch(n, settings.batch_size)
                    for n in state.nodes]
            bundle = distill_step(state.generator, state.student,
                                  state.teachers, discs, real, rng, dstate,
                                  link=channel)
            names = [f"gan_{k}" for k in range(state.num_nodes)]
            names += ["conf", "unique", "mimic"]
            losses.extend((i + 1, name, value)
                          for name, value in zip(names, bundle.as_row()[1:]))
            if i + 1 in points:
                acc = evaluate(state.student, test)
                series.append((i + 1, acc))
                logger.info("step %d/%d: student acc %.4f, mimic %.4f",
                            i + 1, steps, acc, bundle.l_mimic)

        after = [t.checksum() for t in state.teachers]
        if after != before:
            raise ProtocolError("a frozen teacher changed during distillation")

        noise = sample_noise(NoiseSpec(settings.noise_dim),
                             max(settings.batch_size, 2), rng)
        generated = state.generator(noise).values
        state.generator.zero_grad()
        ais = adapted_inception_score(generated, state.teachers, pi,
                                      settings.tau)
        state.advance(Phase.DONE)
        return SeedReport(
            seed=self.base.seed, mode="fediod", series=series,
            final_accuracy=series[-1][1], losses=losses,
            ledger=state.ledger, model=state.student,
            extras={
                "adapted_inception_score": ais,
                "heterogeneity": heterogeneity(self.base.partition),
                "teacher_checksums_unchanged": True,
                "sanitized_payloads": channel.sanitize_count,
            })

    # ------------------------------------------------------------------
    # Baselines
    # ------------------------------------------------------------------

    def run_fedavg(self, state: FederationState, rounds: int = None,
                   local_epochs: int = None,
                   hp: FedAvgConfig = None) -> SeedReport:
        """π-weighted parameter averaging; the server starts from node 0's
        initial weights."""
        hp = hp or self.cfg.fedavg
        rounds = rounds or hp.rounds
        local_epochs = local_epochs or hp.local_epochs
        archs = {tuple(n.teacher.arch) for n in state.nodes}
        if len(archs) > 1:
            raise ProtocolError(
                f"FedAvg needs one shared architecture but nodes use "
                f"{sorted(archs)}; parameter averaging cannot combine "
                f"heterogeneous models")
        first = state.nodes[0].teacher
        server = build("student", first.arch,
                       self.cfg.architectures.activation)
        server.copy_from(first)
        state.global_model = server
        weights = state.sizes / state.sizes.sum()
        channel, test = state.channel, self.base.test

        series, losses = [], []
        for r in range(1, rounds + 1):
            channel.round = state.round = r
            uploads = []
            for node in state.nodes:
                channel.send(SERVER, node_name(node.id), "model_params",
                             _flat(server))
                node.teacher.copy_from(server)
                history = _fit(node.teacher, node.shard, local_epochs, hp.lr,
                               hp.batch_size, "sgd",
                               self.base.rng("local", node.id * 100_000 + r))
                losses.append((r, f"ce_{node.id}", history[-1]))
                channel.send(node_name(node.id), SERVER, "model_params",
                             _flat(node.teacher))
                uploads.append(node.teacher.parameters())
            for i, p in enumerate(server.parameters()):
                p.values = sum(w * params[i].values
                               for w, params in zip(weights, uploads))
            acc = evaluate(server, test)
            series.append((r, acc))
            logger.info("FedAvg round %d/%d: acc %.4f", r, rounds, acc)

        state.advance(Phase.DONE)
        return SeedReport(seed=self.base.seed, mode="fedavg", series=series,
                          final_accuracy=series[-1][1], losses=losses,
                          ledger=state.ledger, model=server,
                          extras={"heterogeneity":
                                  heterogeneity(self.base.partition)})

    def run_standalone(self, state: FederationState, epochs: int = None,
                       hp: LocalConfig = None) -> SeedReport:
        """Series x-axis is the node index."""
        accs = []
        losses = []
        for node in state.nodes:
            log = self.local_train(state, node, epochs, hp)
            losses.extend((e + 1, f"ce_{node.id}", v)
                          for e, v in enumerate(log["losses"]))
            accs.append(evaluate(node.teacher, self.base.test))
        state.advance(Phase.DONE)
        mean, std = float(np.mean(accs)), float(np.std(accs))
        logger.info("Standalone: %.4f +- %.4f over %d nodes",
                    mean, std, len(accs))
        return SeedReport(seed=self.base.seed, mode="standalone",
                          series=list(enumerate(accs)), final_accuracy=mean,
                          losses=losses, ledger=state.ledger,
                          extras={"node_accuracies": accs,
                                  "node_accuracy_std": std,
                                  "heterogeneity":
                                  heterogeneity(self.base.partition)})

    def run_centralized(self, state: FederationState, epochs: int = None,
                        hp: LocalConfig = None) -> SeedReport:
        hp = hp or self.cfg.local
        epochs = epochs or hp.epochs
        pooled = _pool([n.shard for n in state.nodes])
        arch = self.cfg.architectures
        model = build("student",
                      [pooled.dim, *arch.student, pooled.num_classes],
                      arch.activation, self.base.init_seed("student"))
        test = self.base.test
        points = _eval_points(epochs, self.cfg.eval_interval)
        series, losses = [], []

        def on_epoch(epoch: int, loss: float):
            losses.append((epoch, "ce", loss))
            if epoch in points:
                series.append((epoch, evaluate(model, test)))

        _fit(model, pooled, epochs, hp.lr, hp.batch_size, hp.optimizer,
             self.base.rng("baseline"), on_epoch)
        state.global_model = model
        state.advance(Phase.DONE)
        logger.info("Centralized: acc %.4f", series[-1][1])
        return SeedReport(seed=self.base.seed, mode="centralized",
                          series=series, final_accuracy=series[-1][1],
                          losses=losses, ledger=state.ledger, model=model)


def _pool(shards: Sequence[Dataset]) -> Dataset:
    return Dataset(np.concatenate([s.inputs for s in shards]),
                   np.concatenate([s.labels for s in shards]),
                   shards[0].num_classes, "pooled")
