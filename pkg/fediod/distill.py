"""
Two-space distillation: every loss term and the per-step update.

Input space:  G learns transfer inputs that fool each local D_k (GAN term),
              make teachers confident (L_conf) and mutually divergent
              (L_unique = -JSD).
Output space: S mimics the importance-weighted ensemble of teacher logits
              (L_mimic); G plays critic on the same term.

Per step (in this order): every D_k, then G on
    λ_conf·L_conf + λ_unique·L_unique − λ_mimic·L_mimic + λ_gan·Σ_k loss_G_k
then S on L_mimic (once on this batch, then on replayed ones).  Teachers
are frozen and never stepped.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from .core import (
    LOG_GUARD,
    Adam,
    Tensor,
    affine,
    as_tensor,
    backward,
    clamp,
    detach,
    log_softmax,
    mul,
    reduce,
    safe_log,
    softmax_tau,
)
from .data import PartitionSpec, class_prior_matrix
from .errors import DistillationError, FediodError, NumericalError, ShapeError
from .nets import Network, NoiseSpec, discriminator_scalar, sample_noise
from .privacy import Release

logger = logging.getLogger(__name__)

_PROB_TOL = 1e-6
_RUNNING_FLOOR = 1e-6
_SCORE_HI = 1.0 - LOG_GUARD


# ======================================================================
# Entropy and divergence
# ======================================================================

def _check_probs(q: Tensor):
    v = q.values
    if np.any(v < -_PROB_TOL) or np.any(np.abs(v.sum(axis=-1) - 1.0) > _PROB_TOL):
        raise ValueError("input is not a probability vector")


def shannon_entropy(q) -> Tensor:
    """-Σ_c q_c log q_c along the last axis (natural log, 0·log 0 = 0)."""
    q = as_tensor(q)
    _check_probs(q)
    return -reduce("sum", mul(q, safe_log(q)), axis=-1)


def _check_weights(pi: Sequence[float], k: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (k,):
        raise ShapeError(f"{pi.size} weights for {k} distributions")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")
    return pi


def loss_conf(teacher_probs: Sequence[Tensor], pi: Sequence[float]) -> Tensor:
    """E_x[Σ_k π_k H(q_k(x))]."""
    pi = _check_weights(pi, len(teacher_probs))
    total = None
    for q, w in zip(teacher_probs, pi):
        term = mul(shannon_entropy(q), float(w))
        total = term if total is None else total + term
    return reduce("mean", total)


def jsd(probs: Sequence[Tensor], pi: Sequence[float]) -> Tensor:
    """H(q̄) − Σ_k π_k H(q_k) with q̄ = Σ_k π_k q_k, per row."""
    pi = _check_weights(pi, len(probs))
    probs = [as_tensor(q) for q in probs]
    shape = probs[0].shape
    if any(q.shape != shape for q in probs):
        raise ShapeError("probability rows must share one shape")
    mixture = None
    inner = None
    for q, w in zip(probs, pi):
        weighted = mul(q, float(w))
        h = mul(shannon_entropy(q), float(w))
        mixture = weighted if mixture is None else mixture + weighted
        inner = h if inner is None else inner + h
    return shannon_entropy(mixture) - inner


def loss_unique(teacher_probs: Sequence[Tensor], pi: Sequence[float]) -> Tensor:
    """E_x[−JSD(q_1(x), …, q_K(x))]."""
    return -reduce("mean", jsd(teacher_probs, pi))


# ======================================================================
# Adversarial term
# ======================================================================

def _check_scores(d: Tensor, label: str):
    if np.any(d.values < 0.0) or np.any(d.values > 1.0):
        raise ValueError(f"{label} scores outside (0, 1)")


def gan_losses(d_real: Tensor, d_fake: Tensor,
               pi_k: float) -> Tuple[Tensor, Tensor]:
    """Non-saturating GAN pair for node k.

    loss_D = −mean log d_real − mean log(1 − d_fake)
    loss_G = −π_k · mean log d_fake
    """
    d_real, d_fake = as_tensor(d_real), as_tensor(d_fake)
    _check_scores(d_real, "real")
    _check_scores(d_fake, "fake")
    loss_d = (-reduce("mean", safe_log(d_real))
              - reduce("mean", safe_log(1.0 - d_fake)))
    return loss_d, generator_gan_term(d_fake, pi_k)


def generator_gan_term(d_fake: Tensor, pi_k: float) -> Tensor:
    """−π_k · mean log D_k(G(w)); the non-saturating generator side."""
    return mul(reduce("mean", safe_log(d_fake)), -float(pi_k))


# ======================================================================
# Importance weighting and aggregation
# ======================================================================

@dataclass
class ImportanceWeights:
    pi: np.ndarray              # batch x K x C, Σ_k = 1 per (x, c)
    unnormalized: np.ndarray    # batch x K x C

    @property
    def num_nodes(self) -> int:
        return self.pi.shape[1]


def importance_weights(prior: Union[PartitionSpec, np.ndarray],
                       d_scalar: np.ndarray,
                       d_real_running: np.ndarray) -> ImportanceWeights:
    """π̂_k^c(x) = prior_ratio[k, c] · D_k(x) / E[D_k(x'_k)], then normalised
    over k for every (x, c).

    prior: a PartitionSpec, or the K x C prior-ratio matrix the server
    builds from uploaded label counts; d_scalar: K x batch; d_real_running: K.
    """
    if isinstance(prior, PartitionSpec):
        prior = class_prior_matrix(prior.label_histogram)
    prior_ratio = np.asarray(prior, dtype=np.float64)
    d_scalar = np.asarray(d_scalar, dtype=np.float64)
    running = np.asarray(d_real_running, dtype=np.float64)
    k, c = prior_ratio.shape
    if d_scalar.ndim != 2 or d_scalar.shape[0] != k or running.shape != (k,):
        raise ShapeError(f"importance weights: priors {prior_ratio.shape}, "
                         f"scores {d_scalar.shape}, running {running.shape}")
    if np.any(running <= 0):
        raise ValueError("running real-score means must be positive")

    ratio = d_scalar / running[:, None]                     # K x batch
    raw = ratio.T[:, :, None] * prior_ratio[None, :, :]     # batch x K x C
    totals = raw.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        cls = sorted(set(np.argwhere(totals[:, 0, :] <= 0)[:, 1].tolist()))
        raise FediodError(
            f"no node carries weight for classes {cls}: check the partition")
    return ImportanceWeights(raw / totals, raw)


def uniform_weights(k: int, batch: int, c: int) -> ImportanceWeights:
    """Conventional ensemble: 1/K for every node, sample and class."""
    raw = np.full((batch, k, c), 1.0 / k)
    return ImportanceWeights(raw.copy(), raw)


def aggregate_logits(z: Sequence[Tensor], iw: ImportanceWeights) -> Tensor:
    """A = Σ_k π_k(x) ⊙ z_k."""
    if len(z) != iw.num_nodes:
        raise ShapeError(f"{len(z)} teachers for {iw.num_nodes} weight columns")
    total = None
    for k, zk in enumerate(z):
        zk = as_tensor(zk)
        w = iw.pi[:, k, :]
        if zk.shape != w.shape:
            raise ShapeError(f"logits {zk.shape} vs weights {w.shape}")
        term = mul(zk, Tensor._wrap(w))
        total = term if total is None else total + term
    return total


def loss_mimic(student_logits: Tensor, aggregated: Tensor) -> Tensor:
    """Batch-mean squared L2 distance between S(x) and A(x)."""
    student_logits, aggregated = as_tensor(student_logits), as_tensor(aggregated)
    if student_logits.shape != aggregated.shape:
        raise ShapeError(f"mimic: {student_logits.shape} vs {aggregated.shape}")
    diff = student_logits - aggregated
    return reduce("mean", reduce("sum", diff.square(), axis=-1))


def loss_mimic_kl(student_logits: Tensor, aggregated: Tensor,
                  tau: float) -> Tensor:
    """KL(softmax(A/τ) ‖ softmax(S/τ)), batch mean; the finite-τ variant."""
    student_logits, aggregated = as_tensor(student_logits), as_tensor(aggregated)
    if student_logits.shape != aggregated.shape:
        raise ShapeError(f"mimic: {student_logits.shape} vs {aggregated.shape}")
    log_t = log_softmax(aggregated, tau)
    log_s = log_softmax(student_logits, tau)
    p_t = softmax_tau(aggregated, tau)
    return reduce("mean", reduce("sum", mul(p_t, log_t - log_s), axis=-1))


# ======================================================================
# Replay
# ======================================================================

class ReplayPool:
    """Reservoir of past transfer batches and the ensemble targets the
    server already received for them.

    Every batch ever added has the same chance of being held; once full, a
    new batch replaces a random slot with probability capacity / seen.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError(f"replay capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self.batches: List[Tuple[np.ndarray, np.ndarray]] = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.batches)

    def add(self, x: np.ndarray, target: np.ndarray,
            rng: np.random.Generator):
        if self.capacity == 0:
            return
        self.seen += 1
        item = (np.array(x, dtype=np.float64), np.array(target, dtype=np.float64))
        if len(self.batches) < self.capacity:
            self.batches.append(item)
            return
        slot = int(rng.integers(0, self.seen))
        if slot < self.capacity:
            self.batches[slot] = item

    def sample(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        if not self.batches:
            raise IndexError("replay pool is empty")
        return self.batches[int(rng.integers(0, len(self.batches)))]


# ======================================================================
# Step state
# ======================================================================

@dataclass(frozen=True)
class DistillSettings:
    batch_size: int = 64
    noise_dim: int = 32
    lr_generator: float = 1e-3
    lr_student: float = 1e-3
    lr_discriminator: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    tau: float = 1.0
    lambda_gan: float = 1.0
    lambda_conf: float = 1.0
    lambda_unique: float = 1.0
    lambda_mimic: float = 1.0
    ensemble: str = "importance"        # importance | average
    mimic: str = "l2"                   # l2 | kl
    gan_weighting: str = "local"        # local | average
    running_decay: float = 0.9
    warmup_steps: int = 0
    student_steps: int = 1              # S updates per round
    replay_batches: int = 0             # 0 = train S on the current batch only
    total_steps: int = 0                # cosine horizon; 0 = constant lr

    @property
    def student_horizon(self) -> int:
        if not self.total_steps:
            return 0
        return max(self.total_steps - self.warmup_steps, 1) * self.student_steps


@dataclass
class LossBundle:
    step_index: int
    l_gan_per_node: List[float]
    l_conf: float
    l_unique: float
    l_mimic: float

    def check(self):
        values = self.l_gan_per_node + [self.l_conf, self.l_unique, self.l_mimic]
        if not all(np.isfinite(values)):
            raise DistillationError("non-finite loss", self.step_index)
        if self.l_conf < -1e-9 or self.l_unique > 1e-9 or self.l_mimic < -1e-9:
            raise DistillationError(
                f"loss bundle out of range: conf={self.l_conf}, "
                f"unique={self.l_unique}, mimic={self.l_mimic}",
                self.step_index)

    def as_row(self) -> List[float]:
        return [self.step_index, *self.l_gan_per_node,
                self.l_conf, self.l_unique, self.l_mimic]


class NodeLink:
    """What the server sees of a node's answers.

    The default link delivers values untouched; the federation channel
    overrides it to log bytes and sanitize.
    """

    def broadcast(self, k: int, x: np.ndarray):
        pass

    def upload(self, k: int, kind: str, rows: np.ndarray) -> Release:
        return Release(rows)


@dataclass
class DistillState:
    """Server-side optimizers and statistics carried across steps."""

    generator: Network
    student: Network
    discriminators: List[Network]
    prior_ratio: np.ndarray             # K x C
    local_weights: np.ndarray           # K
    settings: DistillSettings
    opt_generator: Adam = None
    opt_student: Adam = None
    opt_discriminators: List[Adam] = None
    d_real_running: np.ndarray = None
    step: int = 0
    replay: ReplayPool = None

    def __post_init__(self):
        s = self.settings
        horizon = s.total_steps
        if self.opt_generator is None:
            self.opt_generator = Adam(self.generator.parameters(),
                                      s.lr_generator, s.beta1, s.beta2,
                                      total_steps=horizon)
        if self.opt_student is None:
            self.opt_student = Adam(self.student.parameters(), s.lr_student,
                                    s.beta1, s.beta2,
                                    total_steps=s.student_horizon)
        if self.opt_discriminators is None:
            self.opt_discriminators = [
                Adam(d.parameters(), s.lr_discriminator, s.beta1, s.beta2,
                     total_steps=horizon)
                for d in self.discriminators]
        if self.d_real_running is None:
            self.d_real_running = np.full(len(self.discriminators), 0.5)
        if self.replay is None:
            self.replay = ReplayPool(s.replay_batches)

    @property
    def num_nodes(self) -> int:
        return len(self.discriminators)

    @property
    def gan_weights(self) -> np.ndarray:
        if self.settings.gan_weighting == "average":
            return np.full(self.num_nodes, 1.0 / self.num_nodes)
        return self.local_weights


def _guarded(name: str, step: int, fn: Callable):
    try:
        return fn()
    except NumericalError as e:
        raise DistillationError(f"step {step}: {name} failed: {e}",
                                step, name) from e


def _received(link: NodeLink, k: int, kind: str, t: Tensor) -> Tensor:
    """Pass a node-side tensor through the link, keeping the graph."""
    release = link.upload(k, kind, t.values)
    if not release.sanitized:
        return t
    return affine(t, release.scale, release.noise)


# ======================================================================
# Objectives
# ======================================================================

@dataclass
class TeacherView:
    logits: List[Tensor]
    probs: List[Tensor]
    scores: List[Tensor]        # batch x 1 discriminator realness


def observe(x: Tensor, teachers: Sequence[Network],
            discs: Sequence[Network], settings: DistillSettings,
            link: NodeLink) -> TeacherView:
    """Node-side forward passes on generated *x* and the upload to server."""
    view = TeacherView([], [], [])
    for k, (teacher, disc) in enumerate(zip(teachers, discs)):
        link.broadcast(k, x.values)
        z = _received(link, k, "logits", teacher(x))
        score = discriminator_scalar(disc(x))
        score = clamp(_received(link, k, "disc_scores", score),
                      LOG_GUARD, _SCORE_HI)
        view.logits.append(z)
        view.probs.append(softmax_tau(z, settings.tau))
        view.scores.append(score)
    return view


def ensemble_weights(state: DistillState, view: TeacherView) -> ImportanceWeights:
    batch, c = view.logits[0].shape
    if state.settings.ensemble == "average":
        return uniform_weights(state.num_nodes, batch, c)
    d_scalar = np.stack([s.values[:, 0] for s in view.scores])
    return importance_weights(state.prior_ratio, d_scalar, state.d_real_running)


def mimic_term(settings: DistillSettings, student_logits: Tensor,
               aggregated: Tensor) -> Tensor:
    if settings.mimic == "kl":
        return loss_mimic_kl(student_logits, aggregated, settings.tau)
    return loss_mimic(student_logits, aggregated)


def generator_objective(state: DistillState, view: TeacherView,
                        student_logits: Tensor,
                        iw: ImportanceWeights,
                        include_mimic: bool = True) -> Tuple[Tensor, Dict[str, Tensor]]:
    """λ_conf·L_conf + λ_unique·L_unique − λ_mimic·L_mimic + λ_gan·Σ loss_G_k.

    With *include_mimic* off (warm-up) the critic term is dropped.
    """
    s = state.settings
    pi = state.local_weights
    parts = {
        "conf": loss_conf(view.probs, pi),
        "unique": loss_unique(view.probs, pi),
        "mimic": mimic_term(s, student_logits, aggregate_logits(view.logits, iw)),
    }
    gan = None
    for score, w in zip(view.scores, state.gan_weights):
        g = generator_gan_term(score, w)
        gan = g if gan is None else gan + g
    parts["gan"] = gan
    total = (mul(parts["conf"], s.lambda_conf)
             + mul(parts["unique"], s.lambda_unique)
             + mul(parts["gan"], s.lambda_gan))
    if include_mimic:
        total = total - mul(parts["mimic"], s.lambda_mimic)
    return total, parts


# ======================================================================
# One step
# ======================================================================

def distill_step(generator: Network, student: Network,
                 teachers: Sequence[Network], discs: Sequence[Network],
                 real_batches: Sequence[np.ndarray], rng: np.random.Generator,
                 state: DistillState, link: NodeLink = None,
                 noise: Tensor = None) -> LossBundle:
    """One round of D_k, G and S updates; returns the realised losses.

    *noise* pins the generator input (otherwise drawn from *rng*).  Frozen
    networks are never stepped, so freezing G or D_k isolates the others.
    """
    s = state.settings
    link = link or NodeLink()
    step = state.step
    if any(not t.frozen for t in teachers):
        raise DistillationError("teachers must be frozen before distillation",
                                step, "setup")
    if noise is None:
        noise = sample_noise(NoiseSpec(s.noise_dim), s.batch_size, rng)
    x = _guarded("generator", step, lambda: generator(noise))
    x_const = detach(x)

    # -- Discriminators --
    l_gan = []
    for k, (disc, opt) in enumerate(zip(discs, state.opt_discriminators)):
        real = Tensor(real_batches[k])

        def d_loss():
            d_real = discriminator_scalar(disc(real))
            d_fake = discriminator_scalar(disc(x_const))
            loss_d, _ = gan_losses(d_real, d_fake, state.gan_weights[k])
            return loss_d, d_real

        loss_d, d_real = _guarded(f"gan[{k}]", step, d_loss)
        decay = s.running_decay
        state.d_real_running[k] = max(
            _RUNNING_FLOOR,
            decay * state.d_real_running[k] + (1 - decay) * d_real.values.mean())
        if not disc.frozen:
            opt.zero_grad()
            backward(loss_d)
            opt.step()
        l_gan.append(loss_d.item())

    # -- Teachers, losses, generator --
    view = _guarded("teachers", step,
                    lambda: observe(x, teachers, discs, s, link))
    iw = ensemble_weights(state, view)
    in_warmup = step < s.warmup_steps
    student_logits = _guarded("student", step, lambda: student(x))
    total, parts = _guarded("generator objective", step,
                            lambda: generator_objective(state, view, student_logits,
                                                        iw, not in_warmup))
    if not generator.frozen:
        state.opt_generator.zero_grad()
        backward(total)
        state.opt_generator.step()

    # -- Student: this batch first, then replayed ones; generator held --
    target = aggregate_logits([detach(z) for z in view.logits], iw)
    if not student.frozen and not in_warmup:
        for i in range(s.student_steps):
            if i == 0 or len(state.replay) == 0:
                xb, tb = x_const, target
            else:
                past_x, past_t = state.replay.sample(rng)
                xb, tb = Tensor(past_x), Tensor(past_t)
            loss_s = _guarded("mimic", step,
                              lambda: mimic_term(s, student(xb), tb))
            state.opt_student.zero_grad()
            backward(loss_s)
            state.opt_student.step()
    state.replay.add(x_const.values, target.values, rng)

    for d in discs:
        d.zero_grad()
    student.zero_grad()
    generator.zero_grad()

    bundle = LossBundle(step, l_gan, parts["conf"].item(),
                        parts["unique"].item(), parts["mimic"].item())
    bundle.check()
    state.step += 1
    logger.debug("step %d: gan=%s conf=%.4f unique=%.4f mimic=%.4f",
                 step, ["%.4f" % v for v in l_gan], bundle.l_conf,
                 bundle.l_unique, bundle.l_mimic)
    return bundle
