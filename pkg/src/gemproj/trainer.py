"""Training harness: per-step projection loop and multi-task experience loop.

One training step = backprop on the current minibatch, rebuild of the
constraint matrix from replay buffers, projection of the raw adapter
gradient by the configured method, optimizer step on phi, buffer update
for the current task, and warm-start carryover of the dual multipliers.
The projection always applies to the raw gradient, before any optimizer
preconditioning; with adamw the non-interference certificate therefore
holds pre-preconditioning only.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import adapter_model as am
from .datagen import ExperienceSplit
from .metrics import AccuracyMatrix, TimingRecord
from .projector import (
    ConstraintMatrix,
    DualState,
    MarginConfig,
    agem_project,
    exact_qp_project,
    pgd_project,
    violation_check,
)
from .replay import ReplayBuffer, build_constraint_matrix
from .spectral import SpectralEstimate, power_iteration, stepsize

METHODS = ("naive", "gem_exact", "agem", "igem")
OPTIMIZERS = ("sgd", "adamw")


class NonFiniteLossError(RuntimeError):
    """Raised when a step produces a non-finite loss; the run log already
    holds a diagnostic record when this fires."""


@dataclass(frozen=True)
class TrainConfig:
    method: str = "igem"
    lr: float = 0.001
    pgd_iterations: int = 3          # K, the fixed dual-PGD budget
    stepsize_safety: float = 0.7     # c in eta = c / sigma_hat
    train_mb_size: int = 32
    eval_mb_size: int = 50
    train_epochs: int = 1
    n_experiences: int = 3
    seed: int = 0
    optimizer: str = "sgd"
    adamw_beta1: float = 0.9
    adamw_beta2: float = 0.999
    adamw_eps: float = 1e-8
    weight_decay: float = 0.0
    normalize_rows: bool = True
    memory_strength: float = 0.3
    margin_enabled: bool = False
    skip_when_feasible: bool = False
    violation_tol: float = 0.0
    proj_interval: int = 1
    patterns_per_exp: int = 100
    memory_size: int = 150
    power_iters: int = 3
    spectral_refresh: int = 10
    qp_enum_limit: int = 16
    eval_every: int = 0              # 0 disables mid-task accuracy curves
    dump_buffers: bool = False       # snapshot replay buffers into the run log

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if self.method == "igem" and self.pgd_iterations < 1:
            raise ValueError("pgd_iterations must be >= 1 for igem")
        if self.proj_interval < 1:
            raise ValueError("proj_interval must be >= 1")

    def margin(self) -> MarginConfig:
        return MarginConfig(memory_strength=self.memory_strength, enabled=self.margin_enabled)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(d) - set(fields)
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class StepRecord:
    task: int
    step: int
    loss: float
    proj_time: float
    lambda_norm: float
    max_violation: float
    violation_before: float
    projected: bool
    timestamp: float


@dataclass
class RunLog:
    """Append-only per-step records plus per-checkpoint accuracy rows."""

    steps: list[StepRecord] = field(default_factory=list)
    checkpoints: list[dict] = field(default_factory=list)
    curve: list[dict] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    timing: TimingRecord = field(default_factory=TimingRecord)
    buffer_dump: dict | None = None

    def add_step(self, rec: StepRecord):
        if self.steps and rec.timestamp < self.steps[-1].timestamp:
            raise ValueError("step timestamps must be monotone")
        self.steps.append(rec)


@dataclass
class OptState:
    """Optimizer slots for the flat adapter vector."""

    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def optimizer_step(phi: np.ndarray, g_tilde: np.ndarray, opt: OptState, config: TrainConfig) -> np.ndarray:
    """Apply one update to phi and return the new vector.

    sgd:   phi <- phi - lr * g
    adamw: decoupled weight decay with bias-corrected moments,
           m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, t <- t+1,
           phi <- phi - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
                      - lr * wd * phi
    """
    if phi.shape != g_tilde.shape:
        raise ValueError("phi and gradient shapes differ")
    if config.optimizer == "sgd":
        new_phi = phi - config.lr * g_tilde
    else:
        if opt.m is None:
            opt.m = np.zeros_like(phi)
            opt.v = np.zeros_like(phi)
        opt.t += 1
        b1, b2 = config.adamw_beta1, config.adamw_beta2
        opt.m = b1 * opt.m + (1.0 - b1) * g_tilde
        opt.v = b2 * opt.v + (1.0 - b2) * g_tilde * g_tilde
        m_hat = opt.m / (1.0 - b1 ** opt.t)
        v_hat = opt.v / (1.0 - b2 ** opt.t)
        new_phi = phi - config.lr * m_hat / (np.sqrt(v_hat) + config.adamw_eps)
        if config.weight_decay:
            new_phi = new_phi - config.lr * config.weight_decay * phi
    if not np.all(np.isfinite(new_phi)):
        raise NonFiniteLossError("non-finite parameter update")
    return new_phi


@dataclass
class TrainerState:
    """Everything one run owns; a single state must not be shared across
    concurrent training steps."""

    config: TrainConfig
    model: am.TinyMlp
    buffers: ReplayBuffer
    rng: np.random.Generator
    opt: OptState = field(default_factory=OptState)
    log: RunLog = field(default_factory=RunLog)
    dual: DualState | None = None
    spectral: SpectralEstimate | None = None
    spectral_m: int = -1
    G: ConstraintMatrix | None = None
    steps_since_build: int = 0
    task_index: int = 0
    step_in_task: int = 0
    global_step: int = 0


def make_state(config: TrainConfig, model: am.TinyMlp) -> TrainerState:
    return TrainerState(
        config=config,
        model=model,
        buffers=ReplayBuffer(
            capacity_per_task=config.patterns_per_exp, total_cap=config.memory_size
        ),
        rng=np.random.default_rng([config.seed, 0x7A11]),
    )


def start_task(state: TrainerState, task_index: int):
    """Task-boundary bookkeeping: reset the dual multipliers to a cold start
    sized for the new constraint count and invalidate the spectral estimate."""
    state.task_index = task_index
    state.step_in_task = 0
    m = len([t for t in state.buffers.tasks() if t < task_index])
    state.dual = DualState.cold(m, task_index=task_index)
    state.spectral = None
    state.G = None
    state.steps_since_build = 0


def _refresh_spectral_if_stale(state: TrainerState, G: ConstraintMatrix):
    """Recompute the estimate every spectral_refresh projector calls or
    whenever the constraint count changes."""
    cfg = state.config
    est = state.spectral
    if est is None or state.spectral_m != G.rows or est.stale_steps >= cfg.spectral_refresh:
        state.spectral = power_iteration(G, iters=cfg.power_iters, seed=cfg.seed)
        state.spectral_m = G.rows
    else:
        est.stale_steps += 1


def _agem_reference_gradient(state: TrainerState, past: list[int]) -> np.ndarray:
    """Averaged gradient over eval_mb_size examples sampled uniformly from
    the union of all past buffers (resampled every projection)."""
    xs, ys = [], []
    for t in past:
        X, y = state.buffers.examples(t)
        xs.append(X)
        ys.append(y)
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    k = state.config.eval_mb_size
    if len(y) > k:
        idx = state.rng.choice(len(y), size=k, replace=False)
        X, y = X[idx], y[idx]
    _, g_ref = am.backward(state.model, X, y)
    return g_ref


def train_step(state: TrainerState, X, y) -> StepRecord:
    """One step of the training loop (loss, constraint build, projection,
    optimizer update, buffer update, warm-start carryover)."""
    cfg = state.config
    loss, g = am.backward(state.model, X, y)
    if not np.isfinite(loss) or not np.all(np.isfinite(g)):
        state.log.diagnostics.append(
            {"task": state.task_index, "step": state.global_step, "loss": loss,
             "reason": "non-finite loss or gradient"}
        )
        raise NonFiniteLossError(f"non-finite loss at task {state.task_index} step {state.global_step}")

    past = [t for t in state.buffers.tasks() if t < state.task_index]
    if past and (state.G is None or state.steps_since_build >= cfg.proj_interval):
        state.G = build_constraint_matrix(state.buffers, state.model, past, normalize=cfg.normalize_rows)
        state.steps_since_build = 0
    if past:
        state.steps_since_build += 1

    g_tilde = g
    projected = False
    proj_time = 0.0
    lambda_norm = 0.0
    max_violation = 0.0
    violation_before = 0.0
    if past and cfg.method != "naive":
        G = state.G
        violated, worst = violation_check(g, G, cfg.violation_tol)
        violation_before = max(0.0, -worst) if np.isfinite(worst) else 0.0
        if cfg.skip_when_feasible and not violated:
            pass  # opt-in skip path; the default projects every step
        elif cfg.method == "agem":
            g_ref = _agem_reference_gradient(state, past)
            t0 = time.perf_counter()
            g_tilde = agem_project(g, g_ref)
            proj_time = time.perf_counter() - t0
            projected = True
            max_violation = max(0.0, -float(g_tilde.dot(g_ref))) if g_ref.dot(g_ref) else 0.0
        elif cfg.method == "gem_exact":
            result = exact_qp_project(g, G, enum_limit=cfg.qp_enum_limit)
            g_tilde = result.projected_gradient
            proj_time = result.wall_time
            lambda_norm = float(np.linalg.norm(result.final_lambda.lam))
            max_violation = result.max_violation
            projected = True
        else:  # igem
            _refresh_spectral_if_stale(state, G)
            if state.dual is None or state.dual.lam.shape[0] != G.rows:
                # constraint count changed mid-task (zero-norm row drop)
                state.dual = DualState.cold(G.rows, task_index=state.task_index)
            if state.spectral.sigma_max_hat > 0.0:
                eta = stepsize(state.spectral, cfg.stepsize_safety)
                result = pgd_project(g, G, state.dual, eta, cfg.pgd_iterations, margin=cfg.margin())
                g_tilde = result.projected_gradient
                proj_time = result.wall_time
                lambda_norm = float(np.linalg.norm(result.final_lambda.lam))
                max_violation = result.max_violation
                state.dual = result.final_lambda  # carry over as warm start
                projected = True
        if projected:
            state.log.timing.add(proj_time)

    phi = am.get_adapter_params(state.model).phi
    new_phi = optimizer_step(phi, g_tilde, state.opt, cfg)
    am.set_adapter_params(state.model, new_phi)

    state.buffers.insert(state.task_index, X, y)

    rec = StepRecord(
        task=state.task_index,
        step=state.global_step,
        loss=loss,
        proj_time=proj_time,
        lambda_norm=lambda_norm,
        max_violation=max_violation,
        violation_before=violation_before,
        projected=projected,
        timestamp=time.monotonic(),
    )
    state.log.add_step(rec)
    state.global_step += 1
    state.step_in_task += 1
    return rec


def evaluate(model: am.TinyMlp, X, y, eval_mb_size: int = 50) -> float:
    """Accuracy of argmax logits; batching never changes the result."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    correct = 0
    for i in range(0, len(y), eval_mb_size):
        logits = am.forward(model, X[i : i + eval_mb_size])
        correct += int((logits.argmax(axis=1) == y[i : i + eval_mb_size]).sum())
    return correct / len(y)


def _eval_all(model: am.TinyMlp, stream: list[ExperienceSplit], eval_mb_size: int) -> np.ndarray:
    return np.array([evaluate(model, s.test_x, s.test_y, eval_mb_size) for s in stream])


# Base-model pretraining schedule: enough pooled uniform-prior steps that the
# frozen base is competent but leaves headroom for per-experience adaptation.
PRETRAIN_POOL = 2000
PRETRAIN_STEPS = 300
PRETRAIN_LR = 0.05


def prepare_model(spec, seed: int, model_config: am.ModelConfig | None = None) -> am.TinyMlp:
    """Build a model for a stream: random base weights trained on a pooled
    generic sample, then frozen; adapters start at B = 0 so the adapted
    model is initially identical to the base."""
    from .datagen import generate_pooled

    if model_config is None:
        model_config = am.ModelConfig(input_dim=spec.feature_dim, n_classes=spec.n_classes)
    model = am.build_model(model_config, seed=seed)
    X, y = generate_pooled(spec, PRETRAIN_POOL)
    am.pretrain_base(model, X, y, steps=PRETRAIN_STEPS, lr=PRETRAIN_LR, seed=seed)
    return model


def run_experiences(
    config: TrainConfig,
    stream: list[ExperienceSplit],
    model: am.TinyMlp,
) -> tuple[AccuracyMatrix, RunLog]:
    """Train tasks sequentially, evaluating every task's test set after each
    one; row 0 of the returned matrix is the pre-training baseline.

    The dual state is reset to zero at every task boundary and the whole
    run is a pure function of (config, stream, model), so identical seeds
    reproduce the accuracy matrix bit-for-bit.
    """
    T = config.n_experiences
    if len(stream) != T:
        raise ValueError(f"stream has {len(stream)} experiences, config expects {T}")
    state = make_state(config, model)
    R = np.zeros((T + 1, T))
    R[0] = _eval_all(model, stream, config.eval_mb_size)
    for t, split in enumerate(stream):
        start_task(state, t)
        n = split.n_train
        for _ in range(config.train_epochs):
            order = state.rng.permutation(n)
            for i in range(0, n, config.train_mb_size):
                idx = order[i : i + config.train_mb_size]
                train_step(state, split.train_x[idx], split.train_y[idx])
                if config.eval_every and state.global_step % config.eval_every == 0:
                    accs = _eval_all(model, stream, config.eval_mb_size)
                    state.log.curve.append(
                        {"step": state.global_step, "task": t, "acc": accs.tolist()}
                    )
        R[t + 1] = _eval_all(model, stream, config.eval_mb_size)
        state.log.checkpoints.append({"after_task": t, "acc": R[t + 1].tolist()})
    if config.dump_buffers:
        state.log.buffer_dump = state.buffers.to_dict()
    return AccuracyMatrix(R), state.log
