"""Residual-action GAN for counterfactual recourse.

A generator proposes additive feature changes for predicted churners, a
discriminator pushes the modified vectors toward the retained-user manifold,
and classifier feedback flows through a distilled differentiable surrogate
of the survival forest.  The forest itself is frozen: every efficacy verdict
(post_class) comes from the real forest, never the surrogate.

Checkpoints are saved whenever discriminator accuracy on both the real pool
and the generated counterfactuals drops to the configured ceiling or below;
the returned model is the latest qualifying checkpoint.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, FeatureMeta
from .errors import ConfigError, DimensionError, NumericalError, RecourseNotApplicableError
from .nn import Adam, Mlp, bce_loss_and_grad
from .survival import ChurnClassifier

BUNDLE_FORMAT = "countergan-bundle"
BUNDLE_VERSION = 1

GENERATOR_HIDDEN = (64, 64)
DISCRIMINATOR_HIDDEN = (32, 16)
SURROGATE_HIDDEN = (32, 16)

LOG_COLUMNS = ["iteration", "d_loss", "g_loss", "d_acc_real", "d_acc_fake", "checkpoint_flag"]


# ---------------------------------------------------------------------------
# Actions and constraint projection
# ---------------------------------------------------------------------------


@dataclass
class RecourseAction:
    """One user's proposed feature change and its verdict."""

    user_id: str
    delta: np.ndarray
    counterfactual: np.ndarray
    pre_class: int
    post_class: int
    cost_sq: float
    method: str

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.counterfactual = np.asarray(self.counterfactual, dtype=float)
        if self.delta.shape != self.counterfactual.shape:
            raise DimensionError("delta/counterfactual length mismatch")
        if abs(self.cost_sq - float(np.sum(self.delta**2))) > 1e-12:
            raise ConfigError("cost_sq does not match the squared delta norm")


class ConstraintSet:
    """Vectorized view of per-feature actionability, direction and bounds."""

    def __init__(self, metas: Sequence[FeatureMeta]):
        self.metas = list(metas)
        self.actionable = np.array([m.actionable for m in metas], dtype=bool)
        self.increase_only = np.array([m.direction == "increase_only" for m in metas], dtype=bool)
        self.decrease_only = np.array([m.direction == "decrease_only" for m in metas], dtype=bool)
        self.lower = np.array([m.lower_bound for m in metas], dtype=float)
        self.upper = np.array([m.upper_bound for m in metas], dtype=float)

    def __len__(self) -> int:
        return len(self.metas)

    def project(self, x: np.ndarray, raw_delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Feasible delta plus a clamp-state code per coordinate.

        Accepts single vectors or (n, F) batches.  State 0 means the
        projection acted as identity, +1 that the raw delta was clamped down,
        -1 that it was clamped up; non-actionable coordinates report +2
        (gradient never passes).
        """
        x = np.asarray(x, dtype=float)
        raw = np.asarray(raw_delta, dtype=float)
        if x.shape != raw.shape or x.shape[-1] != len(self):
            raise DimensionError(
                f"expected matching vectors of length {len(self)}, got {x.shape} and {raw.shape}"
            )
        delta = np.where(self.actionable, raw, 0.0)
        delta = np.where(self.increase_only, np.maximum(delta, 0.0), delta)
        delta = np.where(self.decrease_only, np.minimum(delta, 0.0), delta)
        delta = np.clip(x + delta, self.lower, self.upper) - x
        state = np.sign(raw - delta)
        state = np.where(self.actionable, state, 2.0)
        return delta, state

    @staticmethod
    def pass_gradient(grad: np.ndarray, state: np.ndarray) -> np.ndarray:
        """Subgradient of the projection applied to a loss gradient.

        Unclamped coordinates pass through; a clamped coordinate only passes
        the component that pulls the raw output back toward the feasible
        region, so saturated features can still be drawn off their bound.
        Non-actionable coordinates never pass.
        """
        allowed = (state == 0.0) | ((state == 1.0) & (grad > 0.0)) | ((state == -1.0) & (grad < 0.0))
        return np.where(allowed, grad, 0.0)

    def violations(self, x: np.ndarray, delta: np.ndarray) -> list[dict]:
        """Constraint breaches of a proposed change, for reporting."""
        out = []
        value = x + delta
        for j, m in enumerate(self.metas):
            if not m.actionable and delta[j] != 0.0:
                out.append({"feature": m.name, "violation": "non_actionable"})
                continue
            if m.direction == "increase_only" and delta[j] < 0.0:
                out.append({"feature": m.name, "violation": "increase_only"})
            elif m.direction == "decrease_only" and delta[j] > 0.0:
                out.append({"feature": m.name, "violation": "decrease_only"})
            if value[j] < m.lower_bound:
                out.append({"feature": m.name, "violation": "below_lower_bound"})
            elif value[j] > m.upper_bound:
                out.append({"feature": m.name, "violation": "above_upper_bound"})
        return out


def project_action(
    x: np.ndarray, raw_delta: np.ndarray, constraints: Sequence[FeatureMeta]
) -> np.ndarray:
    """Zero non-actionable entries, clamp directions, keep x+delta in bounds."""
    delta, _ = ConstraintSet(constraints).project(x, raw_delta)
    return delta


# ---------------------------------------------------------------------------
# Surrogate distillation
# ---------------------------------------------------------------------------


def distill_surrogate(
    classifier: ChurnClassifier,
    data: Dataset,
    seed: int,
    epochs: int = 200,
    batch_size: int = 128,
    lr: float = 3e-3,
    holdout_fraction: float = 0.2,
    perturbation: float = 0.05,
) -> tuple[Mlp, float]:
    """Differentiable imitation of the forest score, for generator gradients.

    Trains on the panel features plus uniformly perturbed copies, targets
    being the forest's class_score.  Returns the network and the agreement
    rate of its thresholded output against the forest's classify on held-out
    rows.  The surrogate never judges efficacy; it only routes gradients.
    """
    if len(data.records) == 0:
        raise ConfigError("distillation data is empty")
    rng = np.random.default_rng(seed)
    x_all = data.feature_matrix()
    n = x_all.shape[0]
    order = rng.permutation(n)
    n_held = max(1, int(round(n * holdout_fraction))) if n > 1 else 0
    held = x_all[order[:n_held]]
    train = x_all[order[n_held:]] if n_held < n else x_all

    jitter = rng.uniform(-perturbation, perturbation, size=train.shape)
    x_train = np.vstack([train, train + jitter])
    targets = classifier.class_scores(x_train)

    f = classifier.n_features
    net = Mlp.create(
        [f, *SURROGATE_HIDDEN, 1], ["relu", "relu", "sigmoid"], seed=int(rng.integers(2**31))
    )
    opt = Adam(lr=lr)
    m = x_train.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(m)
        for start in range(0, m, batch_size):
            idx = perm[start : start + batch_size]
            pred = net.forward(x_train[idx])[:, 0]
            _, grad = bce_loss_and_grad(pred, targets[idx])
            grads, _ = net.backward(x_train[idx], grad[:, None])
            net.set_parameters(opt.step(net.parameters(), grads))

    if n_held:
        surrogate_cls = (net.forward(held)[:, 0] >= 0.5).astype(int)
        agreement = float(np.mean(surrogate_cls == classifier.classify_batch(held)))
    else:
        agreement = float("nan")
    return net, agreement


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 600
    batch_size: int = 64
    checkpoint_accuracy_ceiling: float = 0.55
    lambda_cls: float = 0.4
    lambda_reg: float = 0.1
    seed: int = 0
    generator_lr: float = 1e-3
    discriminator_lr: float = 5e-4
    # Instance noise on the discriminator's training inputs; keeps D from
    # sharpening on microscopic generator artifacts so the game stays live.
    discriminator_input_noise: float = 0.1
    real_pool: str = "label1"  # or "all": train D on every determinate user

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0.0 < self.checkpoint_accuracy_ceiling < 1.0:
            raise ConfigError("checkpoint_accuracy_ceiling must be in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.discriminator_input_noise < 0.0:
            raise ConfigError("discriminator_input_noise must be >= 0")
        if self.real_pool not in ("label1", "all"):
            raise ConfigError(f"real_pool must be 'label1' or 'all', got {self.real_pool!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class TrainLogRow:
    iteration: int
    d_loss: float
    g_loss: float
    d_acc_real: float
    d_acc_fake: float
    checkpoint_flag: bool


@dataclass
class CounterGanModel:
    generator: Mlp
    discriminator: Mlp
    surrogate: Mlp
    classifier: ChurnClassifier
    constraints: ConstraintSet
    training_log: list[TrainLogRow] = field(default_factory=list)
    checkpoint_iterations: list[int] = field(default_factory=list)
    restored_iteration: Optional[int] = None
    no_qualifying_checkpoint: bool = False
    config: TrainConfig = field(default_factory=TrainConfig)
    surrogate_agreement: Optional[float] = None


def train(
    data: Dataset,
    classifier: ChurnClassifier,
    config: TrainConfig,
    surrogate: Optional[Mlp] = None,
    surrogate_agreement: Optional[float] = None,
) -> CounterGanModel:
    """Alternating adversarial training over feasible counterfactuals.

    Per iteration: the discriminator sees a real batch (retained users) and a
    fake batch (projected counterfactuals of churned users); the generator
    then minimizes adversarial + surrogate-classification + delta-sparsity
    losses, with gradients blocked on clamped coordinates.  Discriminator
    accuracy on both full pools decides checkpoint eligibility.
    """
    det = data.determinate()
    churn_x = np.array([r.features for r in det.records if r.label == 0])
    retained_x = np.array([r.features for r in det.records if r.label == 1])
    if churn_x.size == 0 or retained_x.size == 0:
        raise ConfigError("training data must contain both churned and retained users")
    real_x = det.feature_matrix() if config.real_pool == "all" else retained_x

    constraints = ConstraintSet(data.meta)
    f = data.n_features
    rng = np.random.default_rng(config.seed)
    gen = Mlp.create([f, *GENERATOR_HIDDEN, f], ["tanh", "tanh", "identity"],
                     seed=int(rng.integers(2**31)))
    disc = Mlp.create([f, *DISCRIMINATOR_HIDDEN, 1], ["relu", "relu", "sigmoid"],
                      seed=int(rng.integers(2**31)))
    if surrogate is None:
        surrogate, surrogate_agreement = distill_surrogate(
            classifier, data, seed=int(rng.integers(2**31))
        )
    if surrogate.input_dim != f or surrogate.output_dim != 1:
        raise DimensionError("surrogate shape does not match the feature space")

    opt_g = Adam(lr=config.generator_lr)
    opt_d = Adam(lr=config.discriminator_lr)

    log: list[TrainLogRow] = []
    checkpoint_iters: list[int] = []
    snapshot: Optional[tuple[int, list[np.ndarray], list[np.ndarray]]] = None
    batch = config.batch_size

    for it in range(1, config.max_iterations + 1):
        # Discriminator step: real batch vs projected counterfactuals.
        real = real_x[rng.integers(0, real_x.shape[0], size=batch)]
        base = churn_x[rng.integers(0, churn_x.shape[0], size=batch)]
        delta, _ = constraints.project(base, gen.forward(base))
        fake = base + delta
        d_in = np.vstack([real, fake])
        if config.discriminator_input_noise > 0.0:
            d_in = d_in + rng.normal(0.0, config.discriminator_input_noise, size=d_in.shape)
        d_target = np.concatenate([np.ones(batch), np.zeros(batch)])
        d_pred = disc.forward(d_in)[:, 0]
        d_loss, d_grad = bce_loss_and_grad(d_pred, d_target)
        d_grads, _ = disc.backward(d_in, d_grad[:, None])
        disc.set_parameters(opt_d.step(disc.parameters(), d_grads))

        # Generator step: fool D, satisfy the surrogate, keep deltas small.
        base = churn_x[rng.integers(0, churn_x.shape[0], size=batch)]
        raw = gen.forward(base)
        delta, state = constraints.project(base, raw)
        cf = base + delta
        adv_pred = disc.forward(cf)[:, 0]
        adv_loss, adv_grad = bce_loss_and_grad(adv_pred, np.ones(batch))
        _, dcf_adv = disc.backward(cf, adv_grad[:, None])
        cls_pred = surrogate.forward(cf)[:, 0]
        cls_loss, cls_grad = bce_loss_and_grad(cls_pred, np.ones(batch))
        _, dcf_cls = surrogate.backward(cf, cls_grad[:, None])
        reg_loss = float(np.mean(np.abs(delta)))
        dreg = np.sign(delta) / delta.size
        total = dcf_adv + config.lambda_cls * dcf_cls + config.lambda_reg * dreg
        draw = ConstraintSet.pass_gradient(total, state)
        g_grads, _ = gen.backward(base, draw)
        gen.set_parameters(opt_g.step(gen.parameters(), g_grads))
        g_loss = adv_loss + config.lambda_cls * cls_loss + config.lambda_reg * reg_loss

        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise NumericalError(f"non-finite loss at iteration {it}")

        # Checkpoint rule: D accuracy on both full pools at or below ceiling.
        full_delta, _ = constraints.project(churn_x, gen.forward(churn_x))
        acc_real = float(np.mean(disc.forward(real_x)[:, 0] >= 0.5))
        acc_fake = float(np.mean(disc.forward(churn_x + full_delta)[:, 0] < 0.5))
        qualifies = (
            acc_real <= config.checkpoint_accuracy_ceiling
            and acc_fake <= config.checkpoint_accuracy_ceiling
        )
        log.append(TrainLogRow(it, d_loss, g_loss, acc_real, acc_fake, qualifies))
        if qualifies:
            checkpoint_iters.append(it)
            snapshot = (
                it,
                [p.copy() for p in gen.parameters()],
                [p.copy() for p in disc.parameters()],
            )

    restored = None
    no_checkpoint = snapshot is None
    if snapshot is not None:
        restored, g_params, d_params = snapshot
        gen.set_parameters(g_params)
        disc.set_parameters(d_params)

    return CounterGanModel(
        generator=gen,
        discriminator=disc,
        surrogate=surrogate,
        classifier=classifier,
        constraints=constraints,
        training_log=log,
        checkpoint_iterations=checkpoint_iters,
        restored_iteration=restored,
        no_qualifying_checkpoint=no_checkpoint,
        config=config,
        surrogate_agreement=surrogate_agreement,
    )


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def generate_recourse(model: CounterGanModel, x: np.ndarray, user_id: str = "") -> RecourseAction:
    """One feed-forward pass plus projection; verdict from the real forest."""
    x = np.asarray(x, dtype=float)
    pre = model.classifier.classify(x)
    if pre != 0:
        raise RecourseNotApplicableError(
            f"user {user_id or '<anonymous>'} is already predicted to stay; recourse not applicable"
        )
    delta, _ = model.constraints.project(x, model.generator.forward(x))
    cf = x + delta
    return RecourseAction(
        user_id=user_id,
        delta=delta,
        counterfactual=cf,
        pre_class=0,
        post_class=int(model.classifier.classify(cf)),
        cost_sq=float(np.sum(delta**2)),
        method="gan",
    )


def generate_recourse_batch(
    model: CounterGanModel, x_mat: np.ndarray, user_ids: Sequence[str]
) -> tuple[list[RecourseAction], list[tuple[float, float]]]:
    """Recourse for a batch of denied users, timing only the generation.

    The timed window covers exactly the generator pass and projection per
    user; classifying the counterfactual is evaluation, not recourse work,
    and happens outside the clock.
    """
    x_mat = np.asarray(x_mat, dtype=float)
    if x_mat.ndim != 2 or x_mat.shape[0] != len(user_ids):
        raise DimensionError("feature matrix and user id list do not align")
    pre = model.classifier.classify_batch(x_mat)
    bad = np.nonzero(pre != 0)[0]
    if bad.size:
        raise RecourseNotApplicableError(
            f"user {user_ids[int(bad[0])]} is already predicted to stay; recourse not applicable"
        )
    deltas = np.empty_like(x_mat)
    timings = []
    for i in range(x_mat.shape[0]):
        start = time.perf_counter()
        raw = model.generator.forward(x_mat[i])
        delta, _ = model.constraints.project(x_mat[i], raw)
        end = time.perf_counter()
        deltas[i] = delta
        timings.append((start, end))
    cfs = x_mat + deltas
    post = model.classifier.classify_batch(cfs)
    actions = [
        RecourseAction(
            user_id=user_ids[i],
            delta=deltas[i],
            counterfactual=cfs[i],
            pre_class=0,
            post_class=int(post[i]),
            cost_sq=float(np.sum(deltas[i] ** 2)),
            method="gan",
        )
        for i in range(x_mat.shape[0])
    ]
    return actions, timings


# ---------------------------------------------------------------------------
# Bundle serialization
# ---------------------------------------------------------------------------


def save_bundle(model: CounterGanModel, dirpath: str) -> None:
    os.makedirs(dirpath, exist_ok=True)
    model.generator.save(os.path.join(dirpath, "generator.json"))
    model.discriminator.save(os.path.join(dirpath, "discriminator.json"))
    model.surrogate.save(os.path.join(dirpath, "surrogate.json"))
    with open(os.path.join(dirpath, "constraints.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump([m.to_dict() for m in model.constraints.metas], fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(dirpath, "training_log.csv"), "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in model.training_log:
            writer.writerow(
                [row.iteration, repr(row.d_loss), repr(row.g_loss),
                 repr(row.d_acc_real), repr(row.d_acc_fake),
                 "true" if row.checkpoint_flag else "false"]
            )
    meta = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "config": {
            "max_iterations": model.config.max_iterations,
            "batch_size": model.config.batch_size,
            "checkpoint_accuracy_ceiling": model.config.checkpoint_accuracy_ceiling,
            "lambda_cls": model.config.lambda_cls,
            "lambda_reg": model.config.lambda_reg,
            "seed": model.config.seed,
            "generator_lr": model.config.generator_lr,
            "discriminator_lr": model.config.discriminator_lr,
            "discriminator_input_noise": model.config.discriminator_input_noise,
            "real_pool": model.config.real_pool,
        },
        "checkpoint_iterations": model.checkpoint_iterations,
        "restored_iteration": model.restored_iteration,
        "no_qualifying_checkpoint": model.no_qualifying_checkpoint,
        "surrogate_agreement": model.surrogate_agreement,
    }
    with open(os.path.join(dirpath, "bundle.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(dirpath: str, classifier: ChurnClassifier) -> CounterGanModel:
    with open(os.path.join(dirpath, "bundle.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != BUNDLE_FORMAT:
        raise ConfigError(f"not a recourse model bundle: {dirpath}")
    with open(os.path.join(dirpath, "constraints.json"), encoding="utf-8") as fh:
        metas = [FeatureMeta.from_dict(d) for d in json.load(fh)]
    log = []
    with open(os.path.join(dirpath, "training_log.csv"), encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            log.append(
                TrainLogRow(
                    iteration=int(row["iteration"]),
                    d_loss=float(row["d_loss"]),
                    g_loss=float(row["g_loss"]),
                    d_acc_real=float(row["d_acc_real"]),
                    d_acc_fake=float(row["d_acc_fake"]),
                    checkpoint_flag=row["checkpoint_flag"] == "true",
                )
            )
    cfg = meta["config"]
    return CounterGanModel(
        generator=Mlp.load(os.path.join(dirpath, "generator.json")),
        discriminator=Mlp.load(os.path.join(dirpath, "discriminator.json")),
        surrogate=Mlp.load(os.path.join(dirpath, "surrogate.json")),
        classifier=classifier,
        constraints=ConstraintSet(metas),
        training_log=log,
        checkpoint_iterations=list(meta.get("checkpoint_iterations", [])),
        restored_iteration=meta.get("restored_iteration"),
        no_qualifying_checkpoint=bool(meta.get("no_qualifying_checkpoint", False)),
        config=TrainConfig(**cfg),
        surrogate_agreement=meta.get("surrogate_agreement"),
    )
