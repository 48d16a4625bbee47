"""Multi-task training loop: regression plus a contrastive feature loss.

The total objective is gamma_reg * L_reg + gamma_con * L_con. gamma_con
can be resolved automatically so both terms have similar magnitude after
the first epoch. A two-stage mode (contrastive pretraining, then
regression fine-tuning) is available for scheme ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from adacon.data import BatchPlan, Dataset, batch_iter
from adacon.ecdf import fit_ecdf, margin_matrix
from adacon.losses import (
    TemperatureConfig,
    adacon_loss,
    adaptive_triplet_loss,
    npair_loss,
    regression_loss,
    supcon_loss,
)
from adacon.model import (
    ModelSpec,
    NumericalError,
    OptimizerState,
    backward_and_step,
    forward,
    init_params,
    lr_at,
)

__all__ = ["TrainConfig", "TrainRecord", "run_training", "run_two_stage",
           "auto_balance_gamma"]

CONTRASTIVE_KINDS = ("adacon", "supcon", "npair", "triplet", "none")
REGRESSION_KINDS = ("l1", "mse", "huber")


@dataclass(frozen=True)
class TrainConfig:
    regression_kind: str = "l1"
    contrastive_kind: str = "adacon"
    huber_delta: float = 0.05
    gamma_reg: float = 1.0
    gamma_con: float | str = "auto"  # number or "auto"
    temperature: float = 10.0
    plan: BatchPlan = BatchPlan()
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    iterations: int = 6000
    milestones: tuple = (3000, 4500)
    decay_factor: float = 0.1
    sigma_aug: float = 0.1
    seed: int = 0
    mode: str = "multi-task"
    eval_every: int = 250
    hidden: tuple = (64, 64)
    proj_dim: int = 128
    activation: str = "relu"

    def __post_init__(self):
        if self.regression_kind not in REGRESSION_KINDS:
            raise ValueError(f"unknown regression loss kind: {self.regression_kind!r}")
        if self.contrastive_kind not in CONTRASTIVE_KINDS:
            raise ValueError(f"unknown contrastive loss kind: {self.contrastive_kind!r}")
        if self.gamma_reg < 0:
            raise ValueError("gamma_reg must be non-negative")
        if self.gamma_con != "auto" and float(self.gamma_con) < 0:
            raise ValueError("gamma_con must be non-negative or 'auto'")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.mode not in ("multi-task", "two-stage"):
            raise ValueError(f"unknown mode: {self.mode!r}")


@dataclass
class TrainRecord:
    steps: list = field(default_factory=list)  # (it, lreg, lcon, ltotal, lr)
    val_points: list = field(default_factory=list)  # (it, mae)
    resolved_gamma_con: float = 0.0
    best_iteration: int = -1
    best_val_mae: float = math.inf
    skipped_anchor_total: int = 0
    aborted: str = ""

    def export_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,lreg,lcon,ltotal,lr\n")
            for it, lreg, lcon, ltotal, lr in self.steps:
                fh.write(f"{it},{lreg!r},{lcon!r},{ltotal!r},{lr!r}\n")

    def export_summary(self, path, extra=None):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"resolved_gamma_con={self.resolved_gamma_con!r}\n")
            fh.write(f"best_iteration={self.best_iteration}\n")
            fh.write(f"best_val_mae={self.best_val_mae!r}\n")
            if self.aborted:
                fh.write(f"aborted={self.aborted}\n")
            for k, v in (extra or {}).items():
                fh.write(f"{k}={v}\n")


def auto_balance_gamma(first_epoch_reg_losses, first_epoch_con_losses) -> float:
    """gamma_con = mean regression loss / mean contrastive loss, 1 sig. fig."""
    reg = np.asarray(first_epoch_reg_losses, dtype=np.float64)
    con = np.asarray(first_epoch_con_losses, dtype=np.float64)
    if reg.size == 0 or con.size == 0:
        raise ValueError("empty first-epoch loss lists")
    if con.mean() <= 0 or reg.mean() <= 0:
        raise ValueError("degenerate run: non-positive first-epoch loss mean")
    ratio = float(reg.mean() / con.mean())
    exponent = math.floor(math.log10(ratio))
    return round(ratio / 10 ** exponent) * 10 ** exponent


def _predict_all(params, features, chunk=512):
    preds = []
    for start in range(0, features.shape[0], chunk):
        _, p, _ = forward(params, features[start:start + chunk])
        preds.append(p)
    return np.concatenate(preds)


def _contrastive_eval(kind, batch, margins_table, temp, rng):
    """Loss value and embedding gradient for one batch; grad is None for 'none'."""
    if kind == "none":
        return 0.0, None, 0
    if kind == "adacon":
        res = adacon_loss(batch, margin_matrix(margins_table, batch.labels), temp)
        return res.value, res.grad_embeddings, res.skipped_anchors
    if kind == "supcon":
        res = supcon_loss(batch, temp)
        return res.value, res.grad_embeddings, res.skipped_anchors
    if kind == "npair":
        res = npair_loss(batch)
        return res.value, res.grad_embeddings, res.skipped_anchors
    # triplet: one triplet per eligible row, sampled within the batch
    b = batch.size
    anchors, positives, negatives = [], [], []
    ai, pi, ni = [], [], []
    for i in range(b):
        pos = np.flatnonzero((batch.labels == batch.labels[i])
                             & (np.arange(b) != i))
        neg = np.flatnonzero(batch.labels != batch.labels[i])
        if pos.size == 0 or neg.size == 0:
            continue
        p = int(rng.choice(pos))
        q = int(rng.choice(neg))
        anchors.append(i)
        positives.append(p)
        negatives.append(q)
    if not anchors:
        return 0.0, None, b
    ai, pi, ni = (np.asarray(v) for v in (anchors, positives, negatives))
    res = adaptive_triplet_loss(batch.embeddings[ai], batch.embeddings[pi],
                                batch.embeddings[ni], batch.labels[ai],
                                batch.labels[ni], margins_table)
    grad = np.zeros_like(batch.embeddings)
    np.add.at(grad, ai, res.grad_embeddings[0])
    np.add.at(grad, pi, res.grad_embeddings[1])
    np.add.at(grad, ni, res.grad_embeddings[2])
    return res.value, grad, b - len(anchors)


def _train_loop(config: TrainConfig, params, opt, train: Dataset, val: Dataset,
                record: TrainRecord, *, iterations, base_lr, milestones,
                gamma_reg, gamma_con, contrastive_kind, best_params):
    """Shared inner loop; mutates params/opt/record, returns best_params.

    gamma_con == "auto" trains regression-only through the first epoch
    while measuring both loss magnitudes, then fixes gamma_con.
    """
    table = fit_ecdf(train.labels)
    temp = TemperatureConfig(config.temperature)
    trip_rng = np.random.default_rng([config.seed, 7041])

    auto_pending = gamma_con == "auto"
    gcon = 0.0 if auto_pending else float(gamma_con)
    if contrastive_kind == "none":
        auto_pending = False
        gcon = 0.0
    first_reg, first_con = [], []

    it = 0
    epoch = 0
    while it < iterations:
        end_of_epoch = True
        for inputs, labels, source_ids in batch_iter(train, config.plan,
                                                     config.sigma_aug, epoch):
            if it >= iterations:
                end_of_epoch = False
                break
            lr = lr_at(base_lr, milestones, it, config.decay_factor)
            batch, preds, cache = forward(params, inputs, labels, source_ids)
            reg = regression_loss(config.regression_kind, preds, labels,
                                  delta=config.huber_delta)
            lcon, grad_z, skipped = _contrastive_eval(
                contrastive_kind, batch, table, temp, trip_rng)
            record.skipped_anchor_total += skipped

            if auto_pending:
                first_reg.append(reg.value)
                if contrastive_kind != "none":
                    first_con.append(lcon)

            ltotal = gamma_reg * reg.value + gcon * lcon
            grad_preds = gamma_reg * reg.grad_embeddings
            if gcon != 0.0 and grad_z is not None:
                grad_emb = gcon * grad_z
            else:
                # excluded entirely so gamma_con = 0 matches the
                # regression-only trajectory bit for bit
                grad_emb = np.zeros_like(batch.embeddings)
            try:
                backward_and_step(params, cache, grad_emb, grad_preds, opt, lr=lr)
            except NumericalError as exc:
                record.aborted = str(exc)
                return best_params
            record.steps.append((it, reg.value, lcon, ltotal, lr))
            it += 1

            if it % config.eval_every == 0 or it == iterations:
                val_preds = _predict_all(params, val.features)
                mae = float(np.mean(np.abs(val_preds - val.labels)))
                record.val_points.append((it, mae))
                if mae < record.best_val_mae:
                    record.best_val_mae = mae
                    record.best_iteration = it
                    best_params = params.copy()
        if end_of_epoch and auto_pending:
            gcon = auto_balance_gamma(first_reg, first_con)
            auto_pending = False
        epoch += 1
    if auto_pending and first_reg and first_con:
        gcon = auto_balance_gamma(first_reg, first_con)
    record.resolved_gamma_con = gcon
    return best_params


def run_training(config: TrainConfig, train: Dataset, val: Dataset):
    """Train the two-headed model; returns (TrainRecord, best ModelParams).

    Model selection is by best validation MAE over the evaluation points;
    with zero iterations the initial parameters are returned.
    """
    if config.mode == "two-stage":
        return run_two_stage(config, train, val)
    spec = ModelSpec(input_dim=train.dim, hidden=config.hidden,
                     proj_dim=config.proj_dim, activation=config.activation)
    params = init_params(spec, config.seed)
    opt = OptimizerState(lr=config.lr, momentum=config.momentum,
                         weight_decay=config.weight_decay)
    record = TrainRecord()
    best = params.copy()
    best = _train_loop(config, params, opt, train, val, record,
                       iterations=config.iterations, base_lr=config.lr,
                       milestones=config.milestones,
                       gamma_reg=config.gamma_reg, gamma_con=config.gamma_con,
                       contrastive_kind=config.contrastive_kind,
                       best_params=best)
    return record, best


def run_two_stage(config: TrainConfig, train: Dataset, val: Dataset,
                  stage1_iterations=None, stage2_iterations=None):
    """Contrastive pretraining, then regression-only fine-tuning.

    The iteration budget is split evenly by default; stage 2 restarts the
    optimizer at a tenth of the learning rate. Decay milestones are scaled
    proportionally into each stage.
    """
    s1 = config.iterations // 2 if stage1_iterations is None else stage1_iterations
    s2 = config.iterations - s1 if stage2_iterations is None else stage2_iterations
    spec = ModelSpec(input_dim=train.dim, hidden=config.hidden,
                     proj_dim=config.proj_dim, activation=config.activation)
    params = init_params(spec, config.seed)
    record = TrainRecord()
    best = params.copy()

    def scaled_milestones(n_steps):
        if config.iterations == 0:
            return ()
        return tuple(sorted({max(1, int(m * n_steps / config.iterations))
                             for m in config.milestones})) if n_steps else ()

    if s1 > 0:
        opt = OptimizerState(lr=config.lr, momentum=config.momentum,
                             weight_decay=config.weight_decay)
        stage1 = TrainRecord()
        kind = config.contrastive_kind if config.contrastive_kind != "none" else "adacon"
        _train_loop(config, params, opt, train, val, stage1,
                    iterations=s1, base_lr=config.lr,
                    milestones=scaled_milestones(s1),
                    gamma_reg=0.0, gamma_con=1.0,
                    contrastive_kind=kind, best_params=params.copy())
        record.steps.extend(stage1.steps)
        record.skipped_anchor_total += stage1.skipped_anchor_total
        if stage1.aborted:
            record.aborted = f"stage1: {stage1.aborted}"
            return record, best
        record.resolved_gamma_con = 1.0
    if s2 > 0:
        opt = OptimizerState(lr=config.lr * 0.1, momentum=config.momentum,
                             weight_decay=config.weight_decay)
        stage2 = TrainRecord()
        best = _train_loop(config, params, opt, train, val, stage2,
                           iterations=s2, base_lr=config.lr * 0.1,
                           milestones=scaled_milestones(s2),
                           gamma_reg=config.gamma_reg, gamma_con=0.0,
                           contrastive_kind="none", best_params=best)
        record.steps.extend((it + s1, a, b, c, d)
                            for it, a, b, c, d in stage2.steps)
        record.val_points.extend((it + s1, mae) for it, mae in stage2.val_points)
        record.best_val_mae = stage2.best_val_mae
        record.best_iteration = (stage2.best_iteration + s1
                                 if stage2.best_iteration >= 0 else -1)
        record.skipped_anchor_total += stage2.skipped_anchor_total
        if stage2.aborted:
            record.aborted = f"stage2: {stage2.aborted}"
    return record, best


def make_config(**overrides) -> TrainConfig:
    """TrainConfig with keyword overrides; plan fields may be given flat."""
    plan_keys = {"base_batch_size", "augment_multiple", "shuffle_seed"}
    plan_over = {k: overrides.pop(k) for k in list(overrides) if k in plan_keys}
    cfg = TrainConfig(**overrides)
    if plan_over:
        cfg = replace(cfg, plan=replace(cfg.plan, **plan_over))
    return cfg
