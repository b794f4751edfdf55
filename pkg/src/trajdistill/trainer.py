"""Two-phase training: a map-based network first, then map-free
distillation against the frozen result. Deterministic given (seed, thread
count): data order, parameter init, and update order are all fixed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import metrics as M
from .batching import SceneBatch
from .checkpoint import Checkpoint
from .errors import DataError, NumericalError
from .model import forward, init_model_params
from .nn import autodiff as ad
from .nn.blocks import ParameterSet
from .scene import ModelConfig

PHASES = ("teacher", "student_nkd", "student_kd")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 1e-4
    seed: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    phase: str = "teacher"
    clip_norm: float = 5.0
    dtype: str = "float32"
    kd_squared: bool = False
    train_fraction: float = 1.0
    mr_radius: float = 2.0
    eval_batch: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * (1 + cos(pi * step/total)) / 2, annealing to zero."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adam_step(value, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (value, m, v) as new arrays."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: ParameterSet, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            state = self.params.opt_state.setdefault(
                name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            )
            p.data, state["m"], state["v"] = adam_step(
                p.data, g.astype(p.data.dtype, copy=False), state["m"], state["v"],
                self.t, lr, self.beta1, self.beta2, self.eps,
            )


def clip_gradients(params: ParameterSet, max_norm: float) -> float:
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------- evaluation
def evaluate_model(values_or_params, scenes, cfg: ModelConfig, use_map: bool, dtype="float64",
                   batch_size=64, focal_only=True, mr_radius=M.DEFAULT_MISS_RADIUS,
                   with_map_model=None, collect_predictions=False):
    """Forward the scenes in batches and compute metrics.

    Returns (MetricReport, per-agent metric rows, predictions) where
    predictions maps scene_id -> dict with the focal agent's trajectories
    and confidences (only when collect_predictions).
    """
    if not scenes:
        raise DataError("no scenes to evaluate")
    params = _as_params(values_or_params, cfg, use_map, dtype, with_map_model)
    npdtype = np.float64 if str(dtype) == "float64" else np.float32
    rows = []
    preds_out = {}
    with ad.no_grad():
        for lo in range(0, len(scenes), batch_size):
            chunk = scenes[lo: lo + batch_size]
            batch = SceneBatch(chunk, cfg, dtype=npdtype, with_map_inputs=use_map)
            out = forward(params, batch, cfg, use_map=use_map)
            traj = out.predictions.trajectories.data
            conf = out.predictions.confidences.data
            for b, scene in enumerate(chunk):
                indices = [scene.focal_index] if focal_only else [
                    a for a in range(len(scene.agents)) if batch.usable[b, a]
                ]
                for a in indices:
                    track = scene.agents[a]
                    if track.future is None or not batch.fut_mask[b, a].any() or not batch.fut_mask[b, a][-1]:
                        continue
                    rows.append(
                        M.evaluate_agent(
                            traj[b, a], conf[b, a], batch.fut[b, a], batch.fut_mask[b, a],
                            scene.drivable, scene.id, track.id, miss_radius=mr_radius,
                        )
                    )
                if collect_predictions:
                    fi = scene.focal_index
                    preds_out[scene.id] = {
                        "agent_id": scene.agents[fi].id,
                        "trajectories": traj[b, fi].astype(np.float64).copy(),
                        "confidences": conf[b, fi].astype(np.float64).copy(),
                    }
    report = M.aggregate(rows, k=cfg.K)
    return report, rows, preds_out


def _as_params(values_or_params, cfg, use_map, dtype, with_map_model=None):
    if isinstance(values_or_params, ParameterSet):
        return values_or_params
    npdtype = np.float64 if str(dtype) == "float64" else np.float32
    with_map = use_map if with_map_model is None else with_map_model
    ps = init_model_params(cfg, seed=0, with_map=with_map, dtype=npdtype)
    if not with_map:
        # a map-aware checkpoint can be evaluated map-free through its
        # shared (map-independent) weights
        values_or_params = {k: v for k, v in values_or_params.items() if k in set(ps.names())}
    ps.load_values(values_or_params)
    return ps


# ---------------------------------------------------------------- training
@dataclass
class TrainResult:
    values: dict                  # best-epoch parameter values
    final_values: dict
    history: list = field(default_factory=list)
    log_rows: list = field(default_factory=list)
    best_epoch: int = 0
    rng_state: dict = field(default_factory=dict)

    def report_row(self, key):
        return [h[key] for h in self.history]


LOG_COLUMNS = (
    "epoch,lr,train_total,train_reg,train_cls,train_kd,"
    "val_minADE,val_minFDE,val_MR,val_brier_minFDE,val_DAC"
)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)


def train_phase(train_scenes, val_scenes, cfg: ModelConfig, tcfg: TrainConfig,
                teacher: Checkpoint | None = None) -> TrainResult:
    """Run one training phase. teacher is required (and frozen) for
    student_kd; student phases never receive map arrays as input."""
    phase = tcfg.phase
    with_map = phase == "teacher"
    use_map = with_map
    npdtype = np.float64 if tcfg.dtype == "float64" else np.float32

    if phase == "teacher":
        if not any(s.map_polylines for s in train_scenes):
            raise DataError("teacher training requires scenes with maps")
    teacher_ps = None
    if phase == "student_kd":
        if teacher is None:
            raise DataError("student_kd requires a teacher checkpoint")
        for f in ("K", "H", "D", "I_T", "step_len", "N_T", "T", "heads"):
            if getattr(teacher.model_config, f) != getattr(cfg, f):
                raise DataError(
                    f"teacher/student config mismatch on {f}: "
                    f"{getattr(teacher.model_config, f)} vs {getattr(cfg, f)}"
                )
        teacher_ps = init_model_params(teacher.model_config, seed=0, with_map=True, dtype=npdtype)
        teacher_ps.load_values(teacher.values)
        teacher_hash = teacher_ps.content_hash()

    n_train = len(train_scenes)
    if tcfg.train_fraction < 1.0:
        n_train = max(1, int(round(n_train * tcfg.train_fraction)))
        train_scenes = train_scenes[:n_train]

    ss = np.random.SeedSequence(tcfg.seed)
    s_init, s_order = ss.spawn(2)
    params = init_model_params(cfg, seed=_seed_int(s_init), with_map=with_map, dtype=npdtype)
    order_rng = np.random.default_rng(s_order)
    opt = Adam(params)

    n_batches = (n_train + tcfg.batch_size - 1) // tcfg.batch_size
    total_steps = tcfg.epochs * n_batches
    gstep = 0
    gamma = tcfg.gamma if phase == "student_kd" else 0.0

    history, log_rows = [], []
    best = None
    best_epoch = 0
    best_values = None
    for epoch in range(1, tcfg.epochs + 1):
        perm = order_rng.permutation(n_train)
        sums = {"total": 0.0, "reg": 0.0, "cls": 0.0, "kd": 0.0}
        lr_last = 0.0
        for lo in range(0, n_train, tcfg.batch_size):
            idx = perm[lo: lo + tcfg.batch_size]
            chunk = [train_scenes[i] for i in idx]
            need_map = with_map or (teacher_ps is not None and gamma != 0.0)
            batch = SceneBatch(chunk, cfg, dtype=npdtype, with_map_inputs=need_map)
            out = forward(params, batch, cfg, use_map=use_map)

            w = batch.loss_agent_weights()
            match = L.match_best_mode(out.predictions.trajectories.data, batch.fut, batch.fut_mask)
            reg = L.nll_loss(out.predictions.trajectories, out.predictions.log_vars,
                             batch.fut, batch.fut_mask, match, w)
            cls = L.cls_loss(out.predictions.confidences, match, w)
            kd = None
            if teacher_ps is not None and gamma != 0.0:
                with ad.no_grad():
                    tout = forward(teacher_ps, batch, cfg, use_map=True)
                wk = batch.loss_agent_weights(require_future=False)
                kd = L.kd_encoder_loss(out.queries, tout.queries.data, wk, squared=tcfg.kd_squared)
                kd = kd + L.kd_decoder_loss(
                    out.predictions.step_feats,
                    [f.data for f in tout.predictions.step_feats],
                    wk, squared=tcfg.kd_squared,
                )
            total = L.total_loss(reg, cls, kd, tcfg.alpha, tcfg.beta, gamma)
            tval = total.item()
            if not math.isfinite(tval):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {gstep}")
            frac = len(chunk) / n_train
            sums["total"] += tval * frac
            sums["reg"] += reg.item() * frac
            sums["cls"] += cls.item() * frac
            sums["kd"] += (kd.item() if kd is not None else 0.0) * frac

            params.zero_grad()
            total.backward()
            clip_gradients(params, tcfg.clip_norm)
            lr_last = cosine_lr(gstep, total_steps, tcfg.base_lr)
            opt.step(lr_last)
            gstep += 1

        report, _, _ = evaluate_model(
            params, val_scenes, cfg, use_map=use_map, dtype=tcfg.dtype,
            batch_size=tcfg.eval_batch, mr_radius=tcfg.mr_radius,
        )
        rec = {
            "epoch": epoch, "lr": lr_last,
            "train_total": sums["total"], "train_reg": sums["reg"],
            "train_cls": sums["cls"], "train_kd": sums["kd"],
            "val_minADE": report.minADE, "val_minFDE": report.minFDE,
            "val_MR": report.MR, "val_brier_minFDE": report.brier_minFDE,
            "val_DAC": report.DAC,
        }
        history.append(rec)
        log_rows.append(
            f"{epoch},{lr_last:.10e},{sums['total']:.10e},{sums['reg']:.10e},"
            f"{sums['cls']:.10e},{sums['kd']:.10e},{report.minADE:.10e},"
            f"{report.minFDE:.10e},{report.MR:.10e},{report.brier_minFDE:.10e},{report.DAC:.10e}"
        )
        if best is None or report.minFDE < best:
            best = report.minFDE
            best_epoch = epoch
            best_values = params.values_copy()

    if teacher_ps is not None:
        if teacher_ps.content_hash() != teacher_hash:
            raise NumericalError("teacher parameters changed during distillation")

    return TrainResult(
        values=best_values,
        final_values=params.values_copy(),
        history=history,
        log_rows=[LOG_COLUMNS] + log_rows,
        best_epoch=best_epoch,
        rng_state=order_rng.bit_generator.state,
    )


def train_teacher(train_scenes, val_scenes, cfg: ModelConfig, tcfg: TrainConfig) -> TrainResult:
    tcfg = dataclasses.replace(tcfg, phase="teacher")
    return train_phase(train_scenes, val_scenes, cfg, tcfg)


def distill_student(train_scenes, val_scenes, cfg: ModelConfig, tcfg: TrainConfig,
                    teacher: Checkpoint | None) -> TrainResult:
    """KD training when gamma != 0, plain map-free training when gamma == 0."""
    if tcfg.gamma != 0.0:
        tcfg = dataclasses.replace(tcfg, phase="student_kd")
        return train_phase(train_scenes, val_scenes, cfg, tcfg, teacher=teacher)
    tcfg = dataclasses.replace(tcfg, phase="student_nkd")
    return train_phase(train_scenes, val_scenes, cfg, tcfg)
