"""Physics-constrained uptake regressor.

Architecture: three parallel single-layer "scale" pathways over the
feature row, concatenated and modulated element-wise by a sigmoid gate
driven by raw (p, T); then a compressing dense backbone with batch norm,
Swish, dropout, and residual skips between equal-width layers; Softplus
output guarantees non-negative uptake.

Loss: weighted data fidelity + capacity penalty at high pressure + hard
output bounds + a monotonicity penalty on dQ/dp. dQ/dp is the total
derivative through both the gate's pressure channel and every
pressure-derived feature column, supplied via a per-row d(feature)/dp
companion matrix.

Training follows a three-phase curriculum: data-only warmup, physics
ramp-in with gradient-norm-balanced term weights, then fixed full
constraints.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .errors import DimensionMismatch, DivergenceDetected

QMAX_TABLE = {"Clay": 1.2, "Shale": 1.0, "Coal": 0.88}  # mmol/g

MONO_EPS = 1e-6
HIGH_P = 50.0  # bar
DATA_W_SCALE = 5.0
DATA_W_PIVOT = 0.1
LAMBDA_EPS = 1e-12

BACKBONE_VARIANTS = {
    3: (256, 512, 256),
    4: (256, 512, 256, 128),
    5: (256, 512, 512, 256, 128),
}


@dataclass
class ArchSpec:
    input_dim: int
    scale_widths: tuple = (64, 128, 256)
    backbone_widths: tuple = (256, 512, 256, 128)
    dropout: float = 0.10
    width_mult: float = 1.0
    seed: int = 42

    def scaled(self, widths):
        return [max(1, int(round(w * self.width_mult))) for w in widths]


class Network(nn.Module):
    def __init__(self, spec: ArchSpec):
        super().__init__()
        torch.manual_seed(spec.seed)
        self.spec = spec

        sw = spec.scaled(spec.scale_widths)
        self.scales = nn.ModuleList(
            [nn.Linear(spec.input_dim, w) for w in sw]
        )
        concat = sum(sw)
        self.gate = nn.Linear(2, concat)

        bw = spec.scaled(spec.backbone_widths)
        layers, norms, drops = [], [], []
        prev = concat
        self._skip = []
        for w in bw:
            layers.append(nn.Linear(prev, w))
            norms.append(nn.BatchNorm1d(w, momentum=0.1))
            drops.append(nn.Dropout(spec.dropout))
            self._skip.append(prev == w)
            prev = w
        self.backbone = nn.ModuleList(layers)
        self.norms = nn.ModuleList(norms)
        self.drops = nn.ModuleList(drops)
        self.head = nn.Linear(prev, 1)
        self.act = nn.SiLU()
        self.out_act = nn.Softplus()

        # Raw (p, T) standardization for the gate; set from training data.
        self.register_buffer("gate_mean", torch.zeros(2))
        self.register_buffer("gate_std", torch.ones(2))

        self._init_weights()

    def _init_weights(self):
        for lin in list(self.scales) + [self.gate] + list(self.backbone):
            nn.init.normal_(lin.weight, 0.0,
                            math.sqrt(2.0 / lin.weight.shape[1]))
            nn.init.zeros_(lin.bias)
        nn.init.xavier_uniform_(self.head.weight)
        with torch.no_grad():
            self.head.weight.mul_(0.1)
        nn.init.zeros_(self.head.bias)

    def set_gate_stats(self, p, T):
        p = np.asarray(p, dtype=float)
        T = np.asarray(T, dtype=float)
        mean = torch.tensor([p.mean(), T.mean()])
        std = torch.tensor([max(p.std(), 1e-12), max(T.std(), 1e-12)])
        self.gate_mean.copy_(mean.to(self.gate_mean.dtype))
        self.gate_std.copy_(std.to(self.gate_std.dtype))

    def forward(self, x, p, T):
        """x: (B, d) scaled features; p, T: (B,) raw pressure/temperature."""
        if x.shape[-1] != self.spec.input_dim:
            raise DimensionMismatch(
                f"expected {self.spec.input_dim} features, got {x.shape[-1]}"
            )
        h = torch.cat([self.act(s(x)) for s in self.scales], dim=-1)
        pt = torch.stack([p, T], dim=-1)
        pt = (pt - self.gate_mean) / self.gate_std
        h = h * torch.sigmoid(self.gate(pt))
        for lin, norm, drop, skip in zip(self.backbone, self.norms,
                                         self.drops, self._skip):
            out = drop(self.act(norm(lin(h))))
            h = h + out if skip else out
        return self.out_act(self.head(h)).squeeze(-1)

    def n_parameters(self):
        return sum(t.numel() for t in self.parameters() if t.requires_grad)


def build_network(spec):
    return Network(spec)


def forward_with_dqdp(net, x, p, T, dxdp, create_graph=False):
    """Predictions and total dQ/dp through gate and feature columns.

    dxdp: (B, d) analytic derivative of each scaled feature w.r.t. raw
    pressure (bar). The reconstruction x + (p - p0) * dxdp makes the
    feature row an explicit function of p so reverse-mode
    differentiation captures both pathways.
    """
    p_var = p.detach().clone().requires_grad_(True)
    x_p = x + (p_var - p.detach()).unsqueeze(-1) * dxdp
    pred = net(x_p, p_var, T)
    dqdp = torch.autograd.grad(pred.sum(), p_var,
                               create_graph=create_graph)[0]
    return pred, dqdp


def finite_diff_dqdp(net, x, p, T, dxdp, step=1e-3):
    """Central-difference contract check of the analytic dQ/dp."""
    with torch.no_grad():
        up = net(x + step * dxdp, p + step, T)
        dn = net(x - step * dxdp, p - step, T)
    return (up - dn) / (2.0 * step)


@dataclass
class LossBreakdown:
    data: torch.Tensor
    physics: torch.Tensor
    bounds: torch.Tensor
    monotonicity: torch.Tensor
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)

    @property
    def terms(self):
        return (self.data, self.physics, self.bounds, self.monotonicity)

    @property
    def total(self):
        return sum(l * t for l, t in zip(self.lambdas, self.terms))


def loss_terms(pred, target, p, qmax_row, dqdp, lambdas=(1.0, 1.0, 1.0, 1.0)):
    """The four loss terms; qmax_row is the per-row lithology capacity."""
    w = torch.sigmoid(DATA_W_SCALE * (target - DATA_W_PIVOT)) + 0.5
    data = torch.mean(w * (target - pred) ** 2)

    high = p > HIGH_P
    if high.any():
        ph, qh, ch = pred[high], qmax_row[high], qmax_row[high]
        physics = torch.mean(torch.relu(ph - qh)
                             + 0.1 * torch.relu(0.7 * ch - ph))
    else:
        physics = torch.zeros((), dtype=pred.dtype)

    bounds = torch.mean(torch.relu(-pred) + torch.relu(pred - qmax_row))
    mono = torch.mean(torch.relu(-dqdp - MONO_EPS))
    return LossBreakdown(data, physics, bounds, mono, lambdas)


def adaptive_lambdas(grad_norms, ema_state, alpha=0.1):
    """Gradient-norm balancing: lambda_k = max(ema) / (ema_k + eps)."""
    g = np.asarray(grad_norms, dtype=float)
    ema = g.copy() if ema_state is None else \
        (1.0 - alpha) * np.asarray(ema_state, dtype=float) + alpha * g
    lam = ema.max() / (ema + LAMBDA_EPS)
    return tuple(float(v) for v in lam), ema


@dataclass
class TrainSchedule:
    phase1_epochs: int = 50
    phase1_lr: float = 1.2e-3
    phase2_epochs: int = 250
    phase2_lr: tuple = (5e-4, 1e-6)
    phase3_epochs: int = 100
    phase3_lr: tuple = (1e-4, 1e-7)
    phase3_weights: tuple = (1.0, 1.0, 0.1, 0.05)
    batch_size: int = 64
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    patience: int = 20
    tolerance: float = 1e-5
    adaptive_phase2: bool = True  # gradient-norm balancing inside phase 2


def lr_at(schedule, phase, epoch_in_phase):
    """Learning rate: constant warmup, then per-phase cosine decay."""
    if phase == 1:
        return schedule.phase1_lr
    if phase == 2:
        hi, lo = schedule.phase2_lr
        span = schedule.phase2_epochs
    else:
        hi, lo = schedule.phase3_lr
        span = schedule.phase3_epochs
    return lo + (hi - lo) * (1.0 + math.cos(math.pi * epoch_in_phase / span)) / 2.0


@dataclass
class TrainingData:
    X: np.ndarray  # (n, d) robust-scaled features
    p: np.ndarray  # (n,) raw pressure, bar
    T: np.ndarray  # (n,) raw temperature, K
    y: np.ndarray  # (n,) uptake, mmol/g
    qmax: np.ndarray  # (n,) lithology capacity per row
    dxdp: np.ndarray  # (n, d) d(scaled feature)/dp

    def tensors(self, dtype=torch.float32):
        return tuple(
            torch.as_tensor(a, dtype=dtype)
            for a in (self.X, self.p, self.T, self.y, self.qmax, self.dxdp)
        )

    @classmethod
    def assemble(cls, records, matrix, scaler, catalog_by_name,
                 qmax_table=None):
        """Build tensors from integrated records and their scaled matrix.

        The companion dxdp holds the analytic pressure derivative of each
        feature divided by the column IQR (scaling is affine in the
        feature, so its derivative just rescales).
        """
        qmax_table = qmax_table or QMAX_TABLE
        n, d = matrix.X.shape
        dxdp = np.zeros((n, d))
        for j, name in enumerate(matrix.names):
            entry = catalog_by_name[name]
            if not entry.pressure_dependent:
                continue
            for i, rec in enumerate(records):
                dxdp[i, j] = entry.dfdp(rec) / scaler.iqr[j]
        return cls(
            X=matrix.X,
            p=np.array([r.pressure for r in records], dtype=float),
            T=np.array([r.temperature for r in records], dtype=float),
            y=np.array([r.uptake for r in records], dtype=float),
            qmax=np.array([qmax_table[r.lithology] for r in records]),
            dxdp=dxdp,
        )


def _phase_lambdas(phase, epoch, schedule, adaptive):
    if phase == 1:
        return (1.0, 0.0, 0.0, 0.0)
    if phase == 3:
        return schedule.phase3_weights
    ramp = epoch / schedule.phase2_epochs
    base = adaptive if adaptive is not None else (1.0, 1.0, 1.0, 1.0)
    return (base[0], ramp * base[1], ramp * base[2], ramp * base[3])


def _term_grad_norms(net, breakdown):
    norms = []
    params = [t for t in net.parameters() if t.requires_grad]
    for term in breakdown.terms:
        if not term.requires_grad:
            norms.append(0.0)
            continue
        grads = torch.autograd.grad(term, params, retain_graph=True,
                                    allow_unused=True)
        sq = sum(float(g.pow(2).sum()) for g in grads if g is not None)
        norms.append(math.sqrt(sq))
    return norms


def train(net, train_data, val_data, schedule=None, seed=42,
          dtype=torch.float32):
    """Three-phase curriculum training with early stopping.

    Patience and best-parameter restoration act on the last phase with a
    nonzero epoch budget, monitored under that phase's final loss
    weights. Earlier curriculum phases run their full budget and pass
    their final state forward: their objective is still moving, so a
    "best" snapshot there would systematically favor the pre-constraint
    model.
    """
    schedule = schedule or TrainSchedule()
    net = net.to(dtype)
    Xt, pt, Tt, yt, qt, dt = train_data.tensors(dtype)
    Xv, pv, Tv, yv, qv, dv = val_data.tensors(dtype)
    net.set_gate_stats(train_data.p, train_data.T)

    opt = torch.optim.AdamW(net.parameters(), lr=schedule.phase1_lr,
                            betas=(0.9, 0.999), eps=1e-8,
                            weight_decay=schedule.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    n = len(yt)
    history = []

    phases = ((1, schedule.phase1_epochs), (2, schedule.phase2_epochs),
              (3, schedule.phase3_epochs))
    last_phase = max((ph for ph, n in phases if n > 0), default=1)
    for phase, n_epochs in phases:
        monitored = phase == last_phase
        best_val = math.inf
        best_state = copy.deepcopy(net.state_dict())
        stale = 0
        ema = None
        adaptive = None
        for epoch in range(n_epochs):
            lr = lr_at(schedule, phase, epoch)
            for group in opt.param_groups:
                group["lr"] = lr

            if phase == 2 and schedule.adaptive_phase2:
                net.train()
                if n < 2:
                    for norm in net.norms:
                        norm.eval()
                pred, dqdp = forward_with_dqdp(net, Xt, pt, Tt, dt,
                                               create_graph=True)
                bd = loss_terms(pred, yt, pt, qt, dqdp)
                norms = _term_grad_norms(net, bd)
                lam, ema = adaptive_lambdas(norms, ema)
                adaptive = lam
                opt.zero_grad(set_to_none=True)

            lambdas = _phase_lambdas(phase, epoch, schedule, adaptive)
            net.train()
            perm = torch.randperm(n, generator=gen)
            epoch_terms = np.zeros(4)
            n_batches = 0
            for start in range(0, n, schedule.batch_size):
                idx = perm[start:start + schedule.batch_size]
                if len(idx) < 2:
                    # Batch statistics are undefined on one row; fall
                    # back to running statistics for the norm layers.
                    for norm in net.norms:
                        norm.eval()
                if phase == 1:
                    pred = net(Xt[idx], pt[idx], Tt[idx])
                    dqdp = torch.zeros_like(pred)
                else:
                    pred, dqdp = forward_with_dqdp(
                        net, Xt[idx], pt[idx], Tt[idx], dt[idx],
                        create_graph=True)
                bd = loss_terms(pred, yt[idx], pt[idx], qt[idx], dqdp,
                                lambdas)
                loss = bd.total
                if not torch.isfinite(loss):
                    raise DivergenceDetected(
                        f"non-finite loss at phase {phase} epoch {epoch}"
                    )
                opt.zero_grad(set_to_none=True)
                loss.backward()
                nn.utils.clip_grad_norm_(net.parameters(),
                                         schedule.clip_norm)
                opt.step()
                epoch_terms += [float(t.detach()) for t in bd.terms]
                n_batches += 1

            net.eval()
            with torch.no_grad():
                pred_v = net(Xv, pv, Tv)
            dqdp_v = finite_diff_dqdp(net, Xv, pv, Tv, dv) if phase > 1 \
                else torch.zeros_like(pred_v)
            # The early-stop monitor uses the phase's *final* weights so it
            # is stationary within a phase; monitoring the ramping weights
            # would inflate the loss each epoch and trip patience spuriously.
            monitor = _phase_lambdas(phase, n_epochs, schedule, None)
            val_bd = loss_terms(pred_v, yv, pv, qv, dqdp_v, monitor)
            val_loss = float(val_bd.total)
            if not math.isfinite(val_loss):
                raise DivergenceDetected(
                    f"non-finite validation loss at phase {phase} epoch {epoch}"
                )

            history.append({
                "phase": phase, "epoch": epoch, "lr": lr,
                "lambdas": list(lambdas),
                "train_terms": (epoch_terms / max(n_batches, 1)).tolist(),
                "val_loss": val_loss,
            })

            if not monitored:
                continue
            if val_loss < best_val - schedule.tolerance:
                best_val = val_loss
                best_state = copy.deepcopy(net.state_dict())
                stale = 0
            else:
                stale += 1
                if stale >= schedule.patience:
                    break
        if monitored:
            net.load_state_dict(best_state)
    return net, history


def predict(net, data, dtype=torch.float32):
    X, p, T, *_ = data.tensors(dtype)
    net.eval()
    with torch.no_grad():
        return net(X, p, T).numpy()


def save_checkpoint(net, path, extra=None):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    torch.save({"spec": asdict(net.spec),
                "state": net.state_dict(),
                "extra": extra or {}}, path)


def load_checkpoint(path):
    blob = torch.load(path, weights_only=False)
    spec_d = blob["spec"]
    spec_d["scale_widths"] = tuple(spec_d["scale_widths"])
    spec_d["backbone_widths"] = tuple(spec_d["backbone_widths"])
    spec = ArchSpec(**spec_d)
    net = Network(spec)
    net.load_state_dict(blob["state"])
    return net, blob.get("extra", {})
