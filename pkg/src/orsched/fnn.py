"""Percentile regression network and its exact MILP embedding.

A small fully-connected ReLU network (ReLU on the output too — targets
are nonnegative minutes) learns the map from the mean/variance of a
slot's total duration to its (1 - alpha) percentile under the matched
lognormal. Inside the scheduling MILP the network is unrolled exactly
with one binary per unstable ReLU: interval arithmetic bounds every
pre-activation, stable neurons collapse to identities or zeros, and the
output neuron is capped by the slot capacity.

Training data enumerates surgery-type combinations (sizes 1..max_size,
with replacement), sums their lognormal moments per combination, drops
3-sigma feature outliers and appends 1% all-zero rows so the network
pins the origin. Features are z-scored and the target divided by its
standard deviation (no centering — that would push the floor of the
ReLU output above zero); both affine maps are folded back into the
first and last layers after training, so the stored network operates
in raw minutes.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import inv_norm_cdf, moments_from_lognormal
from .instance import Instance, SurgeryType
from .milp import VarRef
from .scheduler import BaseModel, Schedule

MIN_OBSERVATIONS = 30


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingSet:
    features: np.ndarray  # (n, 2): total mean, total variance
    targets: np.ndarray  # (n,): percentile in minutes
    alpha: float
    n_raw: int = 0
    n_filtered: int = 0
    n_zero: int = 0


@dataclass(frozen=True)
class TrainConfig:
    hidden_layers: int = 2
    width: int = 8
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    patience: int = 10
    seed: int = 0

    def label(self) -> str:
        return (
            f"{self.hidden_layers}x{self.width}-lr{self.learning_rate}"
            f"-b{self.batch_size}-s{self.seed}"
        )


@dataclass
class FeedForwardNet:
    """Weights in raw-minute space; weights[l] has shape (out, in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    alpha: float
    metadata: dict = field(default_factory=dict)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


def eligible_types(types: list[SurgeryType]) -> list[SurgeryType]:
    """Types with enough observations to trust their fitted parameters."""
    return [t for t in types if t.n_observations >= MIN_OBSERVATIONS]


def generate_training_set(
    types: list[SurgeryType], alpha: float, max_size: int = 6
) -> TrainingSet:
    """Percentile training rows for all type combinations up to max_size.

    Every type must carry at least MIN_OBSERVATIONS observations (filter
    with eligible_types first). Targets are exact matched-lognormal
    percentiles; zero rows carry target zero.
    """
    if not types:
        raise ValueError("no surgery types to enumerate")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    thin = [t for t in types if t.n_observations < MIN_OBSERVATIONS]
    if thin:
        raise ValueError(
            f"types below {MIN_OBSERVATIONS} observations: "
            f"{[t.type_id for t in thin]}; filter with eligible_types first"
        )

    moments = [moments_from_lognormal(t.lognormal) for t in types]
    e_arr = np.array([m.mean for m in moments])
    v_arr = np.array([m.variance for m in moments])

    chunks = []
    n_raw = 0
    for k in range(1, max_size + 1):
        idx = np.array(
            list(itertools.combinations_with_replacement(range(len(types)), k)),
            dtype=np.int64,
        ).reshape(-1, k)
        n_raw += idx.shape[0]
        chunks.append(np.column_stack([e_arr[idx].sum(axis=1), v_arr[idx].sum(axis=1)]))
    feats = np.vstack(chunks)

    # 3-sigma outlier removal per feature
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std == 0.0] = 1.0
    keep = np.all(np.abs(feats - mean) <= 3.0 * std, axis=1)
    feats = feats[keep]
    n_filtered = int(feats.shape[0])

    n_zero = int(math.floor(0.01 * n_filtered))
    if n_zero:
        feats = np.vstack([feats, np.zeros((n_zero, 2))])

    e = feats[:, 0]
    v = feats[:, 1]
    targets = np.zeros(feats.shape[0])
    nz = e > 0.0
    sigma2 = np.log1p(v[nz] / (e[nz] * e[nz]))
    mu = np.log(e[nz]) - sigma2 / 2.0
    z = inv_norm_cdf(1.0 - alpha)
    targets[nz] = np.exp(mu + np.sqrt(sigma2) * z)

    # Sanity: whenever z >= sigma/2 the percentile must dominate the mean.
    guard = nz.copy()
    guard[nz] = z >= np.sqrt(sigma2) / 2.0
    if np.any(targets[guard] < e[guard] * (1.0 - 1e-12)):
        raise AssertionError("percentile targets fell below the mean unexpectedly")

    return TrainingSet(
        features=feats,
        targets=targets,
        alpha=alpha,
        n_raw=n_raw,
        n_filtered=n_filtered,
        n_zero=n_zero,
    )


def _relu(x):
    return np.maximum(x, 0.0)


def _net_forward_scaled(weights, biases, x):
    a = x
    for w, b in zip(weights, biases):
        a = _relu(a @ w.T + b)
    return a[:, 0]


def forward(net: FeedForwardNet, mean, variance):
    """Evaluate the network in raw minutes (scalars or arrays)."""
    e, v = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(variance, dtype=float)
    )
    x = np.stack([e.ravel(), v.ravel()], axis=1)
    out = _net_forward_scaled(net.weights, net.biases, x)
    if e.ndim == 0:
        return float(out[0])
    return out.reshape(e.shape)


def monotonicity_report(net: FeedForwardNet, e_range, v_range, n: int = 50) -> dict:
    """Fraction of nondecreasing steps in E at fixed Var over a grid."""
    es = np.linspace(e_range[0], e_range[1], n)
    ok = 0
    bad = 0
    for v in np.linspace(v_range[0], v_range[1], n):
        vals = forward(net, es, np.full_like(es, v))
        diffs = np.diff(vals)
        ok += int(np.sum(diffs >= -1e-9))
        bad += int(np.sum(diffs < -1e-9))
    total = ok + bad
    return {"fraction_nondecreasing": ok / total if total else 1.0, "violations": bad}


def train(ts: TrainingSet, cfg: TrainConfig) -> FeedForwardNet:
    """SGD with momentum on MSE; early stopping on validation MAE.

    Deterministic for a fixed config (numpy Generator seeded from
    cfg.seed drives the split, the init and the batch order). Returns
    the network with scaling folded in; per-split MAE / max absolute
    error in minutes land in net.metadata["metrics"].
    """
    x = np.asarray(ts.features, dtype=float)
    y = np.asarray(ts.targets, dtype=float)
    n = x.shape[0]
    if n < 10:
        raise ValueError(f"training set too small ({n} rows)")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_train = int(0.7 * n)
    n_val = int(0.15 * n)
    idx_train = perm[:n_train]
    idx_val = perm[n_train : n_train + n_val]
    idx_test = perm[n_train + n_val :]

    in_mean = x[idx_train].mean(axis=0)
    in_std = x[idx_train].std(axis=0)
    in_std[in_std == 0.0] = 1.0
    y_scale = float(y[idx_train].std())
    if y_scale == 0.0:
        y_scale = 1.0

    xs = (x - in_mean) / in_std
    ys = y / y_scale

    sizes = [2] + [cfg.width] * cfg.hidden_layers + [1]
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.full(fan_out, 0.01))
    biases[-1] = np.array([max(float(ys[idx_train].mean()), 0.01)])

    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    momentum = 0.9

    xt, yt = xs[idx_train], ys[idx_train]
    xv, yv = xs[idx_val], ys[idx_val]

    def val_mae():
        pred = _net_forward_scaled(weights, biases, xv)
        return float(np.mean(np.abs(pred - yv))) * y_scale

    best = (math.inf, None, None)
    stale = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(xt))
        for start in range(0, len(xt), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            xb, yb = xt[batch], yt[batch]
            # forward pass keeping pre-activations
            acts = [xb]
            zs = []
            a = xb
            for w, b in zip(weights, biases):
                z = a @ w.T + b
                zs.append(z)
                a = _relu(z)
                acts.append(a)
            delta = (2.0 / len(xb)) * (a[:, 0] - yb)[:, None] * (zs[-1] > 0.0)
            for layer in range(len(weights) - 1, -1, -1):
                gw = delta.T @ acts[layer]
                gb = delta.sum(axis=0)
                if layer > 0:
                    delta = (delta @ weights[layer]) * (zs[layer - 1] > 0.0)
                vel_w[layer] = momentum * vel_w[layer] - cfg.learning_rate * gw
                vel_b[layer] = momentum * vel_b[layer] - cfg.learning_rate * gb
                weights[layer] = weights[layer] + vel_w[layer]
                biases[layer] = biases[layer] + vel_b[layer]
        if not all(np.all(np.isfinite(w)) for w in weights):
            raise TrainingDiverged(f"training diverged for config {cfg.label()}")
        mae = val_mae()
        if not math.isfinite(mae):
            raise TrainingDiverged(f"training diverged for config {cfg.label()}")
        history.append(mae)
        if mae < best[0] - 1e-4:
            best = (mae, [w.copy() for w in weights], [b.copy() for b in biases])
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if best[1] is not None:
        weights, biases = best[1], best[2]

    def split_metrics(idx):
        if len(idx) == 0:
            return {"mae": 0.0, "max_ae": 0.0}
        pred = _net_forward_scaled(weights, biases, xs[idx]) * y_scale
        err = np.abs(pred - y[idx])
        return {"mae": float(err.mean()), "max_ae": float(err.max())}

    metrics = {
        "train": split_metrics(idx_train),
        "val": split_metrics(idx_val),
        "test": split_metrics(idx_test),
        "epochs_run": len(history),
    }

    # Fold input scaling into layer 0, target scaling into the last layer:
    # relu is positively homogeneous, so y_scale * relu(z) = relu(y_scale z).
    w0 = weights[0] / in_std[None, :]
    b0 = biases[0] - weights[0] @ (in_mean / in_std)
    weights[0], biases[0] = w0, b0
    weights[-1] = weights[-1] * y_scale
    biases[-1] = biases[-1] * y_scale

    net = FeedForwardNet(
        weights=[w.copy() for w in weights],
        biases=[b.copy() for b in biases],
        alpha=ts.alpha,
        metadata={
            "config": {
                "hidden_layers": cfg.hidden_layers,
                "width": cfg.width,
                "learning_rate": cfg.learning_rate,
                "batch_size": cfg.batch_size,
                "epochs": cfg.epochs,
                "patience": cfg.patience,
                "seed": cfg.seed,
            },
            "metrics": metrics,
            "scaling": {
                "input_mean": in_mean.tolist(),
                "input_std": in_std.tolist(),
                "target_scale": y_scale,
            },
            "n_rows": int(n),
        },
    )
    e_hi = float(x[:, 0].max()) if n else 1.0
    v_hi = float(x[:, 1].max()) if n else 1.0
    mono = monotonicity_report(net, (0.0, e_hi), (0.0, v_hi))
    net.metadata["metrics"]["monotonicity"] = mono
    return net


def grid_search(
    ts: TrainingSet, configs: list[TrainConfig]
) -> tuple[FeedForwardNet, list[dict]]:
    """Train every config; best validation MAE wins (first on ties)."""
    if not configs:
        raise ValueError("empty config grid")
    results = []
    best_net = None
    best_mae = math.inf
    for cfg in configs:
        try:
            net = train(ts, cfg)
        except TrainingDiverged:
            results.append({"config": cfg.label(), "val_mae": math.inf, "diverged": True})
            continue
        mae = net.metadata["metrics"]["val"]["mae"]
        results.append({"config": cfg.label(), "val_mae": mae, "diverged": False})
        if mae < best_mae:
            best_mae = mae
            best_net = net
    if best_net is None:
        raise TrainingDiverged("every configuration in the grid diverged")
    return best_net, results


def default_grid(seed: int = 0, epochs: int = 200) -> list[TrainConfig]:
    """The full hyperparameter grid: layers 1-3, width {2,4,6,8},
    learning rate {0.1, 0.01, 0.001}, batch {32, 64, 128}."""
    grid = []
    for layers in (1, 2, 3):
        for width in (2, 4, 6, 8):
            for lr in (0.1, 0.01, 0.001):
                for batch in (32, 64, 128):
                    grid.append(
                        TrainConfig(
                            hidden_layers=layers,
                            width=width,
                            learning_rate=lr,
                            batch_size=batch,
                            epochs=epochs,
                            seed=seed,
                        )
                    )
    return grid


def save_net(net: FeedForwardNet, path) -> None:
    payload = {
        "layer_sizes": net.layer_sizes,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "alpha": net.alpha,
        "metadata": net.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_net(path) -> FeedForwardNet:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return FeedForwardNet(
        weights=[np.array(w, dtype=float) for w in payload["weights"]],
        biases=[np.array(b, dtype=float) for b in payload["biases"]],
        alpha=float(payload["alpha"]),
        metadata=payload.get("metadata", {}),
    )


@dataclass
class EmbedInfo:
    """Bookkeeping from embedding the net into a model.

    mean_vars / var_vars hold the slot load variables divided by
    mean_scale / var_scale (kept near unit range so the link rows stay
    well conditioned); multiply back to read minutes / minutes^2.
    """

    output_vars: dict[tuple[str, int], VarRef] = field(default_factory=dict)
    mean_vars: dict[tuple[str, int], VarRef] = field(default_factory=dict)
    var_vars: dict[tuple[str, int], VarRef] = field(default_factory=dict)
    mean_scale: dict[tuple[str, int], float] = field(default_factory=dict)
    var_scale: dict[tuple[str, int], float] = field(default_factory=dict)
    n_binaries: int = 0
    n_stable: int = 0


def _knapsack_max(coefs, weights, cap) -> float:
    """max sum(c*x) s.t. sum(w*x) <= cap, 0 <= x <= 1 (greedy, exact)."""
    items = [(c, w) for c, w in zip(coefs, weights) if c > 0.0]
    items.sort(key=lambda it: (it[0] / it[1] if it[1] > 0 else math.inf), reverse=True)
    total = 0.0
    for c, w in items:
        if w <= 0.0:
            total += c
        elif w <= cap:
            total += c
            cap -= w
        else:
            total += c * (cap / w)
            break
    return total


def embed(net: FeedForwardNet, base: BaseModel, capacity_rows: bool = True) -> EmbedInfo:
    """Unroll the network per slot with big-M ReLU encoding.

    Per slot: continuous E/V variables linked to the assignment, one
    activation variable per neuron, a binary only where the interval
    bounds leave the ReLU genuinely two-sided. With capacity_rows the
    output activation is constrained to the slot capacity.
    """
    inst = base.instance
    model = base.model
    info = EmbedInfo()

    for sl in inst.sorted_slots():
        o, d = sl.key
        pairs = base.slot_vars(sl)
        if not pairs:
            # no admissible surgery can land here; overtime is impossible
            continue
        e_parts = []
        ratio = 0.0
        moms = []
        for s, _ in pairs:
            t = inst.type_of(s)
            m = moments_from_lognormal(t.lognormal)
            e_parts.append(m.mean)
            moms.append((m.mean, m.variance, t.sample_mean))
            if t.sample_mean > 0:
                ratio = max(ratio, m.mean / t.sample_mean)
        e_hi = min(sum(e_parts), sl.capacity * ratio) if pairs else 0.0
        # the mean-capacity row keeps sum(x*w) <= C, so a fractional
        # knapsack by variance-per-mean bounds what V can reach; much
        # tighter than summing every admissible variance
        w_caps = [mm[2] for mm in moms]
        v_hi = _knapsack_max([mm[1] for mm in moms], w_caps, sl.capacity)
        if not (math.isfinite(e_hi) and math.isfinite(v_hi)):
            raise ValueError(f"slot {sl.key}: input bounds are not finite")

        # surgery variances run to ~1e4 minutes^2 while the folded
        # first-layer weights are ~1e-4; feeding V into the model raw
        # pairs huge and tiny coefficients in the same rows and HiGHS
        # stops finding incumbents. Work with E/s_e, V/s_v instead and
        # scale the first layer up to match.
        s_e = max(e_hi, 1.0)
        s_v = max(v_hi, 1.0)
        e_var = model.add_continuous(f"E[{o},{d}]", 0.0, e_hi / s_e)
        v_var = model.add_continuous(f"V[{o},{d}]", 0.0, v_hi / s_v)
        info.mean_vars[sl.key] = e_var
        info.var_vars[sl.key] = v_var
        info.mean_scale[sl.key] = s_e
        info.var_scale[sl.key] = s_v
        e_link = [(1.0, e_var)]
        v_link = [(1.0, v_var)]
        for s, xv in pairs:
            m = moments_from_lognormal(inst.type_of(s).lognormal)
            e_link.append((-m.mean / s_e, xv))
            v_link.append((-m.variance / s_v, xv))
        model.add_constraint(f"fnn_mean_link[{o},{d}]", e_link, "==", 0.0)
        model.add_constraint(f"fnn_var_link[{o},{d}]", v_link, "==", 0.0)

        prev_vars = [e_var, v_var]
        lo = np.array([0.0, 0.0])
        hi = np.array([e_hi, v_hi])
        n_layers = len(net.weights)
        for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
            if layer == 0:
                # absorb the variable rescaling into the first layer
                w = w * np.array([s_e, s_v])
            wp = np.maximum(w, 0.0)
            wn = np.minimum(w, 0.0)
            if layer == 0:
                # E and V are sums over one assignment that the mean
                # row already budgets, so bound each pre-activation by
                # a fractional knapsack over the admissible surgeries
                # instead of the (E, V) box corners
                zlo = np.empty(w.shape[0])
                zhi = np.empty(w.shape[0])
                for i in range(w.shape[0]):
                    coefs = [
                        w[i, 0] / s_e * mm[0] + w[i, 1] / s_v * mm[1] for mm in moms
                    ]
                    zhi[i] = b[i] + _knapsack_max(coefs, w_caps, sl.capacity)
                    zlo[i] = b[i] - _knapsack_max([-cf for cf in coefs], w_caps, sl.capacity)
            else:
                zlo = wp @ lo + wn @ hi + b
                zhi = wp @ hi + wn @ lo + b
            if not (np.all(np.isfinite(zlo)) and np.all(np.isfinite(zhi))):
                raise ValueError(f"slot {sl.key}: activation bounds blew up at layer {layer}")
            if layer == n_layers - 1 and capacity_rows:
                # capacity acts on max(z, 0); with positive capacity
                # that is the plain linear row z <= C, which skips the
                # widest gate entirely and tightens the relaxation
                model.add_constraint(
                    f"fnn_overtime[{o},{d}]",
                    [(float(w[0, j]), pv) for j, pv in enumerate(prev_vars)],
                    "<=",
                    sl.capacity - float(b[0]),
                )
                zhi[0] = min(zhi[0], sl.capacity)
            next_vars = []
            for i in range(w.shape[0]):
                zl, zh = float(zlo[i]), float(zhi[i])
                z_terms = [(-float(w[i, j]), pv) for j, pv in enumerate(prev_vars)]
                rhs = float(b[i])
                if zl >= 0.0:
                    # always active: activation equals the pre-activation
                    a = model.add_continuous(f"a[{o},{d},{layer},{i}]", zl, zh)
                    model.add_constraint(
                        f"fnn_identity[{o},{d},{layer},{i}]",
                        [(1.0, a)] + z_terms,
                        "==",
                        rhs,
                    )
                    info.n_stable += 1
                elif zh <= 0.0:
                    # never active: activation pinned at zero
                    a = model.add_continuous(f"a[{o},{d},{layer},{i}]", 0.0, 0.0)
                    info.n_stable += 1
                else:
                    a = model.add_continuous(f"a[{o},{d},{layer},{i}]", 0.0, zh)
                    g = model.add_binary(f"g[{o},{d},{layer},{i}]")
                    info.n_binaries += 1
                    model.add_constraint(
                        f"fnn_relu_lb[{o},{d},{layer},{i}]",
                        [(1.0, a)] + z_terms,
                        ">=",
                        rhs,
                    )
                    # a <= z + (-zl) (1 - g)
                    model.add_constraint(
                        f"fnn_relu_ub[{o},{d},{layer},{i}]",
                        [(1.0, a)] + z_terms + [(-zl, g)],
                        "<=",
                        rhs - zl,
                    )
                    model.add_constraint(
                        f"fnn_relu_gate[{o},{d},{layer},{i}]",
                        [(1.0, a), (-zh, g)],
                        "<=",
                        0.0,
                    )
                next_vars.append(a)
            prev_vars = next_vars
            lo = np.maximum(zlo, 0.0)
            hi = np.maximum(zhi, 0.0)

        info.output_vars[sl.key] = prev_vars[0]
    return info


def constraint_overtime_prob(
    schedule: Schedule, instance: Instance
) -> dict[tuple[str, int], float]:
    """Matched-lognormal overtime probability per slot at a fixed assignment."""
    from scipy import special

    by_id = {s.surgery_id: s for s in instance.surgeries}
    out = {}
    for sl in instance.slots:
        ids = schedule.assigned_to(sl.key)
        if not ids:
            out[sl.key] = 0.0
            continue
        e = 0.0
        v = 0.0
        for sid in ids:
            m = moments_from_lognormal(instance.type_of(by_id[sid]).lognormal)
            e += m.mean
            v += m.variance
        if v <= 0.0:
            out[sl.key] = 0.0 if e <= sl.capacity else 1.0
            continue
        sigma2 = math.log1p(v / (e * e))
        mu = math.log(e) - sigma2 / 2.0
        out[sl.key] = float(
            1.0 - special.ndtr((math.log(sl.capacity) - mu) / math.sqrt(sigma2))
        )
    return out
