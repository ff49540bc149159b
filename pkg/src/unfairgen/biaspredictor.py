"""Regressor for per-group bias values.

A tanh MLP trunk feeds a softplus regression head (so predictions are never
negative) and, optionally, an auxiliary bias-bin classifier. Skewed bias
distributions are handled by inverse bin-frequency sample weights.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from unfairgen import nncore
from unfairgen.attrspace import GroupBiasTable, as_attribute, as_bit_matrix


@dataclass
class PredictorConfig:
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    epochs: int = 300
    min_steps: int = 3000
    lr: float = 3e-3
    lr_floor: float = 0.01
    batch_size: int = 64
    reweight: bool = True
    n_bins: int = 10
    aux_weight: float = 0.1
    val_fraction: float = 0.1
    min_val_groups: int = 2
    patience: int = 60
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1 or self.n_bins < 1:
            raise ValueError("epochs, lr, batch_size and n_bins must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.aux_weight < 0:
            raise ValueError("aux_weight must be >= 0")


def equal_frequency_edges(values, n_bins: int) -> np.ndarray:
    return np.quantile(np.asarray(values, dtype=np.float64), np.linspace(0.0, 1.0, n_bins + 1))


def equal_width_edges(values, n_bins: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    return np.linspace(lo, hi if hi > lo else lo + 1.0, n_bins + 1)


def assign_bins(values, edges) -> np.ndarray:
    n_bins = len(edges) - 1
    return np.clip(np.searchsorted(edges[1:-1], values, side="right"), 0, n_bins - 1)


def inverse_frequency_weights(bins, n_bins: int) -> np.ndarray:
    """Per-sample weights proportional to ``1 / count(bin)``, normalised to mean 1."""
    counts = np.bincount(bins, minlength=n_bins).astype(np.float64)
    w = 1.0 / counts[bins]
    return w * (len(w) / w.sum())


@dataclass
class BiasPredictor:
    trunk: nncore.Mlp
    head: nncore.Mlp
    aux: nncore.Mlp | None
    bin_edges: np.ndarray
    config: PredictorConfig = field(default_factory=PredictorConfig)
    scale: float = 1.0
    history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return self.trunk.sizes[0]

    def _forward(self, x):
        hid, c_trunk = nncore.forward(self.trunk, x)
        pre, c_head = nncore.forward(self.head, hid)
        logits, c_aux = (None, None) if self.aux is None else nncore.forward(self.aux, hid)
        return nncore.softplus(pre[:, 0]), logits, (c_trunk, c_head, c_aux)

    def predict_bits(self, bits) -> np.ndarray:
        bits = as_bit_matrix(bits, self.dimension)
        if bits.shape[0] == 0:
            return np.zeros(0)
        hid, _ = nncore.forward(self.trunk, bits.astype(np.float64))
        pre, _ = nncore.forward(self.head, hid)
        return self.scale * nncore.softplus(pre[:, 0])

    def modules(self) -> dict:
        mods = {"trunk": self.trunk, "head": self.head}
        if self.aux is not None:
            mods["aux"] = self.aux
        return mods

    def params(self) -> list:
        return [p for m in self.modules().values() for p in m.params()]

    def save(self, path, lineage=()) -> None:
        nncore.save_checkpoint(path, self.modules(), lineage,
                               extra={"bin_edges": self.bin_edges.tolist(), "scale": self.scale,
                                      "config": _config_doc(self.config)})

    @classmethod
    def load(cls, path) -> "BiasPredictor":
        mods, doc = nncore.load_checkpoint(path)
        if "bin_edges" not in doc:
            raise ValueError(f"{path}: predictor checkpoint lacks bin_edges")
        cfg = PredictorConfig(**doc.get("config", {}))
        return cls(mods["trunk"], mods["head"], mods.get("aux"), np.array(doc["bin_edges"]), cfg,
                   float(doc.get("scale", 1.0)))


def _config_doc(cfg: PredictorConfig) -> dict:
    doc = asdict(cfg)
    doc["hidden"] = list(cfg.hidden)
    return doc


def predict(predictor: BiasPredictor, a) -> float:
    a = as_attribute(a, predictor.dimension)
    return float(predictor.predict_bits(np.array([a]))[0])


def _init_predictor(d: int, cfg: PredictorConfig, edges, scale, rng) -> BiasPredictor:
    sizes = (d,) + cfg.hidden
    trunk = nncore.Mlp.init(sizes, (cfg.activation,) * len(cfg.hidden), rng)
    # linear head; softplus is applied outside so training can use the matching loss
    head = nncore.Mlp.init((sizes[-1], 1), ("identity",), rng)
    aux = nncore.Mlp.init((sizes[-1], cfg.n_bins), ("identity",), rng) if cfg.aux_weight > 0 else None
    return BiasPredictor(trunk, head, aux, edges, cfg, scale)


def _loss_and_grads(pred: BiasPredictor, x, y, w, bins, aux_weight):
    out, logits, (c_trunk, c_head, c_aux) = pred._forward(x)
    wsum = w.sum()
    resid = out - y
    loss = float(w @ (resid * resid) / wsum)
    # Matching-loss gradient for the softplus link: d/dpre = out - y. It shares
    # the squared error's minimiser but skips the vanishing softplus slope.
    g_out = (2.0 * w * resid / wsum)[:, None]
    g_head, g_hid = nncore.backward(pred.head, c_head, g_out)
    grads = {"head": g_head}
    if pred.aux is not None and aux_weight > 0:
        shifted = logits - logits.max(axis=1, keepdims=True)
        prob = np.exp(shifted)
        prob /= prob.sum(axis=1, keepdims=True)
        rows = np.arange(len(bins))
        loss += aux_weight * float(-(w @ np.log(prob[rows, bins] + 1e-300)) / wsum)
        g_logits = prob.copy()
        g_logits[rows, bins] -= 1.0
        g_logits *= (aux_weight * w / wsum)[:, None]
        g_aux, g_hid_aux = nncore.backward(pred.aux, c_aux, g_logits)
        g_hid = g_hid + g_hid_aux
        grads["aux"] = g_aux
    g_trunk, _ = nncore.backward(pred.trunk, c_trunk, g_hid)
    grads["trunk"] = g_trunk
    flat = [g for name in pred.modules() for g in grads[name]]
    return loss, flat


def _mse(pred: BiasPredictor, bits, y) -> float:
    r = pred.predict_bits(bits) - y
    return float(np.mean(r * r))


def train_predictor(table: GroupBiasTable, config: PredictorConfig | None = None) -> BiasPredictor:
    """Fit the regressor to the table's bias values.

    ``history[0]`` is the training-set MSE at initialisation and
    ``history[e]`` the MSE after epoch ``e``. When the table is large enough a
    group-level validation slice drives early stopping and the best
    parameters are restored.
    """
    cfg = config or PredictorConfig()
    if len(table) < 2:
        raise ValueError("need at least two groups to train a bias predictor")
    rng = np.random.default_rng(cfg.seed)
    bits = table.bits.astype(np.float64)
    y = table.bias.copy()
    n = len(table)

    n_val = int(round(cfg.val_fraction * n))
    if n_val >= cfg.min_val_groups and n - n_val >= 2:
        perm = rng.permutation(n)
        val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    else:
        val_idx, tr_idx = np.zeros(0, dtype=np.int64), np.arange(n)
    x_tr, y_tr = bits[tr_idx], y[tr_idx]

    # Equal-frequency bins label the auxiliary task; reweighting needs
    # equal-width bins, since equal-frequency counts would all be equal.
    edges = equal_frequency_edges(y_tr, cfg.n_bins)
    bins = assign_bins(y_tr, edges)
    if cfg.reweight:
        w_tr = inverse_frequency_weights(assign_bins(y_tr, equal_width_edges(y_tr, cfg.n_bins)), cfg.n_bins)
    else:
        w_tr = np.ones(len(y_tr))

    # the head fits bias / scale; predictions are rescaled
    scale = float(y_tr.max()) or 1.0
    pred = _init_predictor(table.dimension, cfg, edges, scale, rng)
    y_fit = y_tr / scale
    opt = nncore.Adam(lr=cfg.lr)
    pred.history.append(_mse(pred, x_tr, y_tr))
    best_val, best_params, since_best = np.inf, None, 0
    if val_idx.size:
        best_val = _mse(pred, bits[val_idx], y[val_idx])
        best_params = [p.copy() for p in pred.params()]
        pred.val_history.append(best_val)

    batches = -(-len(y_tr) // cfg.batch_size)
    epochs = max(cfg.epochs, -(-cfg.min_steps // batches))
    total_steps, step = epochs * batches, 0
    for epoch in range(epochs):
        order = rng.permutation(len(y_tr))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _loss_and_grads(pred, x_tr[idx], y_fit[idx], w_tr[idx], bins[idx], cfg.aux_weight)
            if not np.isfinite(loss):
                raise FloatingPointError(f"predictor loss diverged at epoch {epoch}")
            # cosine decay to lr_floor * lr over the planned steps
            frac = min(1.0, step / max(1, total_steps - 1))
            opt.lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))
            opt.step(pred.params(), grads)
            step += 1
            for m in pred.modules().values():
                m.touch()
        pred.history.append(_mse(pred, x_tr, y_tr))
        if val_idx.size:
            val = _mse(pred, bits[val_idx], y[val_idx])
            pred.val_history.append(val)
            if val < best_val:
                best_val, best_params, since_best = val, [p.copy() for p in pred.params()], 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break

    if best_params is not None:
        for p, best in zip(pred.params(), best_params):
            p[...] = best
        for m in pred.modules().values():
            m.touch()
        pred.history.append(_mse(pred, x_tr, y_tr))
    return pred
