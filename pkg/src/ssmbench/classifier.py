"""Small feed-forward network for control/pathology classification of offset vectors."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .shapes import stratified_split

ACTIVATIONS = ("relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class MlpConfig:
    """Network and solver hyperparameters. ``hidden=()`` is logistic regression."""

    hidden: tuple = ()
    activation: str = "relu"
    l2: float = 0.0
    learning_rate: float = 0.05
    momentum: float = 0.0
    epochs: int = 200
    batch_size: int = 0  # 0 means full batch
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 0:
            raise ValueError("learning_rate >= 0, epochs >= 1 and batch_size >= 0 required")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @property
    def size(self) -> int:
        return sum(self.hidden)


def default_grid(epochs: int = 200, learning_rate: float = 0.05) -> list[MlpConfig]:
    grid = []
    for hidden in [(), (16,), (32, 16)]:
        for act in ("relu", "tanh"):
            for l2 in (0.0, 1e-3):
                for mom in (0.0, 0.9):
                    grid.append(MlpConfig(hidden, act, l2, learning_rate, mom, epochs))
    return grid


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return _sigmoid(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_params(n_in: int, cfg: MlpConfig) -> list:
    rng = np.random.default_rng(cfg.seed)
    sizes = [n_in, *cfg.hidden, 1]
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        gain = 2.0 if cfg.activation == "relu" else 1.0
        params.append([rng.normal(0.0, np.sqrt(gain / a), (a, b)), np.zeros(b)])
    return params


def forward(params, x, activation):
    """Returns output probabilities and the per-layer (pre, post) activations."""
    cache = [(None, x)]
    a = x
    for i, (w, b) in enumerate(params):
        z = a @ w + b
        a = _sigmoid(z) if i == len(params) - 1 else _act(activation, z)
        cache.append((z, a))
    return a[:, 0], cache


def loss_and_grads(params, x, y, cfg: MlpConfig):
    """Mean binary cross-entropy plus ``l2/2 * sum(W^2)`` and its parameter gradients."""
    n = len(x)
    p, cache = forward(params, x, cfg.activation)
    z_out = cache[-1][0][:, 0]
    # BCE written on the logit for stability
    bce = np.mean(np.logaddexp(0.0, z_out) - y * z_out)
    loss = bce + 0.5 * cfg.l2 * sum(float(np.sum(w * w)) for w, _ in params)
    grads = [None] * len(params)
    delta = ((p - y) / n)[:, None]
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        a_prev = cache[i][1]
        grads[i] = [a_prev.T @ delta + cfg.l2 * w, delta.sum(axis=0)]
        if i:
            z, a = cache[i]
            delta = (delta @ w.T) * _act_grad(cfg.activation, z, a)
    return float(loss), grads


def numeric_grads(params, x, y, cfg: MlpConfig, h: float = 1e-6):
    """Central finite differences of :func:`loss_and_grads`' loss, for checking."""
    out = []
    for layer in params:
        g_layer = []
        for arr in layer:
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up, _ = loss_and_grads(params, x, y, cfg)
                arr[idx] = old - h
                dn, _ = loss_and_grads(params, x, y, cfg)
                arr[idx] = old
                g[idx] = (up - dn) / (2 * h)
            g_layer.append(g)
        out.append(g_layer)
    return out


@dataclass
class Mlp:
    config: MlpConfig
    params: list
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    loss_history: list = field(default_factory=list)

    def predict_proba(self, features) -> np.ndarray:
        x = (_check_features(features) - self.feature_mean) / self.feature_scale
        return forward(self.params, x, self.config.activation)[0]

    def predict(self, features) -> np.ndarray:
        return (self.predict_proba(features) >= 0.5).astype(int)


def _check_features(features):
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("features must be a nonempty (n, m) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain NaN or infinite values")
    return x


def _check_labels(labels, n):
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ValueError(f"{y.size} labels for {n} samples")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 (control) or 1 (pathology)")
    return y.astype(float)


def standardizer(x):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def train_mlp(features, labels, cfg: MlpConfig, min_per_class: int = 2) -> Mlp:
    """Mini-batch gradient descent (optional momentum) on z-scored features."""
    x = _check_features(features)
    y = _check_labels(labels, len(x))
    counts = np.bincount(y.astype(int), minlength=2)
    if counts.min() < min_per_class:
        raise ValueError(f"need at least {min_per_class} samples of each class, got {counts.tolist()}")
    mean, scale = standardizer(x)
    xs = (x - mean) / scale
    params = init_params(x.shape[1], cfg)
    velocity = [[np.zeros_like(a) for a in layer] for layer in params]
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(xs)
    bs = n if cfg.batch_size in (0, None) or cfg.batch_size >= n else cfg.batch_size
    history = []
    for _ in range(cfg.epochs):
        order = np.arange(n) if bs == n else rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = loss_and_grads(params, xs[idx], y[idx], cfg)
            for layer, vel, g in zip(params, velocity, grads):
                for j in range(2):
                    vel[j] = cfg.momentum * vel[j] - cfg.learning_rate * g[j]
                    layer[j] += vel[j]
        history.append(loss_and_grads(params, xs, y, cfg)[0])
    return Mlp(cfg, params, mean, scale, history)


def save_model(path, model: Mlp) -> None:
    blob = {
        "config": asdict(model.config),
        "params": [[a.tolist() for a in layer] for layer in model.params],
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
    }
    Path(path).write_text(json.dumps(blob))


def load_model(path) -> Mlp:
    blob = json.loads(Path(path).read_text())
    cfg = MlpConfig(**blob["config"])
    params = [[np.array(a, dtype=float) for a in layer] for layer in blob["params"]]
    for layer in params:
        layer[1] = layer[1].reshape(-1)
    return Mlp(cfg, params, np.array(blob["feature_mean"]), np.array(blob["feature_scale"]))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_score(scores, labels) -> float | None:
    """Mann-Whitney AUC; None when only one class is present."""
    y = np.asarray(labels).astype(int)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n0 == 0 or n1 == 0:
        return None
    r = midranks(scores)
    return float((r[y == 1].sum() - n1 * (n1 + 1) / 2) / (n0 * n1))


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    f1: float
    auc: float | None

    @property
    def auc_missing(self) -> bool:
        return self.auc is None


def classification_scores(predicted, scores, labels) -> Evaluation:
    y = np.asarray(labels).astype(int)
    pred = np.asarray(predicted).astype(int)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    acc = 100.0 * float(np.mean(pred == y))
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    # no positives anywhere and none predicted: nothing missed, nothing claimed
    f1 = 100.0 if tp + fp + fn == 0 else 100.0 * 2 * tp / (2 * tp + fp + fn)
    return Evaluation(acc, f1, auc_score(scores, y))


def evaluate(model: Mlp, features, labels) -> Evaluation:
    p = model.predict_proba(features)
    return classification_scores((p >= 0.5).astype(int), p, labels)


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

def stratified_folds(labels, folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle each class and deal it round-robin, continuing where the previous class stopped."""
    y = np.asarray(labels).astype(int)
    out = [[] for _ in range(folds)]
    start = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        if idx.size < folds:
            raise ValueError(f"class {c} has {idx.size} samples, fewer than {folds} folds")
        for j, i in enumerate(idx):
            out[(start + j) % folds].append(int(i))
        start = (start + idx.size) % folds
    return [np.sort(np.array(f)) for f in out]


def cv_grid_search(features, labels, grid, folds: int = 3, rng=None):
    """Best config by mean validation accuracy; returns ``(config, scores)``.

    Ties go to the network with fewer hidden units, then the earlier grid entry.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    rng = rng if rng is not None else np.random.default_rng(0)
    x = _check_features(features)
    y = _check_labels(labels, len(x))
    parts = stratified_folds(y, folds, rng)
    scores = []
    for cfg in grid:
        accs = []
        for f in range(folds):
            val = parts[f]
            train = np.setdiff1d(np.arange(len(x)), val)
            model = train_mlp(x[train], y[train], cfg, min_per_class=1)
            accs.append(evaluate(model, x[val], y[val]).accuracy)
        scores.append(float(np.mean(accs)))
    keyed = [(-round(s, 9), cfg.size, i) for i, (s, cfg) in enumerate(zip(scores, grid))]
    best = min(keyed)[2]
    return grid[best], scores


@dataclass(frozen=True)
class ClassifierReport:
    """Mean and std over repeats; accuracy and F1 in percent."""

    train: dict
    test: dict
    n_repeats: int
    chosen: tuple = ()
    auc_missing: int = 0

    @property
    def std_by_convention(self) -> bool:
        return self.n_repeats == 1

    def rows(self, label: str = "synthetic"):
        for split, stats in (("train", self.train), ("test", self.test)):
            for metric in ("accuracy", "f1", "auc"):
                m, s = stats[metric]
                yield label, split, metric, m, s


def write_report_csv(path, reports: dict) -> None:
    with Path(path).open("w") as fh:
        fh.write("dataset,split,metric,mean,std\n")
        for label, rep in reports.items():
            for row in rep.rows(label):
                fh.write(f"{row[0]},{row[1]},{row[2]},{_fmt(row[3])},{_fmt(row[4])}\n")


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def _summary(evals):
    out = {}
    for key in ("accuracy", "f1", "auc"):
        vals = [getattr(e, key) for e in evals if getattr(e, key) is not None]
        if not vals:
            out[key] = (float("nan"), float("nan"))
        else:
            out[key] = (float(np.mean(vals)), float(np.std(vals)) if len(vals) > 1 else 0.0)
    return out


def repeated_split_experiment(features, labels, n_repeats: int, test_fraction: float, grid,
                              rng: np.random.Generator, folds: int = 3) -> ClassifierReport:
    """Stratified split, CV grid search on train, refit, score train and test; repeated."""
    x = _check_features(features)
    y = _check_labels(labels, len(x)).astype(int)
    if n_repeats < 1:
        raise ValueError("n_repeats must be positive")
    tr_evals, te_evals, chosen = [], [], []
    missing = 0
    for _ in range(n_repeats):
        train, test = stratified_split(y, 1.0 - test_fraction, rng)
        seed = int(rng.integers(2**31 - 1))
        seeded = [replace(c, seed=seed) for c in grid]
        best, _ = cv_grid_search(x[train], y[train], seeded, folds, rng)
        chosen.append(seeded.index(best))
        model = train_mlp(x[train], y[train], best)
        tr_evals.append(evaluate(model, x[train], y[train]))
        te = evaluate(model, x[test], y[test])
        missing += te.auc_missing
        te_evals.append(te)
    return ClassifierReport(_summary(tr_evals), _summary(te_evals), n_repeats, tuple(chosen), missing)
