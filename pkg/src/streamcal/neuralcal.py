"""Small dense post-processors for simulated streamflow.

Two architectures are provided: NN232 (daily flow plus a 12-day centred
average in and out, three hidden nodes) and NN343 (daily flow with 30-day
and 365-day centred averages, four hidden nodes).  The hidden layer is

    h = BN(ELU(W1 x + b1)),    y = W2 ELU(h) + b2

with batch statistics while training and running statistics at inference.
Gradients are derived by hand; training is full-batch Adam for a fixed
number of iterations.
"""

import copy
import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DivergedTraining, ShapeError
from .series import StreamflowSeries

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ITERATIONS = 1000
LEARNING_RATE = 0.01
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

ARCHITECTURES = {
    "232": (2, 3, 2),
    "343": (3, 4, 3),
}
CHANNELS = {
    "232": ("daily", "smoothed_12d"),
    "343": ("daily", "monthly", "annual"),
}
PARAM_NAMES = ("W1", "b1", "gamma", "beta", "W2", "b2")


def elu(z):
    return np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))


def parameter_count(n_in, n_hidden, n_out):
    """Trainable weights, biases and batch-norm scale/shift."""
    return n_in * n_hidden + n_hidden + 2 * n_hidden + n_hidden * n_out + n_out


def phi_n(C, U):
    """Sum of squared differences over all samples and output nodes."""
    C, U = np.asarray(C, dtype=np.float64), np.asarray(U, dtype=np.float64)
    if C.shape != U.shape:
        raise ShapeError(f"target shape {C.shape} differs from output shape {U.shape}")
    d = C - U
    return float(np.sum(d * d))


class MlpNetwork:
    """One-hidden-layer network with batch normalisation after the activation.

    ``x_mean``/``x_std`` and ``y_mean``/``y_std`` standardise inputs and
    outputs per channel; they are fixed from the training set by
    :func:`train` and are not trainable.
    """

    def __init__(self, n_in, n_hidden, n_out, seed=0, arch=None):
        self.sizes = (int(n_in), int(n_hidden), int(n_out))
        self.arch = arch
        self.seed = seed
        self.initialize(seed)
        self.x_mean = np.zeros(n_in)
        self.x_std = np.ones(n_in)
        self.y_mean = np.zeros(n_out)
        self.y_std = np.ones(n_out)
        self.history = []

    def initialize(self, seed):
        n_in, n_hidden, n_out = self.sizes
        rng = np.random.default_rng(seed)
        k1, k2 = 1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_hidden)
        self.W1 = rng.uniform(-k1, k1, (n_hidden, n_in))
        self.b1 = rng.uniform(-k1, k1, n_hidden)
        self.W2 = rng.uniform(-k2, k2, (n_out, n_hidden))
        self.b2 = rng.uniform(-k2, k2, n_out)
        self.gamma = np.ones(n_hidden)
        self.beta = np.zeros(n_hidden)
        self.running_mean = np.zeros(n_hidden)
        self.running_var = np.ones(n_hidden)
        self.seed = seed
        return self

    @property
    def n_params(self):
        return parameter_count(*self.sizes)

    def copy(self):
        return copy.deepcopy(self)

    # -- parameter vector --------------------------------------------------

    def get_params(self):
        return np.concatenate([getattr(self, n).ravel() for n in PARAM_NAMES])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.size}")
        k = 0
        for n in PARAM_NAMES:
            cur = getattr(self, n)
            setattr(self, n, theta[k : k + cur.size].reshape(cur.shape).copy())
            k += cur.size

    # -- forward / backward ------------------------------------------------

    def forward(self, X, mode="infer"):
        """Network-space forward pass on a batch ``X`` of shape (n, n_in)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected {self.sizes[0]} inputs, got {X.shape[1]}")
        z1 = X @ self.W1.T + self.b1
        a = elu(z1)
        if mode == "train":
            mu = a.mean(axis=0)
            var = a.var(axis=0)
        elif mode == "infer":
            mu, var = self.running_mean, self.running_var
        else:
            raise ValueError(f"mode must be 'train' or 'infer', not {mode!r}")
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (a - mu) * inv
        h = self.gamma * xhat + self.beta
        e2 = elu(h)
        y = e2 @ self.W2.T + self.b2
        cache = (X, z1, a, mu, var, inv, xhat, h, e2)
        return y, cache

    def loss_and_grad(self, X, Y):
        """``phi_n`` of a train-mode pass and its gradient as a flat vector."""
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        y, (X, z1, a, mu, var, inv, xhat, h, e2) = self.forward(X, "train")
        loss = phi_n(Y, y)
        n = X.shape[0]
        dy = -2.0 * (Y - y)
        dW2 = dy.T @ e2
        db2 = dy.sum(axis=0)
        dh = (dy @ self.W2) * elu_grad(h)
        dgamma = (dh * xhat).sum(axis=0)
        dbeta = dh.sum(axis=0)
        dxhat = dh * self.gamma
        da = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        dz1 = da * elu_grad(z1)
        dW1 = dz1.T @ X
        db1 = dz1.sum(axis=0)
        grad = np.concatenate([g.ravel() for g in (dW1, db1, dgamma, dbeta, dW2, db2)])
        return loss, grad, (mu, var)

    def update_running(self, mu, var, n):
        unbiased = var * n / (n - 1) if n > 1 else var
        self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mu
        self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * unbiased

    def predict(self, X):
        """Physical-units inference on raw (unstandardised) inputs."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y, _ = self.forward((X - self.x_mean) / self.x_std, "infer")
        return y * self.y_std + self.y_mean

    # -- persistence -------------------------------------------------------

    def to_json(self):
        return {
            "arch": self.arch,
            "sizes": list(self.sizes),
            "seed": self.seed,
            "bn_eps": BN_EPS,
            "bn_momentum": BN_MOMENTUM,
            "params": {n: getattr(self, n).tolist() for n in PARAM_NAMES},
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
            "history": list(self.history),
        }

    @classmethod
    def from_json(cls, doc):
        net = cls(*doc["sizes"], seed=doc.get("seed", 0), arch=doc.get("arch"))
        for n in PARAM_NAMES:
            setattr(net, n, np.array(doc["params"][n], dtype=np.float64).reshape(getattr(net, n).shape))
        for n in ("running_mean", "running_var", "x_mean", "x_std", "y_mean", "y_std"):
            setattr(net, n, np.array(doc[n], dtype=np.float64))
        net.history = list(doc.get("history", []))
        return net

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build(arch, seed=0):
    """NN232 or NN343 by name ("232"/"343", optionally prefixed "NN")."""
    key = str(arch).upper().removeprefix("NN")
    if key not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}")
    return MlpNetwork(*ARCHITECTURES[key], seed=seed, arch=key)


# -- multi-scale inputs ------------------------------------------------------


def _check_daily(series):
    if series.dates.size > 1 and np.any(np.diff(series.dates).astype(np.int64) != 1):
        raise ValueError(f"{series.station}: series must be on a gap-free daily axis")


def centered_mean(series, before, after):
    """Mean of valid values over days t-before .. t+after, truncated at the ends."""
    _check_daily(series)
    v = np.where(series.mask, series.values, 0.0)
    m = series.mask.astype(np.float64)
    cv = np.concatenate([[0.0], np.cumsum(v)])
    cm = np.concatenate([[0.0], np.cumsum(m)])
    n = v.size
    idx = np.arange(n)
    lo = np.maximum(idx - before, 0)
    hi = np.minimum(idx + after + 1, n)
    total, count = cv[hi] - cv[lo], cm[hi] - cm[lo]
    ok = count > 0
    out = np.where(ok, total / np.where(ok, count, 1.0), np.nan)
    return StreamflowSeries(series.station, series.dates.copy(), out, ok)


def centered_average_12(series):
    """Mean of valid values over days t-6 .. t+5."""
    return centered_mean(series, 6, 5)


# running windows behind the NN343 monthly and annual channels
MONTH_WINDOW = (15, 14)
YEAR_WINDOW = (182, 182)


def _period_keys(dates, period):
    months = dates.astype("datetime64[M]").astype(np.int64)
    if period == "month":
        return months
    if period == "year":
        return dates.astype("datetime64[Y]").astype(np.int64)
    raise ValueError(f"period must be 'month' or 'year', not {period!r}")


def expand_period_mean(series, period):
    """Each day carries the mean of the valid days in its calendar month or year."""
    keys = _period_keys(series.dates, period)
    uniq, inv = np.unique(keys, return_inverse=True)
    v = np.where(series.mask, series.values, 0.0)
    total = np.bincount(inv, weights=v, minlength=uniq.size)
    count = np.bincount(inv, weights=series.mask.astype(np.float64), minlength=uniq.size)
    ok = count > 0
    mean = np.where(ok, total / np.where(ok, count, 1.0), np.nan)
    return StreamflowSeries(series.station, series.dates.copy(), mean[inv], ok[inv])


@dataclass
class MultiScaleSeries:
    daily: StreamflowSeries
    smoothed_12d: StreamflowSeries
    monthly: StreamflowSeries
    annual: StreamflowSeries

    @classmethod
    def from_daily(cls, daily):
        return cls(
            daily,
            centered_average_12(daily),
            centered_mean(daily, *MONTH_WINDOW),
            centered_mean(daily, *YEAR_WINDOW),
        )

    @property
    def dates(self):
        return self.daily.dates

    def matrix(self, arch):
        """Channel matrix (days, width) and the rows where every channel is valid."""
        chans = [getattr(self, c) for c in CHANNELS[_arch_key(arch)]]
        X = np.column_stack([c.values for c in chans])
        ok = np.logical_and.reduce([c.mask for c in chans])
        return X, ok


def _arch_key(arch):
    if isinstance(arch, MlpNetwork):
        arch = arch.arch
    return str(arch).upper().removeprefix("NN")


# -- rank matching -----------------------------------------------------------


def rank_match(model, obs):
    """Pair the k-th ranked model day with the k-th ranked observation.

    Accepts StreamflowSeries (masked days are skipped and stay masked in the
    result) or plain arrays.  Ties keep time order.
    """
    if isinstance(model, StreamflowSeries):
        o = obs.values[obs.mask] if isinstance(obs, StreamflowSeries) else np.asarray(obs, dtype=np.float64)
        target = np.full(model.values.shape, np.nan)
        target[model.mask] = _rank_pairs(model.values[model.mask], o)
        return StreamflowSeries(model.station, model.dates.copy(), target, model.mask.copy())
    return _rank_pairs(np.asarray(model, dtype=np.float64), np.asarray(obs, dtype=np.float64))


def _rank_pairs(m, o):
    if m.size != o.size:
        raise ShapeError(f"model has {m.size} valid days, observations have {o.size}")
    out = np.empty_like(o, dtype=np.float64)
    out[np.argsort(m, kind="stable")] = np.sort(o, kind="stable")
    return out


# -- training ----------------------------------------------------------------


def year_parity_mask(dates, parity):
    """True for days in even ("even") or odd ("odd") calendar years."""
    years = np.asarray(dates, dtype="datetime64[D]").astype("datetime64[Y]").astype(np.int64) + 1970
    if parity == "even":
        return years % 2 == 0
    if parity == "odd":
        return years % 2 == 1
    raise ValueError(f"parity must be 'even' or 'odd', not {parity!r}")


def _standardize(a):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def train(net, inputs, targets, iters=ITERATIONS, seed=None, lr=LEARNING_RATE, rows=None):
    """Fit ``net`` to ``targets`` with full-batch Adam; returns a new network.

    ``rows`` optionally restricts training to a boolean day mask (e.g. even
    years).  With ``seed`` the weights are re-initialised first.  The loss
    of every iteration (before its update) plus the final loss is kept in
    ``history``.
    """
    net = net.copy()
    if seed is not None:
        net.initialize(seed)
    X, okx = inputs.matrix(net)
    Y, oky = targets.matrix(net)
    if X.shape[0] != Y.shape[0] or not np.array_equal(inputs.dates, targets.dates):
        raise ShapeError("inputs and targets must share the daily date axis")
    use = okx & oky
    if rows is not None:
        use &= np.asarray(rows, dtype=bool)
    X, Y = X[use], Y[use]
    if X.shape[0] < 2:
        raise ShapeError("need at least two valid training days")
    net.x_mean, net.x_std = _standardize(X)
    net.y_mean, net.y_std = _standardize(Y)
    Xs = (X - net.x_mean) / net.x_std
    Ys = (Y - net.y_mean) / net.y_std

    theta = net.get_params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = ADAM_BETAS
    history = []
    for it in range(iters + 1):
        net.set_params(theta)
        with np.errstate(over="ignore", invalid="ignore"):
            # a blow-up is reported as DivergedTraining just below
            loss, grad, (mu, var) = net.loss_and_grad(Xs, Ys)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergedTraining(it)
        history.append(loss)
        net.update_running(mu, var, Xs.shape[0])
        if it == iters:
            break
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1 ** (it + 1))
        vhat = v / (1 - b2 ** (it + 1))
        theta = theta - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
    net.history = history
    log.debug("trained NN%s: loss %.4g -> %.4g", net.arch, history[0], history[-1])
    return net


def apply(net, inputs):
    """Daily output node of ``net`` over every valid input day, clamped at zero."""
    X, ok = inputs.matrix(net)
    out = np.full(X.shape[0], np.nan)
    if ok.any():
        out[ok] = np.maximum(net.predict(X[ok])[:, 0], 0.0)
    daily = inputs.daily
    return StreamflowSeries(daily.station, daily.dates.copy(), out, ok.copy())


def write_report(net, path, split=None):
    """Loss curve as CSV with the split definition in a comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# arch=NN{net.arch} seed={net.seed} split={split or 'all'}\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, loss in enumerate(net.history):
            w.writerow([i, repr(float(loss))])


def postprocess(arch, model, obs, train_rows=None, rank=False, iters=ITERATIONS, seed=0):
    """Train a network mapping ``model`` flows towards ``obs`` and apply it.

    With ``rank`` the daily targets are rank-matched to the model over the
    training days first (for forcing that is not synchronised with the
    observations).  Returns ``(network, corrected daily series)``.
    """
    if not np.array_equal(model.dates, obs.dates):
        raise ShapeError("model and observation series must share dates")
    rows = np.ones(len(model), dtype=bool) if train_rows is None else np.asarray(train_rows, dtype=bool)
    both = rows & model.mask & obs.mask
    target = obs.select(np.ones(len(obs), dtype=bool))
    if rank:
        matched = np.full(len(obs), np.nan)
        matched[both] = rank_match(model.values[both], obs.values[both])
        target = StreamflowSeries(obs.station, obs.dates.copy(), matched, both.copy())
        rows = both
    inputs = MultiScaleSeries.from_daily(model)
    targets = MultiScaleSeries.from_daily(target)
    net = train(build(arch), inputs, targets, iters=iters, seed=seed, rows=rows)
    return net, apply(net, inputs)
