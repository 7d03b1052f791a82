"""Quantile forecaster for the key parameters (H, D) of the area model.

A two-layer LSTM digests a window of normal-operation features (load,
renewable generation, frequency deviation, online-TG inertia); a single
linear head maps the final hidden state to 100 quantiles per parameter at
cumulative probabilities 0.5%, 1.5%, ..., 99.5%. Training minimizes the
summed pinball loss with plain mini-batch gradient descent and
backpropagation through time, all in numpy so gradients can be audited
against finite differences.

``QuantileNetEstimator`` wraps the functional pieces in the usual
fit/predict estimator API so the forecaster composes with sklearn-style
tooling (parameter grids, cloning, pipelines).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .seeding import subseed
from .validation import check_windows, check_targets

__all__ = ["QUANTILE_PROBS", "pinball", "total_loss", "EstimatorNet",
           "QuantileForecast", "forward", "CalibrationReport", "calibrate",
           "eta_from_deviations", "QuantileNetEstimator", "save_net",
           "load_net", "TrainingDiverged"]

QUANTILE_PROBS = (np.arange(100) + 0.5) / 100.0


class TrainingDiverged(RuntimeError):
    pass


def pinball(q: float, actual: float, predicted: float) -> float:
    """Pinball loss of the q-quantile: q*(x*-x) above, (1-q)*(x-x*) below."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile probability must lie in (0, 1), got {q}")
    r = actual - predicted
    return q * r if r >= 0 else (1.0 - q) * (-r)


def total_loss(outputs, actual) -> float:
    """Summed pinball loss over the 100 quantiles of both parameters.

    `outputs` is shaped (2, 100): row 0 the H quantiles, row 1 the D
    quantiles, in natural units; `actual` is the pair (H*, D*).
    """
    outputs = np.asarray(outputs, dtype=float)
    if outputs.shape != (2, 100):
        raise ValueError(f"outputs must be shaped (2, 100), got {outputs.shape}")
    h_star, d_star = actual
    total = 0.0
    for j, q in enumerate(QUANTILE_PROBS):
        total += pinball(q, h_star, outputs[0, j])
        total += pinball(q, d_star, outputs[1, j])
    return total


# ---------------------------------------------------------------------------
# network definition

@dataclass(frozen=True)
class EstimatorNet:
    """Weights and normalization statistics of the quantile network.

    Each recurrent layer holds (W, R, b) with gate order (input, forget,
    candidate, output); `Wo`/`bo` form the linear head with 200 outputs.
    """
    layers: tuple                    # ((W, R, b), (W, R, b))
    Wo: np.ndarray                   # [200, U2]
    bo: np.ndarray                   # [200]
    feat_mean: np.ndarray            # [4]
    feat_std: np.ndarray             # [4]
    tgt_mean: np.ndarray             # [2]
    tgt_std: np.ndarray              # [2]
    t_in: int
    version: str = "1"

    @property
    def hidden_sizes(self):
        return tuple(layer[1].shape[1] for layer in self.layers)


@dataclass(frozen=True)
class QuantileForecast:
    probs: np.ndarray                # the 100 cumulative probabilities
    H_quantiles: np.ndarray          # seconds, nondecreasing, positive
    D_quantiles: np.ndarray          # p.u., nondecreasing

    def __post_init__(self):
        if np.any(np.diff(self.H_quantiles) < 0) or np.any(np.diff(self.D_quantiles) < 0):
            raise ValueError("forecast quantiles must be nondecreasing")
        if np.any(self.H_quantiles <= 0):
            raise ValueError("H quantiles must be strictly positive")


def _init_net(seed, t_in, input_dim=4, hidden=(32, 32), out_dim=200):
    rng = np.random.default_rng(seed)
    layers = []
    dim = input_dim
    for u in hidden:
        bound_w = 1.0 / np.sqrt(dim)
        bound_r = 1.0 / np.sqrt(u)
        W = rng.uniform(-bound_w, bound_w, size=(4 * u, dim))
        R = rng.uniform(-bound_r, bound_r, size=(4 * u, u))
        b = np.zeros(4 * u)
        b[u:2 * u] = 1.0              # forget-gate bias
        layers.append((W, R, b))
        dim = u
    bound = 1.0 / np.sqrt(dim)
    Wo = rng.uniform(-bound, bound, size=(out_dim, dim))
    bo = np.zeros(out_dim)
    return tuple(layers), Wo, bo


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _lstm_layer_forward(layer, X):
    """X: [B, T, dim] -> hidden sequence [B, T, U] plus caches for backward."""
    W, R, b = layer
    B, T, _ = X.shape
    U = R.shape[1]
    h = np.zeros((B, U))
    c = np.zeros((B, U))
    hs = np.empty((B, T, U))
    caches = []
    for t in range(T):
        z = X[:, t] @ W.T + h @ R.T + b
        i = _sigmoid(z[:, :U])
        f = _sigmoid(z[:, U:2 * U])
        g = np.tanh(z[:, 2 * U:3 * U])
        o = _sigmoid(z[:, 3 * U:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        caches.append((X[:, t], h, c, i, f, g, o, tc))
        h, c = h_new, c_new
        hs[:, t] = h
    return hs, caches


def _lstm_layer_backward(layer, caches, dhs):
    """dhs: [B, T, U] gradients on the hidden sequence; returns (grads, dX)."""
    W, R, b = layer
    B, T, U = dhs.shape
    dW = np.zeros_like(W)
    dR = np.zeros_like(R)
    db = np.zeros_like(b)
    dX = np.empty((B, T, W.shape[1]))
    dh_next = np.zeros((B, U))
    dc_next = np.zeros((B, U))
    for t in range(T - 1, -1, -1):
        x_t, h_prev, c_prev, i, f, g, o, tc = caches[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                             dg * (1 - g * g), do * o * (1 - o)], axis=1)
        dW += dz.T @ x_t
        dR += dz.T @ h_prev
        db += dz.sum(axis=0)
        dX[:, t] = dz @ W
        dh_next = dz @ R
    return (dW, dR, db), dX


def _net_forward(net: EstimatorNet, Xn):
    """Normalized windows [B, T, 4] -> raw head outputs [B, 200] + caches."""
    seq = Xn
    caches = []
    for layer in net.layers:
        seq, cache = _lstm_layer_forward(layer, seq)
        caches.append(cache)
    h_last = seq[:, -1]
    raw = h_last @ net.Wo.T + net.bo
    return raw, (caches, h_last)


def _net_backward(net: EstimatorNet, Xn, cache, draw):
    caches, h_last = cache
    dWo = draw.T @ h_last
    dbo = draw.sum(axis=0)
    B, T, _ = Xn.shape
    dhs = np.zeros((B, T, net.layers[-1][1].shape[1]))
    dhs[:, -1] = draw @ net.Wo
    grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        grads[li], dX = _lstm_layer_backward(net.layers[li], caches[li], dhs)
        if li > 0:
            dhs = dX
    return grads, dWo, dbo


def _pinball_batch(raw, targets_norm):
    """Mean-over-batch summed pinball loss on normalized targets; also the
    gradient with respect to the raw outputs."""
    B = raw.shape[0]
    q = QUANTILE_PROBS
    pred_h, pred_d = raw[:, :100], raw[:, 100:]
    res_h = targets_norm[:, :1] - pred_h
    res_d = targets_norm[:, 1:2] - pred_d
    loss = (np.where(res_h >= 0, q * res_h, (q - 1.0) * res_h).sum()
            + np.where(res_d >= 0, q * res_d, (q - 1.0) * res_d).sum()) / B
    dh = np.where(res_h >= 0, -q, 1.0 - q) / B
    dd = np.where(res_d >= 0, -q, 1.0 - q) / B
    return loss, np.concatenate([dh, dd], axis=1)


def _normalize(X, mean, std):
    return (X - mean) / std


def forward(net: EstimatorNet, window) -> QuantileForecast:
    """Quantile forecast for one raw feature window [T_IN, 4].

    The window is normalized with the stored statistics, run through the
    recurrent trunk and the linear head, denormalized, and the raw
    quantiles are rearranged (sorted) so each forecast is nondecreasing.
    """
    window = np.asarray(window, dtype=float)
    if window.shape != (net.t_in, 4):
        raise ValueError(f"window must be shaped ({net.t_in}, 4), got {window.shape}")
    Xn = _normalize(window[None], net.feat_mean, net.feat_std)
    raw, _ = _net_forward(net, Xn)
    return _forecast_from_raw(net, raw[0])


def _forecast_from_raw(net, raw_row):
    h_q = np.sort(raw_row[:100] * net.tgt_std[0] + net.tgt_mean[0])
    d_q = np.sort(raw_row[100:] * net.tgt_std[1] + net.tgt_mean[1])
    return QuantileForecast(probs=QUANTILE_PROBS.copy(),
                            H_quantiles=np.maximum(h_q, 1e-9),
                            D_quantiles=d_q)


# ---------------------------------------------------------------------------
# calibration

@dataclass(frozen=True)
class CalibrationReport:
    probs: np.ndarray
    actual_H: np.ndarray             # empirical cumulative probabilities
    actual_D: np.ndarray
    eta_max_H: float
    eta_min_H: float
    eta_max_D: float
    eta_min_D: float

    @property
    def deviations_H(self):
        return self.probs - self.actual_H

    @property
    def deviations_D(self):
        return self.probs - self.actual_D

    @property
    def eta_max(self):
        return max(self.eta_max_H, self.eta_max_D)

    @property
    def eta_min(self):
        return min(self.eta_min_H, self.eta_min_D)


def eta_from_deviations(deviations):
    """Weight-deviation bounds from target-minus-actual probabilities; both
    include zero so the empirical weights always stay inside the band."""
    deviations = np.asarray(deviations, dtype=float)
    return float(max(deviations.max(), 0.0)), float(min(deviations.min(), 0.0))


def calibrate(net: EstimatorNet, windows, targets) -> CalibrationReport:
    """Empirical cumulative probabilities of the predicted quantiles on a
    held-out set, and the eta bounds derived from their deviations."""
    windows = check_windows(windows, net.t_in)
    targets = check_targets(targets, len(windows))
    if len(windows) == 0:
        raise ValueError("calibration needs a nonempty validation set")
    Xn = _normalize(windows, net.feat_mean, net.feat_std)
    raw, _ = _net_forward(net, Xn)
    # measure the delivered forecasts (sorted and floored), not the raw head
    fcs = [_forecast_from_raw(net, row) for row in raw]
    h_q = np.vstack([f.H_quantiles for f in fcs])
    d_q = np.vstack([f.D_quantiles for f in fcs])
    actual_h = (targets[:, :1] <= h_q).mean(axis=0)
    actual_d = (targets[:, 1:2] <= d_q).mean(axis=0)
    emax_h, emin_h = eta_from_deviations(QUANTILE_PROBS - actual_h)
    emax_d, emin_d = eta_from_deviations(QUANTILE_PROBS - actual_d)
    return CalibrationReport(probs=QUANTILE_PROBS.copy(), actual_H=actual_h,
                             actual_D=actual_d, eta_max_H=emax_h,
                             eta_min_H=emin_h, eta_max_D=emax_d,
                             eta_min_D=emin_d)


# ---------------------------------------------------------------------------
# estimator API

class QuantileNetEstimator(BaseEstimator):
    """Two-layer recurrent quantile regressor with a fit/predict surface.

    Parameters mirror the training knobs: hidden sizes, window length,
    learning rate, epochs, batch size, gradient clip, optional momentum and
    the validation fraction used for weight selection.
    """

    def __init__(self, hidden1=32, hidden2=32, t_in=30, lr=0.05, epochs=200,
                 batch_size=32, clip=5.0, momentum=0.0, val_fraction=0.25,
                 seed=0, log_every=0):
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.t_in = t_in
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip = clip
        self.momentum = momentum
        self.val_fraction = val_fraction
        self.seed = seed
        self.log_every = log_every

    # -- sklearn-style surface ------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on windows X [N, T_IN, 4] and targets y [N, 2].

        When no explicit validation split is passed, the trailing
        `val_fraction` of the samples is held out. The weights kept are the
        ones with the best validation loss. Returns self.
        """
        X = check_windows(X, self.t_in)
        y = check_targets(y, len(X))
        if X_val is None:
            n_val = max(int(round(len(X) * self.val_fraction)), 1)
            if len(X) <= n_val:
                raise ValueError("not enough samples to hold out validation data")
            X, X_val = X[:-n_val], X[-n_val:]
            y, y_val = y[:-n_val], y[-n_val:]
        else:
            X_val = check_windows(X_val, self.t_in)
            y_val = check_targets(y_val, len(X_val))

        feat_mean = X.reshape(-1, 4).mean(axis=0)
        feat_std = X.reshape(-1, 4).std(axis=0)
        feat_std = np.where(feat_std < 1e-12, 1.0, feat_std)
        tgt_mean = y.mean(axis=0)
        tgt_std = y.std(axis=0)
        tgt_std = np.where(tgt_std < 1e-12, 1.0, tgt_std)

        layers, Wo, bo = _init_net(subseed(self.seed, "init"), self.t_in,
                                   hidden=(self.hidden1, self.hidden2))
        net = EstimatorNet(layers=layers, Wo=Wo, bo=bo, feat_mean=feat_mean,
                           feat_std=feat_std, tgt_mean=tgt_mean,
                           tgt_std=tgt_std, t_in=self.t_in)

        Xn = _normalize(X, feat_mean, feat_std)
        yn = (y - tgt_mean) / tgt_std
        Xv = _normalize(X_val, feat_mean, feat_std)
        yv = (y_val - tgt_mean) / tgt_std

        rng = np.random.default_rng(subseed(self.seed, "batches"))
        velocity = None
        best_val = np.inf
        best_params = _get_params(net)
        history = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(Xn))
            ep_loss = 0.0
            nb = 0
            for s in range(0, len(order), self.batch_size):
                idx = order[s:s + self.batch_size]
                raw, cache = _net_forward(net, Xn[idx])
                loss, draw = _pinball_batch(raw, yn[idx])
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"loss became non-finite at epoch {epoch}, batch {nb}")
                grads, dWo, dbo = _net_backward(net, Xn[idx], cache, draw)
                flat = _flatten(grads, dWo, dbo)
                gnorm = np.sqrt(sum(float((a * a).sum()) for a in flat))
                scale = min(1.0, self.clip / gnorm) if gnorm > 0 else 1.0
                step = [a * (self.lr * scale) for a in flat]
                if self.momentum > 0:
                    velocity = (step if velocity is None
                                else [self.momentum * v + s for v, s in zip(velocity, step)])
                    step = velocity
                net = _apply_step(net, step)
                ep_loss += loss
                nb += 1
            vraw, _ = _net_forward(net, Xv)
            vloss, _ = _pinball_batch(vraw, yv)
            history.append((epoch, ep_loss / max(nb, 1), vloss))
            if vloss < best_val:
                best_val = vloss
                best_params = _get_params(net)
            if self.log_every and epoch % self.log_every == 0:
                print(f"epoch {epoch}: train {ep_loss / max(nb, 1):.5f} val {vloss:.5f}")

        self.net_ = _set_params(net, best_params)
        self.history_ = tuple(history)
        self.best_val_loss_ = float(best_val)
        return self

    def predict(self, X):
        """Quantile forecasts for windows X [N, T_IN, 4]; returns a list of
        QuantileForecast."""
        net = self._require_net()
        X = check_windows(X, net.t_in)
        Xn = _normalize(X, net.feat_mean, net.feat_std)
        raw, _ = _net_forward(net, Xn)
        return [_forecast_from_raw(net, row) for row in raw]

    def score(self, X, y):
        """Negative mean total pinball loss (natural units), sklearn-style
        larger-is-better."""
        forecasts = self.predict(X)
        y = check_targets(y, len(forecasts))
        losses = [total_loss(np.vstack([f.H_quantiles, f.D_quantiles]), tuple(t))
                  for f, t in zip(forecasts, y)]
        return -float(np.mean(losses))

    def _require_net(self) -> EstimatorNet:
        if not hasattr(self, "net_"):
            raise NotFittedError("QuantileNetEstimator is not fitted yet")
        return self.net_


# parameter flattening helpers (fixed order: layers, then head)

def _get_params(net):
    out = []
    for W, R, b in net.layers:
        out += [W.copy(), R.copy(), b.copy()]
    out += [net.Wo.copy(), net.bo.copy()]
    return out


def _set_params(net, params):
    k = 0
    layers = []
    for _ in net.layers:
        layers.append((params[k], params[k + 1], params[k + 2]))
        k += 3
    return replace(net, layers=tuple(layers), Wo=params[k], bo=params[k + 1])


def _flatten(grads, dWo, dbo):
    arrs = []
    for g in grads:
        arrs += list(g)
    arrs += [dWo, dbo]
    return arrs


def _apply_step(net, step):
    params = _get_params(net)
    new = [p - s for p, s in zip(params, step)]
    return _set_params(net, new)


# ---------------------------------------------------------------------------
# model file

def save_net(net: EstimatorNet, path, meta=None):
    doc = {
        "format_version": net.version,
        "t_in": net.t_in,
        "hidden_sizes": list(net.hidden_sizes),
        "feat_mean": net.feat_mean.tolist(),
        "feat_std": net.feat_std.tolist(),
        "tgt_mean": net.tgt_mean.tolist(),
        "tgt_std": net.tgt_std.tolist(),
        "layers": [{"W": W.tolist(), "R": R.tolist(), "b": b.tolist()}
                   for W, R, b in net.layers],
        "Wo": net.Wo.tolist(),
        "bo": net.bo.tolist(),
    }
    if meta:
        doc["meta"] = meta
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_net(path) -> EstimatorNet:
    with open(path) as fh:
        doc = json.load(fh)
    layers = tuple((np.asarray(l["W"]), np.asarray(l["R"]), np.asarray(l["b"]))
                   for l in doc["layers"])
    return EstimatorNet(
        layers=layers, Wo=np.asarray(doc["Wo"]), bo=np.asarray(doc["bo"]),
        feat_mean=np.asarray(doc["feat_mean"]), feat_std=np.asarray(doc["feat_std"]),
        tgt_mean=np.asarray(doc["tgt_mean"]), tgt_std=np.asarray(doc["tgt_std"]),
        t_in=int(doc["t_in"]), version=str(doc["format_version"]),
    )
