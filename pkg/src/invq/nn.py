"""Small fully-connected networks in numpy, double precision.

Hidden layers use rectifiers, the output layer is linear. Gradients are
hand-written reverse mode for this fixed topology; ``gradient_check``
verifies them against central differences.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1


@dataclass
class MlpParams:
    weights: list  # weights[i] has shape (fan_in, fan_out)
    biases: list

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def assign_flat(self, vec) -> None:
        i = 0
        for a in self.arrays():
            a[...] = vec[i:i + a.size].reshape(a.shape)
            i += a.size


def init_mlp(sizes, seed, scale: float = 1.0) -> MlpParams:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = scale / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def _as_batch(p: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != p.weights[0].shape[0]:
        raise ValueError(f"input shape {x.shape} does not match first layer "
                         f"({p.weights[0].shape[0]} inputs)")
    return x2, single


def forward(p: MlpParams, x) -> np.ndarray:
    x2, single = _as_batch(p, x)
    h = x2
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def forward_cache(p: MlpParams, x):
    """Forward pass keeping each layer's input and pre-activation."""
    x2, _ = _as_batch(p, x)
    inputs, pre = [], []
    h = x2
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h, (inputs, pre)


def backward(p: MlpParams, x, grad_out, cache=None) -> MlpParams:
    """Parameter gradients given dLoss/dOutput (same batch layout as ``forward``)."""
    if cache is None:
        _, cache = forward_cache(p, x)
    inputs, pre = cache
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != pre[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} does not match {pre[-1].shape}")
    gw = [None] * len(p.weights)
    gb = [None] * len(p.weights)
    for i in range(len(p.weights) - 1, -1, -1):
        if i < len(p.weights) - 1:
            g = g * (pre[i] > 0.0)
        gw[i] = inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = g @ p.weights[i].T
    return MlpParams(gw, gb)


def activation_pattern(p: MlpParams, x) -> list:
    _, (_, pre) = forward_cache(p, x)
    return [z > 0.0 for z in pre[:-1]]


# losses return (value, dLoss/dOutput)

def mse_on_actions(out, actions, targets):
    """Mean squared error of ``out[i, actions[i]]`` against ``targets[i]``."""
    m = out.shape[0]
    idx = np.arange(m)
    diff = out[idx, actions] - targets
    grad = np.zeros_like(out)
    grad[idx, actions] = 2.0 * diff / m
    return float(np.mean(diff ** 2)), grad


def mse(pred, target):
    pred = np.atleast_2d(pred)
    diff = pred - target
    m = pred.shape[0]
    return float(np.sum(diff ** 2) / m), 2.0 * diff / m


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def cross_entropy(logits, actions):
    """Mean softmax cross-entropy of integer ``actions`` under ``logits``."""
    m = logits.shape[0]
    logp = log_softmax(logits)
    idx = np.arange(m)
    grad = np.exp(logp)
    grad[idx, actions] -= 1.0
    return float(-logp[idx, actions].mean()), grad / m


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p: MlpParams, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in p.arrays()],
                   [np.zeros_like(a) for a in p.arrays()], **kw)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step,
                         self.beta1, self.beta2, self.eps)


def adam_step(p: MlpParams, grads: MlpParams, st: AdamState, lr: float, inplace: bool = False):
    """Bias-corrected Adam. Returns ``(params, state)``; copies unless ``inplace``."""
    if not inplace:
        p, st = p.copy(), st.copy()
    st.step += 1
    b1, b2 = st.beta1, st.beta2
    c1 = 1.0 - b1 ** st.step
    c2 = 1.0 - b2 ** st.step
    for a, g, m, v in zip(p.arrays(), grads.arrays(), st.m, st.v):
        if a.shape != g.shape:
            raise ValueError("gradient shapes do not match parameters")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        a -= lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
    return p, st


def polyak_update(target: MlpParams, online: MlpParams, tau: float,
                  inplace: bool = False) -> MlpParams:
    """target <- (1 - tau) * target + tau * online."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    out = target if inplace else target.copy()
    for t, o in zip(out.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o
    return out


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_excluded: int = 0
    errors: np.ndarray = field(default_factory=lambda: np.empty(0))


def gradient_check(p: MlpParams, loss, step: float = 1e-5, n_coords: int = 200, seed: int = 0,
                   pattern=None, abs_floor: float = 1e-6) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    ``loss(params)`` returns ``(value, grads)`` where ``grads`` is shaped like
    ``params``. Coordinates are subsampled (at least ``n_coords`` or all of
    them). When ``pattern(params)`` is given (e.g. rectifier on/off masks),
    coordinates whose perturbation changes the pattern straddle a kink and
    are excluded. Relative error uses ``max(|analytic|, |numeric|, abs_floor)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    work = p.copy()
    theta = work.flat()
    _, grads = loss(work)
    analytic = grads.flat()
    rng = np.random.default_rng(seed)
    k = min(max(n_coords, 200), theta.size)
    coords = np.sort(rng.choice(theta.size, size=k, replace=False))
    base_pattern = pattern(work) if pattern is not None else None
    errors, excluded = [], 0
    for j in coords:
        vals = []
        kink = False
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[j] += sign * step
            work.assign_flat(shifted)
            if base_pattern is not None and not all(
                np.array_equal(a, b) for a, b in zip(base_pattern, pattern(work))
            ):
                kink = True
            vals.append(loss(work)[0])
        if kink:
            excluded += 1
            continue
        numeric = (vals[0] - vals[1]) / (2.0 * step)
        denom = max(abs(analytic[j]), abs(numeric), abs_floor)
        errors.append(abs(analytic[j] - numeric) / denom)
    work.assign_flat(theta)
    errors = np.asarray(errors)
    return GradCheckResult(float(errors.max(initial=0.0)), len(errors), excluded, errors)


def params_to_dict(p: MlpParams) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "sizes": p.sizes,
        "layers": [{"weight": w.tolist(), "bias": b.tolist()}
                   for w, b in zip(p.weights, p.biases)],
    }


def params_from_dict(d: dict) -> MlpParams:
    if d.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported parameter schema {d.get('schema')!r}")
    weights = [np.asarray(layer["weight"], dtype=np.float64) for layer in d["layers"]]
    biases = [np.asarray(layer["bias"], dtype=np.float64) for layer in d["layers"]]
    return MlpParams(weights, biases)


def save_params(p: MlpParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(p), fh)


def load_params(path) -> MlpParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
