"""Fixed-batch Deep Inverse Q-learning and its constrained variant.

Networks for the reward, Q, shifted Q and (optionally) constrained Q each
carry an online copy, a Polyak-averaged target copy and Adam state. The
classifier ``rho`` estimates the expert's action distribution from the
buffer; with ``use_true_distribution`` it is bypassed and the probabilities
stored in the buffer are used instead.

Every regression target is read from target networks only. The single
exception, as in the algorithm, is the action distribution, which comes
from the freshly updated online classifier.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .constraints import ConstraintSet, check_feasible

NET_NAMES = ("r", "q", "sh", "rho", "c")
LOG_FIELDS = ("iteration", "loss_r", "loss_q", "loss_sh", "loss_rho", "loss_c")


@dataclass
class ReplayBuffer:
    """Fixed transition store. ``probs`` (optional) holds the expert's action
    distribution at each transition's state; ``next_states`` (optional) holds
    state ids used to look up safe sets."""

    features: np.ndarray
    actions: np.ndarray
    next_features: np.ndarray
    done: np.ndarray
    probs: np.ndarray | None = None
    states: np.ndarray | None = None
    next_states: np.ndarray | None = None
    capacity: int | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.next_features = np.atleast_2d(np.asarray(self.next_features, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        self.done = np.asarray(self.done, dtype=bool).reshape(-1)
        m = len(self.actions)
        if not (len(self.features) == len(self.next_features) == len(self.done) == m):
            raise ValueError("buffer columns have different lengths")
        if self.capacity is not None and m > self.capacity:
            raise ValueError(f"{m} transitions exceed capacity {self.capacity}")

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions, feature_matrix, terminal=None, policy=None,
                         capacity=None) -> "ReplayBuffer":
        tr = np.asarray(transitions, dtype=np.int64).reshape(-1, 3)
        fm = np.asarray(feature_matrix, dtype=np.float64)
        done = np.zeros(len(tr), dtype=bool) if terminal is None \
            else np.asarray(terminal, dtype=bool)[tr[:, 0]]
        probs = None if policy is None else np.asarray(policy, dtype=np.float64)[tr[:, 0]]
        return cls(fm[tr[:, 0]], tr[:, 1], fm[tr[:, 2]], done, probs=probs,
                   states=tr[:, 0].copy(), next_states=tr[:, 2].copy(), capacity=capacity)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, len(self), size=m)


def exhaustive_transitions(mdp, copies: int, seed: int) -> np.ndarray:
    """Every (s, a) pair ``copies`` times with successors drawn from the model."""
    rng = np.random.default_rng(seed)
    S, A = mdp.n_states, mdp.n_actions
    s = np.repeat(np.arange(S), A * copies)
    a = np.tile(np.repeat(np.arange(A), copies), S)
    cdf = np.cumsum(mdp.transitions[s, a], axis=1)
    sn = np.minimum((rng.random(len(s))[:, None] >= cdf).sum(axis=1), S - 1)
    return np.stack([s, a, sn], axis=1)


@dataclass
class MlpBundle:
    params: nn.MlpParams
    adam: nn.AdamState
    target: nn.MlpParams

    @classmethod
    def create(cls, sizes, seed) -> "MlpBundle":
        p = nn.init_mlp(sizes, seed)
        return cls(p, nn.AdamState.for_params(p), p.copy())

    def copy(self) -> "MlpBundle":
        return MlpBundle(self.params.copy(), self.adam.copy(), self.target.copy())


@dataclass
class DiqlConfig:
    batch_size: int = 32
    lr: float = 1e-4
    lr_rho: float | None = None
    tau: float = 1e-4
    gamma: float = 0.9
    eps_clip: float = 1e-6
    iterations: int = 1000
    hidden: tuple = (64, 64)
    use_true_distribution: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 < self.eps_clip < 1.0:
            raise ValueError("eps_clip must lie in (0, 1)")
        self.hidden = tuple(self.hidden)

    def to_dict(self):
        return asdict(self)


@dataclass
class DiqlNets:
    nets: dict = field(default_factory=dict)

    def __getitem__(self, name) -> MlpBundle:
        return self.nets[name]

    def __contains__(self, name):
        return name in self.nets

    @property
    def constrained(self) -> bool:
        return "c" in self.nets

    def copy(self) -> "DiqlNets":
        return DiqlNets({k: v.copy() for k, v in self.nets.items()})

    def q_values(self, features, name="q") -> np.ndarray:
        return nn.forward(self.nets[name].params, features)

    def reward_values(self, features) -> np.ndarray:
        return nn.forward(self.nets["r"].params, features)


def init_nets(n_features: int, n_actions: int, cfg: DiqlConfig,
              constrained: bool = False) -> DiqlNets:
    sizes = [n_features, *cfg.hidden, n_actions]
    names = NET_NAMES if constrained else NET_NAMES[:-1]
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(NET_NAMES))
    return DiqlNets({name: MlpBundle.create(sizes, np.random.default_rng(seeds[i]))
                     for i, name in enumerate(names)})


def classifier_probs(nets: DiqlNets, features) -> np.ndarray:
    """Softmax of the classifier's linear outputs."""
    return nn.softmax(nn.forward(nets["rho"].params, features))


def reward_targets(eta, actions, r_target_out, probs, eps_clip):
    """Per-sample reward regression targets.

    ``eta[i, a_i] + sum_{b != a_i} (r'(s_i, b) - eta[i, b]) / (n - 1)`` with
    actions of probability <= ``eps_clip`` left out of the sum.
    """
    m, n = eta.shape
    idx = np.arange(m)
    keep = probs > eps_clip
    keep[idx, actions] = False
    others = np.where(keep, r_target_out - eta, 0.0).sum(axis=1)
    return eta[idx, actions] + others / (n - 1)


def _regress(bundle: MlpBundle, x, actions, targets, lr, weights=None):
    out, cache = nn.forward_cache(bundle.params, x)
    if weights is not None and not weights.all():
        keep = weights.astype(bool)
        if not keep.any():
            return 0.0
        loss, g = nn.mse_on_actions(out[keep], actions[keep], targets[keep])
        grad = np.zeros_like(out)
        grad[keep] = g
    else:
        loss, grad = nn.mse_on_actions(out, actions, targets)
    nn.adam_step(bundle.params, nn.backward(bundle.params, x, grad, cache), bundle.adam, lr,
                 inplace=True)
    return loss


def diql_iteration(nets: DiqlNets, buffer: ReplayBuffer, cfg: DiqlConfig, rng,
                   safe=None, hook=None, record_targets: bool = False) -> dict:
    """One minibatch iteration; updates ``nets`` in place and returns losses.

    ``safe`` is a boolean (S, A) safe-action table indexed by the buffer's
    next-state ids; passing it turns on the constrained Q update.
    ``hook(stage, nets)`` runs right before each stage computes its target
    (stages: "sh", "rho", "r", "q", "c").
    """
    if len(buffer) == 0:
        raise ValueError("replay buffer is empty")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    idx = buffer.sample(cfg.batch_size, rng)
    x, a = buffer.features[idx], buffer.actions[idx]
    xn, done = buffer.next_features[idx], buffer.done[idx]
    lr_rho = cfg.lr if cfg.lr_rho is None else cfg.lr_rho
    info = {"loss_rho": np.nan, "loss_c": np.nan}
    targets = {}

    def call(stage):
        if hook is not None:
            hook(stage, nets)

    # shifted Q
    call("sh")
    next_max = np.where(done, 0.0, nn.forward(nets["q"].target, xn).max(axis=1))
    y_sh = cfg.gamma * next_max
    targets["sh"] = y_sh
    info["loss_sh"] = _regress(nets["sh"], x, a, y_sh, cfg.lr)

    # action distribution
    call("rho")
    if cfg.use_true_distribution:
        if buffer.probs is None:
            raise ValueError("use_true_distribution needs action probabilities in the buffer")
        probs = buffer.probs[idx]
    else:
        rho = nets["rho"]
        logits, cache = nn.forward_cache(rho.params, x)
        info["loss_rho"], g = nn.cross_entropy(logits, a)
        nn.adam_step(rho.params, nn.backward(rho.params, x, g, cache), rho.adam, lr_rho,
                     inplace=True)
        probs = classifier_probs(nets, x)

    # reward
    call("r")
    eta = np.log(np.maximum(probs, cfg.eps_clip)) - nn.forward(nets["sh"].target, x)
    r_target_out = nn.forward(nets["r"].target, x)
    y_r = reward_targets(eta, a, r_target_out, probs, cfg.eps_clip)
    targets["r"] = y_r
    weights = probs[np.arange(len(a)), a] > cfg.eps_clip
    info["loss_r"] = _regress(nets["r"], x, a, y_r, cfg.lr, weights)

    # Q
    call("q")
    r_sa = nn.forward(nets["r"].target, x)[np.arange(len(a)), a]
    next_max = np.where(done, 0.0, nn.forward(nets["q"].target, xn).max(axis=1))
    y_q = r_sa + cfg.gamma * next_max
    targets["q"] = y_q
    info["loss_q"] = _regress(nets["q"], x, a, y_q, cfg.lr)

    if safe is not None:
        call("c")
        if "c" not in nets:
            raise ValueError("networks were initialised without a constrained Q head")
        qc_next = nn.forward(nets["c"].target, xn)
        mask = safe[buffer.next_states[idx]]
        masked = np.where(mask, qc_next, -np.inf).max(axis=1)
        y_c = r_sa + cfg.gamma * np.where(done, 0.0, masked)
        targets["c"] = y_c
        info["loss_c"] = _regress(nets["c"], x, a, y_c, cfg.lr)

    for name in ("r", "q", "sh", "c"):
        if name in nets and (name != "c" or safe is not None):
            nn.polyak_update(nets[name].target, nets[name].params, cfg.tau, inplace=True)
    if record_targets:
        info["targets"] = targets
    return info


def dciql_iteration(nets: DiqlNets, buffer: ReplayBuffer, constraints, cfg: DiqlConfig, rng,
                    **kw) -> dict:
    """Constrained iteration; ``constraints`` is a ConstraintSet or safe mask."""
    return diql_iteration(nets, buffer, cfg, rng, safe=_constraint_mask(constraints, buffer),
                          **kw)


def _constraint_mask(constraints, buffer: ReplayBuffer):
    if buffer.next_states is None:
        raise ValueError("constrained training needs next-state ids in the buffer")
    if isinstance(constraints, ConstraintSet):
        n_states = int(buffer.next_states.max()) + 1
        if buffer.states is not None:
            n_states = max(n_states, int(buffer.states.max()) + 1)
        safe = constraints.mask(n_states, validate=False)
    else:
        safe = np.asarray(constraints, dtype=bool)
    needed = np.unique(buffer.next_states[~buffer.done])
    check_feasible(safe[needed])
    return safe


@dataclass
class TrainResult:
    nets: DiqlNets
    log: list


def train(buffer: ReplayBuffer, cfg: DiqlConfig, constraints=None, nets: DiqlNets | None = None,
          n_actions: int | None = None, log_every: int = 1) -> TrainResult:
    """Run ``cfg.iterations`` (constrained) iterations from a seeded initialisation."""
    if len(buffer) == 0:
        raise ValueError("replay buffer is empty")
    if nets is None:
        if n_actions is None:
            n_actions = int(buffer.actions.max()) + 1 if buffer.probs is None \
                else buffer.probs.shape[1]
        nets = init_nets(buffer.features.shape[1], n_actions, cfg,
                         constrained=constraints is not None)
    safe = None if constraints is None else _constraint_mask(constraints, buffer)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    log = []
    for it in range(1, cfg.iterations + 1):
        info = diql_iteration(nets, buffer, cfg, rng, safe=safe)
        if it % log_every == 0 or it == cfg.iterations:
            log.append({"iteration": it, "loss_r": info["loss_r"], "loss_q": info["loss_q"],
                        "loss_sh": info["loss_sh"], "loss_rho": info["loss_rho"],
                        "loss_c": info["loss_c"]})
    return TrainResult(nets, log)


def write_log_csv(log, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in log:
            w.writerow({k: row.get(k, "") for k in LOG_FIELDS})
