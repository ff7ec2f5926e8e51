"""Mini-batch training loops for clustering and hashing."""

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .augment import PerturbSpec, components, perturb, radius_table
from .errors import ConfigError, ConstraintUnsatisfied, ShapeError
from .metrics import CodeBook, pack_bits
from .objectives import (
    ClusterObjective,
    HashObjective,
    bits_from_heads,
    clustering_terms,
    default_delta,
    hash_terms,
    head_grads_from_bits,
    kl_divergence,
    sat_loss_grad,
)

log = logging.getLogger(__name__)

REGULARIZERS = ("vat", "rpt", "affine", "composite", "weight_decay", "none")
DEFAULT_HIDDEN = {"cluster": (1200, 1200), "hash": (200, 200)}
DEFAULT_DECAY = 0.005


@dataclass
class TrainConfig:
    task: str = "cluster"
    n_out: int = 10  # clusters K or bits D
    hidden: tuple = None
    weight_scales: tuple = None
    lam: float = 0.1
    regularizer: str = "vat"
    alpha: float = 0.25
    t_neighbor: int = 10
    eps: float = None  # fixed perturbation radius instead of alpha * sigma_t
    xi: float = 10.0
    power_iters: int = 1
    weight_decay_rate: float = None
    composite_weights: tuple = (0.5, 0.5)
    image_shape: tuple = None
    delta_frac: float = 0.01
    prior_q: tuple = None
    mu_schedule: tuple = None
    warm_start: bool = False
    pairs: str = "unordered"
    batch_size: int = 250
    epochs: int = 50
    step_size: float = 0.002
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("cluster", "hash"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {self.regularizer!r}")
        if self.task == "cluster" and self.n_out < 2:
            raise ConfigError("clustering needs at least 2 clusters")
        if self.task == "hash" and self.n_out < 1:
            raise ConfigError("hashing needs at least 1 bit")
        if self.hidden is None:
            self.hidden = DEFAULT_HIDDEN[self.task]
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.weight_decay_rate is None:
            self.weight_decay_rate = DEFAULT_DECAY if self.regularizer == "weight_decay" else 0.0
        if self.lam <= 0 or self.batch_size < 1 or self.epochs < 1 or self.step_size <= 0:
            raise ConfigError("lam, batch_size, epochs and step_size must be positive")
        if self.prior_q is not None and len(self.prior_q) != self.n_out:
            raise ConfigError("prior_q length must equal the number of clusters")
        if self.mu_schedule is None:
            self.mu_schedule = default_mu_schedule(self.lam)
        self.mu_schedule = tuple(float(m) for m in self.mu_schedule)
        if not self.mu_schedule or any(m < 0 for m in self.mu_schedule):
            raise ConfigError("mu_schedule must be a non-empty list of non-negative values")

    @property
    def prior(self):
        if self.prior_q is None:
            return np.full(self.n_out, 1.0 / self.n_out)
        return np.asarray(self.prior_q, dtype=np.float64)

    @property
    def delta(self):
        return default_delta(self.prior, self.delta_frac)

    def layer_dims(self, input_dim):
        return [input_dim, *self.hidden, self.n_out]

    def perturb_spec(self):
        """The augmentation used by SAT, or None for weight-decay/plain variants."""
        common = dict(alpha=self.alpha, t_neighbor=self.t_neighbor, xi=self.xi,
                      power_iters=self.power_iters, eps=self.eps, image_shape=self.image_shape)
        if self.regularizer in ("vat", "rpt", "affine"):
            return PerturbSpec(kind=self.regularizer, **common)
        if self.regularizer == "composite":
            parts = [PerturbSpec(kind="vat", **common), PerturbSpec(kind="affine", **common)]
            return PerturbSpec(kind="composite", components=parts,
                               weights=tuple(self.composite_weights), **common)
        return None

    def to_dict(self):
        return asdict(self)


def default_mu_schedule(lam, n=10):
    """lam * [1, 2, 4, 6, 8, ...]"""
    return tuple(lam * m for m in [1] + [2 * i for i in range(1, n)])


VARIANTS = {
    "linear_rim": dict(hidden=(), regularizer="weight_decay", weight_decay_rate=0.005, lam=1.0),
    "deep_rim": dict(regularizer="weight_decay", weight_decay_rate=0.005, lam=1.0),
    "linear_imsat_vat": dict(hidden=(), regularizer="vat", alpha=0.4, lam=1.6),
    "imsat_rpt": dict(regularizer="rpt", alpha=2.5, lam=0.05),
    "imsat_vat": dict(regularizer="vat", alpha=0.25, lam=0.1),
    "imsat_affine": dict(regularizer="affine", lam=0.1),
    "imsat_vat_affine": dict(regularizer="composite", alpha=0.25, lam=0.1),
}


def config_for_variant(variant, **overrides):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    settings = dict(VARIANTS[variant])
    settings.update(overrides)
    return TrainConfig(**settings)


@dataclass
class TrainReport:
    epochs: int = 0
    objective_trace: list = field(default_factory=list)
    final_kl: float = None
    mu_final: float = None
    seconds: float = 0.0
    loss_terms: dict = field(default_factory=dict)
    delta: float = None
    trials: list = field(default_factory=list)
    initial_cond_entropy: float = None
    final_cond_entropy: float = None

    def to_json(self):
        return {
            "epochs": self.epochs,
            "objective_trace": [float(v) for v in self.objective_trace],
            "final_kl": self.final_kl,
            "mu_final": self.mu_final,
            "seconds": self.seconds,
            "loss_terms": {k: float(v) for k, v in self.loss_terms.items()},
            "delta": self.delta,
            "trials": self.trials,
            "initial_cond_entropy": self.initial_cond_entropy,
            "final_cond_entropy": self.final_cond_entropy,
        }


def _check_data(data, cfg):
    X = np.asarray(getattr(data, "features", data), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError(f"training data must be an (n, d) matrix, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ConfigError("training data contains non-finite values")
    if cfg.batch_size > X.shape[0]:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {X.shape[0]}")
    if cfg.image_shape is None and getattr(data, "image_shape", None) is not None:
        cfg = replace(cfg, image_shape=data.image_shape)
    return X, cfg


def predict_batched(model, X, chunk=2048):
    outs = None
    for start in range(0, X.shape[0], chunk):
        probs = nn.predict(model, X[start:start + chunk])
        if outs is None:
            outs = [[p] for p in probs]
        else:
            for acc, p in zip(outs, probs):
                acc.append(p)
    return [np.concatenate(parts) for parts in outs]


def _radii(X, spec):
    if spec is None or not spec.needs_radius:
        return None
    return radius_table(X, spec.alpha, spec.t_neighbor)


def _sat_step(model, spec, xb, eps_b, targets, rng, grads):
    """Add SAT gradients for one batch into ``grads``; return the SAT value."""
    total = 0.0
    for w, comp in components(spec):
        if w == 0:
            continue
        xa = perturb(comp, model, xb, eps_b, rng, targets)
        probs, cache = nn.forward(model, xa, mode="train", update_stats=False)
        value, g = sat_loss_grad(targets, probs)
        total += w * value
        g_params, _ = nn.backward(model, cache, [w * gi for gi in g], input_grad=False)
        for k, v in g_params.items():
            grads[k] += v
    return total


def _run_epochs(model, X, cfg, spec, eps, head_objective, rng, report):
    """Shared loop. ``head_objective(probs) -> (terms, head_grads)``."""
    opt = nn.AdamState(step_size=cfg.step_size, weight_decay=cfg.weight_decay_rate)
    n = X.shape[0]
    last_terms = {}
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        totals = {}
        weight_sum = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            probs, cache = nn.forward(model, xb, mode="train")
            terms, head_grads = head_objective(probs)
            grads, _ = nn.backward(model, cache, head_grads, input_grad=False)
            sat = 0.0
            if spec is not None:
                targets = [p.copy() for p in probs]
                eps_b = None if eps is None else eps[idx]
                sat = _sat_step(model, spec, xb, eps_b, targets, rng, grads)
            nn.adam_step(opt, model, grads)
            terms = dict(terms, sat=sat, objective=sat + terms["value"])
            for k, v in terms.items():
                totals[k] = totals.get(k, 0.0) + v * len(idx)
            weight_sum += len(idx)
        last_terms = {k: v / weight_sum for k, v in totals.items()}
        if not np.isfinite(last_terms["objective"]):
            raise FloatingPointError(f"objective became non-finite at epoch {epoch}")
        report.objective_trace.append(last_terms["objective"])
    report.epochs += cfg.epochs
    report.loss_terms = last_terms
    return model


def full_kl(model, X, prior):
    probs = predict_batched(model, X)[0]
    return kl_divergence(probs.mean(axis=0), prior)


def full_cond_entropy(model, X):
    P = predict_batched(model, X)[0]
    return float(-np.sum(P * np.log(np.clip(P, 1e-8, 1.0))) / P.shape[0])


def train_clustering(data, cfg):
    """Penalty-method clustering.

    For each mu in ``cfg.mu_schedule`` a network is trained from a fresh
    initialization (same seed) and accepted as soon as the full-data,
    inference-mode KL[p(y) || q] is within delta. Raises
    ``ConstraintUnsatisfied`` carrying the lowest-KL model otherwise.
    """
    if cfg.task != "cluster":
        raise ConfigError("train_clustering needs task='cluster'")
    X, cfg = _check_data(data, cfg)
    t0 = time.perf_counter()
    spec = cfg.perturb_spec()
    eps = _radii(X, spec)
    prior = cfg.prior
    delta = cfg.delta
    report = TrainReport(delta=delta)

    best = None
    model = None
    for mu in cfg.mu_schedule:
        if model is None or not cfg.warm_start:
            model = nn.init_params(cfg.layer_dims(X.shape[1]), cfg.weight_scales, cfg.seed)
        if report.initial_cond_entropy is None:
            report.initial_cond_entropy = full_cond_entropy(model, X)
        objective = ClusterObjective(lam=cfg.lam, prior_q=prior, delta=delta, mu=mu)

        def head_objective(probs, objective=objective):
            terms, g = clustering_terms(probs[0], objective)
            return terms, [g]

        rng = np.random.default_rng([cfg.seed, 1])
        report.objective_trace = []
        report.epochs = 0
        _run_epochs(model, X, cfg, spec, eps, head_objective, rng, report)
        kl = full_kl(model, X, prior)
        ok = kl <= delta
        report.trials.append({"mu": mu, "kl": kl, "satisfied": bool(ok)})
        log.info("mu=%.4g  full-data KL=%.5f  delta=%.5f  %s", mu, kl, delta, "ok" if ok else "violated")
        if best is None or kl < best[1]:
            best = (model.copy(), kl, mu)
        if ok:
            report.final_kl = kl
            report.mu_final = mu
            report.final_cond_entropy = full_cond_entropy(model, X)
            report.seconds = time.perf_counter() - t0
            return model, report

    model, kl, mu = best
    report.final_kl = kl
    report.mu_final = mu
    report.final_cond_entropy = full_cond_entropy(model, X)
    report.seconds = time.perf_counter() - t0
    raise ConstraintUnsatisfied(
        f"no mu in {list(cfg.mu_schedule)} met KL <= {delta:.5g}; best KL {kl:.5g} at mu={mu:.4g}",
        model=model, kl=kl, report=report,
    )


def train_hashing(data, cfg):
    """Unconstrained training of the pairwise hash objective with sigmoid bits."""
    if cfg.task != "hash":
        raise ConfigError("train_hashing needs task='hash'")
    X, cfg = _check_data(data, cfg)
    t0 = time.perf_counter()
    spec = cfg.perturb_spec()
    eps = _radii(X, spec)
    objective = HashObjective(lam=cfg.lam, bits=cfg.n_out, pairs=cfg.pairs)
    model = nn.init_params(cfg.layer_dims(X.shape[1]), cfg.weight_scales, cfg.seed, heads="sigmoid")

    def head_objective(probs):
        terms, g = hash_terms(bits_from_heads(probs), objective)
        return terms, head_grads_from_bits(g)

    report = TrainReport()
    rng = np.random.default_rng([cfg.seed, 1])
    _run_epochs(model, X, cfg, spec, eps, head_objective, rng, report)
    report.seconds = time.perf_counter() - t0
    return model, report


def encode(model, data, task=None):
    """Discrete codes: argmax cluster (ties -> lowest id) or bits thresholded at 0.5 (ties -> 0)."""
    X = np.asarray(getattr(data, "features", data), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"expected (n, {model.input_dim}) data, got {X.shape}")
    if task is None:
        task = "hash" if model.heads[0].kind == "sigmoid" else "cluster"
    probs = predict_batched(model, X)
    return codebook_from_probs(probs, task)


def codebook_from_probs(probs, task):
    if task == "cluster":
        P = probs[0] if isinstance(probs, list) else np.asarray(probs)
        return CodeBook(np.argmax(P, axis=1), P, None, "cluster")
    if task == "hash":
        B = bits_from_heads(probs) if isinstance(probs, list) else np.asarray(probs)
        bits = (B > 0.5).astype(np.uint8)
        return CodeBook(pack_bits(bits), B, bits, "hash")
    raise ConfigError(f"unknown task {task!r}")
