"""Information-theoretic losses computed from mini-batch soft outputs.

All logs are natural. Probabilities entering a log are clamped to
[PROB_FLOOR, 1 - PROB_FLOOR]. The ``*_grad`` variants return the loss value
together with dL/d(probabilities), which ``nn.backward`` consumes.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DistributionError, ShapeError

PROB_FLOOR = 1e-8
_SUM_TOL = 1e-6


def _clamp(p):
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def _log(p):
    return np.log(_clamp(p))


def _check_distribution(p, axis=-1):
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise DistributionError("empty distribution")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DistributionError("distribution has negative or non-finite entries")
    if np.any(np.abs(p.sum(axis=axis) - 1.0) > _SUM_TOL):
        raise DistributionError("distribution does not sum to 1")
    return p


def _check_batch(batch_probs):
    P = np.asarray(batch_probs, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise DistributionError(f"expected a non-empty (n, K) matrix, got shape {P.shape}")
    return _check_distribution(P, axis=1)


def _plogp(p):
    # p log p is finite for every p > 0, so no clamping is needed here
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe), 0.0)


def shannon_entropy(p):
    """Entropy in nats, with 0 log 0 = 0."""
    p = _check_distribution(p)
    if p.ndim != 1:
        raise ShapeError("shannon_entropy takes a single vector")
    return float(-np.sum(_plogp(p)))


def conditional_entropy(batch_probs):
    """Mean per-row entropy, the batch estimate of H(Y|X)."""
    P = _check_batch(batch_probs)
    return float(-np.sum(_plogp(P)) / P.shape[0])


def marginal_estimate(batch_probs):
    """Column mean of the rows: the mini-batch estimate of p(y)."""
    P = np.asarray(batch_probs, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise DistributionError("marginal of an empty batch is undefined")
    return _check_batch(P).mean(axis=0)


def kl_divergence(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"length mismatch {p.shape} vs {q.shape}")
    if np.any(q <= 0):
        raise DistributionError("reference distribution must be strictly positive")
    return float(np.sum(np.where(p > 0, p * (_log(p) - np.log(q)), 0.0)))


def mutual_information(batch_probs):
    """H(Y) - H(Y|X) estimated on one batch."""
    P = _check_batch(batch_probs)
    return shannon_entropy(P.mean(axis=0)) - conditional_entropy(P)


def _as_head_list(probs):
    if isinstance(probs, np.ndarray) and probs.ndim == 2:
        return [probs]
    return [np.asarray(p, dtype=np.float64) for p in probs]


def sat_loss(target_probs, augmented_probs):
    """Mean cross-entropy from frozen targets to augmented predictions, summed over heads."""
    return sat_loss_grad(target_probs, augmented_probs)[0]


def sat_loss_grad(target_probs, augmented_probs):
    """``sat_loss`` plus its gradient w.r.t. ``augmented_probs`` only."""
    targets = _as_head_list(target_probs)
    augmented = _as_head_list(augmented_probs)
    if len(targets) != len(augmented):
        raise ShapeError(f"{len(targets)} target heads vs {len(augmented)} augmented heads")
    total = 0.0
    grads = []
    for t, a in zip(targets, augmented):
        if t.shape != a.shape:
            raise ShapeError(f"target shape {t.shape} != augmented shape {a.shape}")
        n = t.shape[0]
        total += float(-np.sum(t * _log(a)) / n)
        grads.append(-t / (n * _clamp(a)))
    return total, grads


@dataclass
class ClusterObjective:
    lam: float = 0.1
    prior_q: np.ndarray = None
    delta: float = None
    mu: float = 0.0
    n_clusters: int = None

    def __post_init__(self):
        if self.prior_q is None:
            if self.n_clusters is None:
                raise ConfigError("give either prior_q or n_clusters")
            self.prior_q = np.full(self.n_clusters, 1.0 / self.n_clusters)
        self.prior_q = np.asarray(self.prior_q, dtype=np.float64)
        if abs(self.prior_q.sum() - 1.0) > 1e-9 or np.any(self.prior_q <= 0):
            raise ConfigError("prior_q must be strictly positive and sum to 1")
        self.n_clusters = len(self.prior_q)
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.delta is None:
            self.delta = default_delta(self.prior_q)
        if self.delta < 0 or self.mu < 0:
            raise ConfigError("delta and mu must be non-negative")


def default_delta(prior_q, frac=0.01):
    return frac * shannon_entropy(prior_q)


def clustering_terms(batch_probs, cfg):
    """Non-SAT part of the penalized clustering objective and its gradient.

    Returns ``(terms, grad)`` where ``terms`` holds ``cond_entropy``, ``kl``,
    ``penalty`` and ``value = lam * cond_entropy + mu * penalty``.
    """
    P = np.asarray(batch_probs, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != cfg.n_clusters:
        raise ShapeError(f"expected (n, {cfg.n_clusters}) probabilities, got {P.shape}")
    n = P.shape[0]
    logP = _log(P)
    cond = float(-np.sum(P * logP) / n)
    grad = -cfg.lam / n * (logP + P / _clamp(P))

    pbar = P.mean(axis=0)
    log_ratio = _log(pbar) - np.log(cfg.prior_q)
    kl = float(np.sum(pbar * log_ratio))
    excess = kl - cfg.delta
    penalty = max(excess, 0.0)
    if excess > 0 and cfg.mu > 0:
        dkl = log_ratio + pbar / _clamp(pbar)
        grad = grad + cfg.mu / n * dkl[None, :]
    terms = {
        "cond_entropy": cond,
        "kl": kl,
        "penalty": penalty,
        "value": cfg.lam * cond + cfg.mu * penalty,
    }
    return terms, grad


def clustering_loss(batch_probs, sat, cfg):
    """sat + lam * H(Y|X) + mu * max(KL[p_B || q] - delta, 0)."""
    _check_batch(batch_probs)
    terms, _ = clustering_terms(batch_probs, cfg)
    return float(sat) + terms["value"]


@dataclass
class HashObjective:
    lam: float = 0.1
    bits: int = 16
    pairs: str = "unordered"

    def __post_init__(self):
        if self.bits < 1:
            raise ConfigError("need at least one bit")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.pairs not in ("ordered", "unordered"):
            raise ConfigError("pairs must be 'ordered' or 'unordered'")

    @property
    def pair_weight(self):
        return 2.0 if self.pairs == "ordered" else 1.0


def pairwise_joint(batch_probs_d, batch_probs_e):
    """2x2 batch joint of two bits, indexed [y_d][y_e]."""
    a = np.asarray(batch_probs_d, dtype=np.float64).ravel()
    b = np.asarray(batch_probs_e, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DistributionError("empty batch")
    if np.any((a < 0) | (a > 1)) or np.any((b < 0) | (b > 1)):
        raise DistributionError("bit probabilities must lie in [0, 1]")
    ua = np.stack([1.0 - a, a])
    ub = np.stack([1.0 - b, b])
    return ua @ ub.T / a.size


def mutual_information_from_joint(joint):
    J = np.asarray(joint, dtype=np.float64)
    if J.ndim != 2 or np.any(J < 0) or abs(J.sum() - 1.0) > _SUM_TOL:
        raise DistributionError("joint must be a non-negative table summing to 1")
    outer = np.outer(J.sum(axis=1), J.sum(axis=0))
    mask = J > 0
    return float(max(np.sum(J[mask] * (np.log(J[mask]) - np.log(outer[mask]))), 0.0))


def _binary_entropy(p):
    return -(p * _log(p) + (1.0 - p) * _log(1.0 - p))


def hash_terms(bit_probs, cfg):
    """Non-SAT part of the hash objective and its gradient w.r.t. P(bit = 1).

    ``value = -lam * (sum_d I(X; Y_d) - w * sum_{d<e} I(Y_d; Y_e))``. Each
    unordered pair of bits is counted once (``w = 1``) by default; with
    ``pairs="ordered"`` every pair is counted in both orders (``w = 2``).
    """
    B = np.asarray(bit_probs, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] != cfg.bits:
        raise ShapeError(f"expected (n, {cfg.bits}) bit probabilities, got {B.shape}")
    n, D = B.shape
    m = B.mean(axis=0)
    marg = _binary_entropy(m)
    cond = _binary_entropy(B).mean(axis=0)
    per_bit_mi = marg - cond
    # d/db of [H(Y_d) - H(Y_d|X)]
    grad_info = (np.log(_clamp(1.0 - m)) - _log(m))[None, :] / n \
        - (np.log(_clamp(1.0 - B)) - _log(B)) / n

    pair_sum = 0.0
    grad_pair = np.zeros_like(B)
    if D > 1:
        C = 1.0 - B
        J11 = B.T @ B / n
        J10 = B.T @ C / n
        J01 = C.T @ B / n
        J00 = C.T @ C / n
        L11, L10, L01, L00 = _log(J11), _log(J10), _log(J01), _log(J00)
        neg_joint_h = J11 * L11 + J10 * L10 + J01 * L01 + J00 * L00
        hm = marg
        I = neg_joint_h + hm[:, None] + hm[None, :]
        off = ~np.eye(D, dtype=bool)
        pair_sum = float(np.sum(I[off]) / 2.0)
        # dI_de / db_id = (A_de b_ie + Cc_de (1 - b_ie) + log((1 - m_d) / m_d)) / n
        A = np.where(off, L11 - L01, 0.0)
        Cc = np.where(off, L10 - L00, 0.0)
        dm = np.log(_clamp(1.0 - m)) - _log(m)
        grad_pair = (B @ A.T + C @ Cc.T + (D - 1) * dm[None, :]) / n

    w = cfg.pair_weight
    info = float(per_bit_mi.sum())
    terms = {
        "bit_information": info,
        "pair_information": pair_sum,
        "value": -cfg.lam * (info - w * pair_sum),
    }
    grad = -cfg.lam * (grad_info - w * grad_pair)
    return terms, grad


def hash_loss(per_bit_probs, sat, cfg):
    B = np.asarray(per_bit_probs, dtype=np.float64)
    if B.ndim != 2 or np.any((B < 0) | (B > 1)):
        raise DistributionError("bit probabilities must be an (n, D) matrix in [0, 1]")
    terms, _ = hash_terms(B, cfg)
    return float(sat) + terms["value"]


def bits_from_heads(head_probs):
    """Stack sigmoid heads ([1 - s, s] each) into an (n, D) matrix of s."""
    return np.stack([p[:, 1] for p in head_probs], axis=1)


def head_grads_from_bits(grad_bits):
    """Map dL/d(P(bit = 1)) back onto per-head two-column gradients."""
    zeros = np.zeros(grad_bits.shape[0])
    return [np.stack([zeros, grad_bits[:, d]], axis=1) for d in range(grad_bits.shape[1])]
