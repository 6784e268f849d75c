"""Training objectives and their exact gradients with respect to the base
embedding tables.

The total objective is

    total = main + lambda_rrm * rrm + lambda_orm * orm

where ``main`` is BPR over fused target scores plus an L2 term on the base
tables, ``rrm`` is a target-anchored contrastive alignment loss over user
embeddings, and ``orm`` is a cross-behavior invariance penalty: either the
variance of per-behavior BPR risks (``rex``) or a squared risk-gradient
penalty with respect to a scalar score multiplier frozen at 1 (``irm_v1`` /
``irm_v2``).  Per-behavior BPR risks are always reported but enter the
gradient only through the invariance penalty.

All gradients here are derived by hand and are validated against central
finite differences in the test suite; everything runs in float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .graph import BehaviorGraph, propagate, propagate_adjoint

log = logging.getLogger(__name__)

IRM_VARIANTS = ("rex", "irm_v1", "irm_v2")
ORM_SCOPES = ("all_behaviors", "aux_only")
RRM_MODES = ("with_positive", "literal")

_NORM_FLOOR = 1e-30  # cosine guard; embeddings are never legitimately zero


@dataclass(frozen=True)
class Hyperparameters:
    dim: int = 64
    num_layers: int = 2
    tau: float = 0.2
    lambda_rrm: float = 1.0
    lambda_orm: float = 1.0
    lambda_reg: float = 1e-4
    irm_variant: str = "rex"
    orm_scope: str = "all_behaviors"
    rrm_denominator: str = "with_positive"
    lr: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        if self.num_layers < 0:
            raise ValueError("layer count must be >= 0")
        if self.tau <= 0:
            raise ValueError("temperature must be > 0")
        for name in ("lambda_rrm", "lambda_orm", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.irm_variant not in IRM_VARIANTS:
            raise ValueError(f"irm_variant must be one of {IRM_VARIANTS}")
        if self.orm_scope not in ORM_SCOPES:
            raise ValueError(f"orm_scope must be one of {ORM_SCOPES}")
        if self.rrm_denominator not in RRM_MODES:
            raise ValueError(f"rrm_denominator must be one of {RRM_MODES}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class ModelState:
    """Trainable parameters: the two base embedding tables."""

    user_emb: np.ndarray  # |U| x d
    item_emb: np.ndarray  # |I| x d
    hp: Hyperparameters

    def copy(self) -> "ModelState":
        return ModelState(self.user_emb.copy(), self.item_emb.copy(), self.hp)


@dataclass(frozen=True)
class TripletBatch:
    """(user, positive item, negative item) index triplets.

    ``per_behavior[b]`` holds the behavior-b triplets; ``main`` holds the
    target-supervision triplets for the fused scores.  All arrays are
    (n, 3) int64.
    """

    per_behavior: dict[str, np.ndarray]
    main: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    bpr: dict[str, float]
    rrm: float
    orm: float
    main: float
    reg: float
    total: float


@dataclass
class GradientBuffer:
    d_user: np.ndarray
    d_item: np.ndarray


# ----------------------------------------------------------------------
# BPR
# ----------------------------------------------------------------------

def _check_triplets(triplets: np.ndarray) -> np.ndarray:
    triplets = np.asarray(triplets, dtype=np.int64)
    if triplets.ndim != 2 or triplets.shape[1] != 3:
        raise ValueError("triplets must be an (n, 3) array")
    if triplets.shape[0] == 0:
        raise ValueError("empty triplet list")
    return triplets


def _margins(P: np.ndarray, Q: np.ndarray, triplets: np.ndarray) -> np.ndarray:
    users, pos, neg = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    return np.einsum("ij,ij->i", P[users], Q[pos] - Q[neg])


def _scatter_margin_grads(
    d_P: np.ndarray,
    d_Q: np.ndarray,
    P: np.ndarray,
    Q: np.ndarray,
    triplets: np.ndarray,
    coef: np.ndarray,
) -> None:
    """Accumulate coef_t * d(margin_t)/d(P, Q) into the buffers."""
    users, pos, neg = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    pu = P[users]
    contrib = coef[:, None] * (Q[pos] - Q[neg])
    np.add.at(d_P, users, contrib)
    np.add.at(d_Q, pos, coef[:, None] * pu)
    np.subtract.at(d_Q, neg, coef[:, None] * pu)


def bpr_loss(
    P: np.ndarray, Q: np.ndarray, triplets: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean -log sigmoid(score margin) and its gradient.

    Uses log1p(exp(-|m|)) for the log-sigmoid so large margins neither
    overflow nor lose the gradient's sign.
    """
    triplets = _check_triplets(triplets)
    m = _margins(P, Q, triplets)
    loss = float(np.mean(np.logaddexp(0.0, -m)))
    coef = -expit(-m) / len(m)
    d_P = np.zeros_like(P)
    d_Q = np.zeros_like(Q)
    _scatter_margin_grads(d_P, d_Q, P, Q, triplets, coef)
    return loss, d_P, d_Q


# ----------------------------------------------------------------------
# Target-anchored contrastive alignment (user side only)
# ----------------------------------------------------------------------

def _unit_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.maximum(np.linalg.norm(X, axis=1), _NORM_FLOOR)
    return X / norms[:, None], norms


def rrm_loss(
    user_embs: dict[str, np.ndarray],
    target: str,
    batch_users: np.ndarray,
    tau: float,
    mode: str = "with_positive",
) -> tuple[float, dict[str, np.ndarray]]:
    """InfoNCE-style alignment of auxiliary user embeddings to the target.

    For each auxiliary behavior b and batch user u the positive logit is
    cos(p_u^b, p_u^target)/tau and the negatives are cos(p_u^b, p_v^b)/tau
    over the other batch users v.  ``with_positive`` includes the positive
    term in the denominator (bounded below); ``literal`` uses the
    negatives-only denominator.  The loss is averaged over batch users and
    auxiliary behaviors; gradients flow into every passed embedding matrix,
    the target one included.
    """
    if mode not in RRM_MODES:
        raise ValueError(f"mode must be one of {RRM_MODES}")
    if target not in user_embs:
        raise KeyError(f"target behavior {target!r} missing from embeddings")
    batch_users = np.asarray(batch_users, dtype=np.int64)
    aux = [b for b in user_embs if b != target]
    grads = {b: np.zeros_like(E) for b, E in user_embs.items()}
    if not aux:
        log.warning("alignment loss skipped: no auxiliary behaviors")
        return 0.0, grads
    n = len(batch_users)
    if n < 2:
        raise ValueError("alignment loss needs at least 2 batch users")

    scale = 1.0 / (len(aux) * n)
    Y = user_embs[target][batch_users]
    Y_hat, y_norm = _unit_rows(Y)
    total = 0.0
    for b in aux:
        X = user_embs[b][batch_users]
        X_hat, x_norm = _unit_rows(X)

        c_pos = np.einsum("ij,ij->i", X_hat, Y_hat)
        z_pos = c_pos / tau
        C = X_hat @ X_hat.T
        Z = C / tau
        np.fill_diagonal(Z, -np.inf)  # a user is never its own negative

        row_max = np.max(Z, axis=1)
        sum_neg = np.sum(np.exp(Z - row_max[:, None]), axis=1)
        lse_neg = row_max + np.log(sum_neg)
        if mode == "with_positive":
            denom = np.logaddexp(z_pos, lse_neg)
            g_pos = -1.0 + np.exp(z_pos - denom)
        else:
            denom = lse_neg
            g_pos = np.full(n, -1.0)
        total += float(np.sum(-z_pos + denom)) * scale
        W = np.exp(Z - denom[:, None])
        np.fill_diagonal(W, 0.0)

        # d z_pos / dX and dY (cosine chain rule)
        gp = (scale * g_pos)[:, None]
        d_X = gp * (Y_hat - c_pos[:, None] * X_hat) / (tau * x_norm[:, None])
        d_Y = gp * (X_hat - c_pos[:, None] * Y_hat) / (tau * y_norm[:, None])

        # negatives: logits Z_ij touch X_i and X_j symmetrically
        V = W + W.T
        n1 = V @ X_hat
        n2 = np.sum(V * C, axis=1)[:, None] * X_hat
        d_X += scale * (n1 - n2) / (tau * x_norm[:, None])

        np.add.at(grads[b], batch_users, d_X)
        np.add.at(grads[target], batch_users, d_Y)
    return total, grads


# ----------------------------------------------------------------------
# Cross-behavior invariance penalties
# ----------------------------------------------------------------------

def _variance_scope(
    risks: dict[str, float], scope: str, target: str
) -> tuple[list[str], int]:
    if scope not in ORM_SCOPES:
        raise ValueError(f"scope must be one of {ORM_SCOPES}")
    if len(risks) < 2:
        raise ValueError("risk variance needs at least 2 behaviors")
    keys = list(risks)
    if scope == "all_behaviors":
        return keys, len(keys)
    in_scope = [b for b in keys if b != target]
    if not in_scope:
        raise ValueError("aux_only scope has no auxiliary risks")
    return in_scope, len(keys) - 1


def orm_loss(
    risks: dict[str, float], scope: str, target: str
) -> tuple[float, dict[str, float]]:
    """Variance of per-behavior risks and its exact partials.

    ``all_behaviors``: population variance (1/|B|) sum_b (L_b - mean)^2.
    ``aux_only``: (1/(|B|-1)) sum over non-target behaviors, with the mean
    still taken over all behaviors.  Partials account for each risk's
    effect through the shared mean.
    """
    in_scope, denom = _variance_scope(risks, scope, target)
    keys = list(risks)
    values = np.array([risks[b] for b in keys], dtype=np.float64)
    if np.ptp(values) == 0.0:  # equal risks: exactly zero, no rounding residue
        return 0.0, {b: 0.0 for b in keys}
    mean = values.mean()
    dev = {b: risks[b] - mean for b in keys}
    value = sum(dev[b] ** 2 for b in in_scope) / denom
    scope_dev_sum = sum(dev[b] for b in in_scope)
    n = len(keys)
    partials = {
        b: (2.0 / denom) * ((dev[b] if b in in_scope else 0.0) - scope_dev_sum / n)
        for b in keys
    }
    return float(value), partials


def _risk_multiplier_grad(margins: np.ndarray) -> tuple[float, np.ndarray]:
    """d(risk)/dw at w=1 for scores scaled by a scalar w, plus d(that)/dm.

    risk(w) = mean softplus(-w * m); at w = 1 the derivative is
    -(1/n) sum m * sigmoid(-m).
    """
    n = len(margins)
    s = expit(-margins)
    g = float(-np.sum(margins * s) / n)
    # d/dm of each term -m*s/n, with ds/dm = -s(1-s)
    dg_dm = -(s - margins * s * (1.0 - s)) / n
    return g, dg_dm


def irm_penalty(
    embs: dict[str, tuple[np.ndarray, np.ndarray]],
    triplets: dict[str, np.ndarray],
    behaviors: list[str] | None = None,
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Sum over behaviors of squared d(risk)/dw at the frozen multiplier w=1.

    ``embs[b]`` is the (P, Q) pair for behavior b.  Returns the penalty and
    its gradients with respect to every P and Q.
    """
    if behaviors is None:
        behaviors = list(embs)
    value = 0.0
    d_P = {b: np.zeros_like(embs[b][0]) for b in embs}
    d_Q = {b: np.zeros_like(embs[b][1]) for b in embs}
    for b in behaviors:
        P, Q = embs[b]
        tr = _check_triplets(triplets[b])
        m = _margins(P, Q, tr)
        g, dg_dm = _risk_multiplier_grad(m)
        value += g * g
        _scatter_margin_grads(d_P[b], d_Q[b], P, Q, tr, 2.0 * g * dg_dm)
    return value, d_P, d_Q


def irm_v1_penalty(embs, triplets, behaviors=None):
    """Risk-gradient alignment penalty used inside the full objective.

    The score multiplier w is conceptually trainable here but evaluated at
    w = 1; with a parameter-free dot-product predictor the numerics match
    `irm_v2_penalty` exactly.
    """
    return irm_penalty(embs, triplets, behaviors)


def irm_v2_penalty(embs, triplets, behaviors=None):
    """Same penalty with the multiplier permanently frozen at w = 1
    (encoder-only minimization)."""
    return irm_penalty(embs, triplets, behaviors)


# ----------------------------------------------------------------------
# Fusion and the main objective
# ----------------------------------------------------------------------

def fuse(
    P_by_behavior: dict[str, np.ndarray], Q_by_behavior: dict[str, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Equal-weight mean of the behavior-specific embeddings."""
    if not P_by_behavior:
        raise ValueError("fusion needs at least one behavior")
    z_u = np.mean(list(P_by_behavior.values()), axis=0)
    z_i = np.mean(list(Q_by_behavior.values()), axis=0)
    return z_u, z_i


def main_loss(
    fused_user: np.ndarray,
    fused_item: np.ndarray,
    triplets: np.ndarray,
    state: ModelState,
) -> tuple[float, float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """BPR over fused target scores plus L2 on the base tables.

    Returns (loss, reg_term, d_fused_user, d_fused_item, d_user_emb,
    d_item_emb); the L2 gradient acts on the base parameters directly, not
    through propagation.
    """
    bpr, d_zu, d_zi = bpr_loss(fused_user, fused_item, triplets)
    lam = state.hp.lambda_reg
    reg = lam * (
        float(np.sum(state.user_emb**2)) + float(np.sum(state.item_emb**2))
    )
    d_user = 2.0 * lam * state.user_emb
    d_item = 2.0 * lam * state.item_emb
    return bpr + reg, reg, d_zu, d_zi, d_user, d_item


# ----------------------------------------------------------------------
# Full forward/backward pass
# ----------------------------------------------------------------------

class ObjectiveError(Exception):
    """A constituent of the total objective failed; the message names it."""


def total_loss(
    state: ModelState,
    graphs: dict[str, BehaviorGraph],
    batch: TripletBatch,
    batch_users: np.ndarray,
    target: str,
) -> tuple[LossBreakdown, GradientBuffer]:
    """One full forward and backward pass over a batch.

    Propagates every behavior graph, computes per-behavior BPR risks, the
    alignment loss over batch users, the configured invariance penalty, and
    the fused main loss, then pushes every gradient path back through the
    propagation adjoint into one buffer shaped like the base tables.
    """
    hp = state.hp
    behaviors = list(graphs)
    if target not in behaviors:
        raise ObjectiveError(f"target behavior {target!r} has no graph")

    embs = {
        b: propagate(graphs[b], state.user_emb, state.item_emb, hp.num_layers)
        for b in behaviors
    }

    sampled = [
        b
        for b in behaviors
        if b in batch.per_behavior and len(batch.per_behavior[b]) > 0
    ]
    trips: dict[str, np.ndarray] = {}
    margins: dict[str, np.ndarray] = {}
    risks: dict[str, float] = {}
    for b in sampled:
        tr = _check_triplets(batch.per_behavior[b])
        trips[b] = tr
        m = _margins(embs[b].P, embs[b].Q, tr)
        margins[b] = m
        risks[b] = float(np.mean(np.logaddexp(0.0, -m)))

    # alignment term
    aux = [b for b in behaviors if b != target]
    if aux and len(batch_users) >= 2:
        rrm_val, rrm_grads = rrm_loss(
            {b: embs[b].P for b in behaviors},
            target,
            batch_users,
            hp.tau,
            hp.rrm_denominator,
        )
    else:
        if aux:
            log.warning("alignment loss skipped: batch has fewer than 2 users")
        else:
            log.debug("alignment loss skipped: no auxiliary behaviors")
        rrm_val, rrm_grads = 0.0, {}

    # invariance term
    orm_val = 0.0
    orm_partials: dict[str, float] = {}
    irm_scope: list[str] = []
    irm_coef: dict[str, np.ndarray] = {}
    if hp.irm_variant == "rex":
        if len(risks) >= 2 and (
            hp.orm_scope == "all_behaviors" or any(b != target for b in risks)
        ):
            orm_val, orm_partials = orm_loss(risks, hp.orm_scope, target)
        else:
            log.debug("invariance penalty skipped: fewer than 2 sampled risks")
    else:
        scope = sampled if hp.orm_scope == "all_behaviors" else [
            b for b in sampled if b != target
        ]
        if scope:
            for b in scope:
                g, dg_dm = _risk_multiplier_grad(margins[b])
                orm_val += g * g
                irm_coef[b] = 2.0 * g * dg_dm
            irm_scope = scope
        else:
            log.debug("invariance penalty skipped: no sampled behaviors in scope")

    # fused main term
    z_u, z_i = fuse({b: embs[b].P for b in behaviors}, {b: embs[b].Q for b in behaviors})
    if len(batch.main) == 0:
        raise ObjectiveError("main loss: empty target triplet list")
    try:
        main_val, reg_val, d_zu, d_zi, d_user_reg, d_item_reg = main_loss(
            z_u, z_i, batch.main, state
        )
    except ValueError as exc:
        raise ObjectiveError(f"main loss: {exc}") from exc

    total = main_val + hp.lambda_rrm * rrm_val + hp.lambda_orm * orm_val

    # ---- backward ----
    d_P = {b: np.zeros_like(embs[b].P) for b in behaviors}
    d_Q = {b: np.zeros_like(embs[b].Q) for b in behaviors}

    n_beh = len(behaviors)
    for b in behaviors:
        d_P[b] += d_zu / n_beh
        d_Q[b] += d_zi / n_beh

    if hp.lambda_rrm != 0.0 and rrm_grads:
        for b, g in rrm_grads.items():
            d_P[b] += hp.lambda_rrm * g

    if hp.lambda_orm != 0.0:
        if hp.irm_variant == "rex":
            for b, partial in orm_partials.items():
                coef = hp.lambda_orm * partial * (-expit(-margins[b]) / len(margins[b]))
                _scatter_margin_grads(
                    d_P[b], d_Q[b], embs[b].P, embs[b].Q, trips[b], coef
                )
        else:
            for b in irm_scope:
                _scatter_margin_grads(
                    d_P[b], d_Q[b], embs[b].P, embs[b].Q, trips[b],
                    hp.lambda_orm * irm_coef[b],
                )

    d_user = np.zeros_like(state.user_emb)
    d_item = np.zeros_like(state.item_emb)
    for b in behaviors:
        du, di = propagate_adjoint(graphs[b], d_P[b], d_Q[b], hp.num_layers)
        d_user += du
        d_item += di
    d_user += d_user_reg
    d_item += d_item_reg

    breakdown = LossBreakdown(
        bpr=risks, rrm=rrm_val, orm=orm_val, main=main_val, reg=reg_val, total=total
    )
    return breakdown, GradientBuffer(d_user=d_user, d_item=d_item)
