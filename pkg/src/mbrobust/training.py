"""Epoch/batch training loop: uniform triplet sampling, Adam updates, early
stopping on validation HR@10, and a per-epoch log."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import seeds
from .data import DatasetManifest, SplitDataset
from .graph import build_graph
from .losses import (
    GradientBuffer,
    Hyperparameters,
    ModelState,
    TripletBatch,
    total_loss,
)

log = logging.getLogger(__name__)


class NonFiniteGradientError(Exception):
    """A gradient tensor contained NaN or infinity; the message names it."""


@dataclass
class OptimizerState:
    m_user: np.ndarray
    v_user: np.ndarray
    m_item: np.ndarray
    v_item: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(state: ModelState) -> OptimizerState:
    return OptimizerState(
        m_user=np.zeros_like(state.user_emb),
        v_user=np.zeros_like(state.user_emb),
        m_item=np.zeros_like(state.item_emb),
        v_item=np.zeros_like(state.item_emb),
    )


def adam_step(
    state: ModelState, opt: OptimizerState, grads: GradientBuffer, lr: float
) -> ModelState:
    """Standard bias-corrected Adam update, in place.

    Aborts on non-finite gradients instead of clipping; a blown-up gradient
    means a bug upstream, not something to mask.
    """
    for name, g in (("user embedding", grads.d_user), ("item embedding", grads.d_item)):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite entries in {name} gradient")
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    for m, v, g, theta in (
        (opt.m_user, opt.v_user, grads.d_user, state.user_emb),
        (opt.m_item, opt.v_item, grads.d_item, state.item_emb),
    ):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return state


# ----------------------------------------------------------------------
# Triplet sampling
# ----------------------------------------------------------------------

class TripletSampler:
    """Uniform positive/negative sampler over a training split.

    Positives come from the user's observed edges in a behavior; negatives
    are drawn by rejection (capped at 100 tries) against that behavior's
    observed set, falling back to enumerating the complement.  Users who
    interacted with every item in a behavior are skipped for it and counted.
    """

    REJECTION_CAP = 100

    def __init__(self, split: SplitDataset, behaviors: list[str] | None = None):
        ds = split.train
        self.behaviors = list(behaviors) if behaviors is not None else list(
            ds.manifest.behaviors
        )
        self.target = ds.manifest.target
        self.num_items = ds.manifest.num_items
        self.positives: dict[str, dict[int, np.ndarray]] = {}
        self.observed: dict[str, dict[int, set[int]]] = {}
        for b in self.behaviors:
            by_user: dict[int, list[int]] = {}
            for u, i in ds.edges[b]:
                by_user.setdefault(u, []).append(i)
            self.positives[b] = {
                u: np.asarray(sorted(items), dtype=np.int64)
                for u, items in by_user.items()
            }
            self.observed[b] = {u: set(items) for u, items in by_user.items()}
        self.saturated_skips = 0

    def _draw(self, b: str, u: int, rng: np.random.Generator) -> tuple[int, int] | None:
        pos_items = self.positives[b].get(u)
        if pos_items is None:
            return None
        pos = int(pos_items[rng.integers(len(pos_items))])
        seen = self.observed[b][u]
        for _ in range(self.REJECTION_CAP):
            cand = int(rng.integers(self.num_items))
            if cand not in seen:
                return pos, cand
        complement = sorted(set(range(self.num_items)) - seen)
        if not complement:
            self.saturated_skips += 1
            return None
        return pos, complement[int(rng.integers(len(complement)))]

    def sample(self, batch_users: np.ndarray, rng: np.random.Generator) -> TripletBatch:
        per_behavior: dict[str, list[tuple[int, int, int]]] = {
            b: [] for b in self.behaviors
        }
        main: list[tuple[int, int, int]] = []
        for u in batch_users:
            u = int(u)
            for b in self.behaviors:
                drawn = self._draw(b, u, rng)
                if drawn is not None:
                    per_behavior[b].append((u, drawn[0], drawn[1]))
            drawn = self._draw(self.target, u, rng)
            if drawn is not None:
                main.append((u, drawn[0], drawn[1]))

        def to_array(rows) -> np.ndarray:
            if not rows:
                return np.empty((0, 3), dtype=np.int64)
            return np.asarray(rows, dtype=np.int64)

        return TripletBatch(
            per_behavior={b: to_array(rows) for b, rows in per_behavior.items()},
            main=to_array(main),
        )


def sample_batch(
    split: SplitDataset, batch_users: np.ndarray, rng: np.random.Generator
) -> TripletBatch:
    """One-shot sampling convenience; training keeps a `TripletSampler` around."""
    return TripletSampler(split).sample(batch_users, rng)


# ----------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    hp: Hyperparameters
    eval_every: int = 5
    ks: tuple[int, ...] = (10, 20)

    def __post_init__(self):
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class LogRow:
    epoch: int
    bpr: dict[str, float | None]
    rrm: float
    orm: float
    main: float
    total: float
    val_hr10: float | None
    val_ndcg10: float | None
    seconds: float


def format_log(rows: list[LogRow], behaviors: list[str]) -> str:
    """Render the per-epoch log as CSV (empty cell = not measured)."""
    header = (
        ["epoch"]
        + [f"bpr_{b}" for b in behaviors]
        + ["rrm", "orm", "main", "total", "val_hr10", "val_ndcg10", "seconds"]
    )
    lines = [",".join(header)]

    def cell(v) -> str:
        return "" if v is None else repr(v)

    for r in rows:
        cols = [str(r.epoch)]
        cols += [cell(r.bpr.get(b)) for b in behaviors]
        cols += [cell(r.rrm), cell(r.orm), cell(r.main), cell(r.total)]
        cols += [cell(r.val_hr10), cell(r.val_ndcg10), cell(r.seconds)]
        lines.append(",".join(cols))
    return "\n".join(lines) + "\n"


def train(
    split: SplitDataset, cfg: TrainConfig
) -> tuple[ModelState, list[LogRow]]:
    """Run the full optimization loop and return the best checkpoint.

    Embeddings start from a seeded N(0, 0.1^2) draw.  Each epoch shuffles
    users into batches, resamples triplets, and applies one Adam step per
    batch.  Every ``eval_every`` epochs validation HR@10 is measured; the
    best-scoring parameters are kept and training stops once ``patience``
    evaluations pass without improvement.  Declared behaviors with no
    training edges are dropped with a warning.
    """
    from .evaluation import evaluate  # local import to avoid a module cycle

    ds = split.train
    hp = cfg.hp
    target = ds.manifest.target
    if not ds.edges[target]:
        raise ValueError("target behavior has no training edges")

    active = [b for b in ds.manifest.behaviors if ds.edges[b]]
    for b in ds.manifest.behaviors:
        if b not in active:
            log.warning("behavior %r has no training edges; dropped from training", b)
    if len(active) == 1:
        log.warning("single active behavior: alignment and invariance terms "
                    "are inactive for this run")

    graphs = {b: build_graph(ds, b) for b in active}
    sampler = TripletSampler(split, active)

    rng_init = seeds.spawn(hp.seed, "init")
    state = ModelState(
        user_emb=rng_init.normal(0.0, 0.1, (ds.manifest.num_users, hp.dim)),
        item_emb=rng_init.normal(0.0, 0.1, (ds.manifest.num_items, hp.dim)),
        hp=hp,
    )
    opt = init_optimizer(state)
    rng_sample = seeds.spawn(hp.seed, "sampling")

    has_validation = len(split.validation) > 0
    if not has_validation:
        log.warning("empty validation set: early stopping disabled")
    best_state = state.copy()
    best_hr = -1.0
    evals_since_improvement = 0
    rows: list[LogRow] = []
    num_users = ds.manifest.num_users

    for epoch in range(1, hp.max_epochs + 1):
        tic = time.perf_counter()
        perm = rng_sample.permutation(num_users)
        sums = {"rrm": 0.0, "orm": 0.0, "main": 0.0, "total": 0.0}
        bpr_sums: dict[str, float] = {b: 0.0 for b in active}
        bpr_counts: dict[str, int] = {b: 0 for b in active}
        batches = 0
        for start in range(0, num_users, hp.batch_size):
            batch_users = perm[start : start + hp.batch_size]
            batch = sampler.sample(batch_users, rng_sample)
            if len(batch.main) == 0:
                log.warning("batch with no target triplets skipped")
                continue
            breakdown, grads = total_loss(state, graphs, batch, batch_users, target)
            adam_step(state, opt, grads, hp.lr)
            batches += 1
            sums["rrm"] += breakdown.rrm
            sums["orm"] += breakdown.orm
            sums["main"] += breakdown.main
            sums["total"] += breakdown.total
            for b, v in breakdown.bpr.items():
                bpr_sums[b] += v
                bpr_counts[b] += 1
        if batches == 0:
            raise ValueError("no usable batches in epoch; target edges missing")

        val_hr = val_ndcg = None
        if has_validation and epoch % cfg.eval_every == 0:
            report = evaluate(
                state, split, ks=(10,), pairs=split.validation, graphs=graphs
            )
            val_hr = report.hr[10]
            val_ndcg = report.ndcg[10]
            if val_hr > best_hr:
                best_hr = val_hr
                best_state = state.copy()
                evals_since_improvement = 0
            else:
                evals_since_improvement += 1

        rows.append(
            LogRow(
                epoch=epoch,
                bpr={
                    b: (bpr_sums[b] / bpr_counts[b] if bpr_counts[b] else None)
                    for b in active
                },
                rrm=sums["rrm"] / batches,
                orm=sums["orm"] / batches,
                main=sums["main"] / batches,
                total=sums["total"] / batches,
                val_hr10=val_hr,
                val_ndcg10=val_ndcg,
                seconds=time.perf_counter() - tic,
            )
        )
        if has_validation and evals_since_improvement >= hp.patience:
            log.info("early stop at epoch %d (best validation HR@10 %.4f)", epoch, best_hr)
            break

    final = best_state if best_hr >= 0.0 else state
    return final, rows


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def manifest_hash(manifest: DatasetManifest) -> str:
    payload = json.dumps(
        {
            "behaviors": list(manifest.behaviors),
            "target": manifest.target,
            "num_users": manifest.num_users,
            "num_items": manifest.num_items,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def save_checkpoint(state: ModelState, manifest: DatasetManifest, path: str) -> None:
    """Write a JSON checkpoint: manifest hash, hyperparameters, and both
    embedding tables as row-major nested lists (floats round-trip exactly)."""
    hp = state.hp
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "manifest_hash": manifest_hash(manifest),
        "behaviors": list(manifest.behaviors),
        "target": manifest.target,
        "num_users": manifest.num_users,
        "num_items": manifest.num_items,
        "hyperparameters": {
            k: getattr(hp, k) for k in hp.__dataclass_fields__
        },
        "user_emb": state.user_emb.tolist(),
        "item_emb": state.item_emb.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[ModelState, dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    hp = Hyperparameters(**payload["hyperparameters"])
    state = ModelState(
        user_emb=np.asarray(payload["user_emb"], dtype=np.float64),
        item_emb=np.asarray(payload["item_emb"], dtype=np.float64),
        hp=hp,
    )
    meta = {k: payload[k] for k in (
        "manifest_hash", "behaviors", "target", "num_users", "num_items"
    )}
    return state, meta
