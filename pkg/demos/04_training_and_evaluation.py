"""Training on a planted-preference dataset until it ranks perfectly.

Users and items fall into four matched groups; every target interaction
stays within a user's group.  A model that recovers the group structure
ranks each held-out item inside the top ten, so HR@10 reaches 1.0.
"""

import numpy as np

from mbrobust import Hyperparameters, TrainConfig, evaluate, split_leave_one_out, train
from mbrobust.synthetic import planted_dataset

ds = planted_dataset(seed=7)  # 40 users / 40 items / 4 groups, 2 aux behaviors
split = split_leave_one_out(ds)
print(f"{len(split.test)} test users, {len(split.validation)} validation users")

hp = Hyperparameters(
    dim=16, num_layers=2, tau=0.2,
    lambda_rrm=0.5,     # alignment weight
    lambda_orm=1.0,     # risk-variance weight
    lambda_reg=1e-5, lr=0.03, batch_size=64,
    max_epochs=200, patience=10, seed=1,
)
state, rows = train(split, TrainConfig(hp=hp, eval_every=5))

print("\nepoch  total   bpr_view  bpr_buy   rrm     orm     val_hr10")
for r in rows:
    if r.val_hr10 is not None:
        print(f"{r.epoch:5d}  {r.total:.4f}  {r.bpr['view']:.4f}    "
              f"{r.bpr['buy']:.4f}   {r.rrm:.4f}  {r.orm:.5f}  {r.val_hr10:.3f}")

report = evaluate(state, split, ks=(5, 10, 20))
print("\ntest metrics:")
for k in (5, 10, 20):
    print(f"  HR@{k:<2d} = {report.hr[k]:.3f}   NDCG@{k:<2d} = {report.ndcg[k]:.3f}")

# Determinism: the same seed reproduces the run bit for bit.
state2, _ = train(split, TrainConfig(hp=hp, eval_every=5))
print("\nbit-identical re-run:", np.array_equal(state.user_emb, state2.user_emb))
