"""Adam updates against hand-computed recurrences, sampler contracts, and
the training loop's determinism and bookkeeping."""

import numpy as np
import pytest

from mbrobust.data import split_leave_one_out
from mbrobust.losses import GradientBuffer, Hyperparameters, ModelState
from mbrobust.synthetic import planted_dataset
from mbrobust.training import (
    NonFiniteGradientError,
    TrainConfig,
    TripletSampler,
    adam_step,
    format_log,
    init_optimizer,
    load_checkpoint,
    manifest_hash,
    sample_batch,
    save_checkpoint,
    train,
)

from conftest import make_dataset


def adam_oracle(theta, grads, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Step-by-step reference recurrence for a fixed gradient sequence."""
    theta = theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


def _state(rng, n_u=3, n_i=4, dim=2):
    hp = Hyperparameters(dim=dim)
    return ModelState(rng.normal(size=(n_u, dim)), rng.normal(size=(n_i, dim)), hp)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        rng = np.random.default_rng(0)
        state = _state(rng)
        before_u = state.user_emb.copy()
        opt = init_optimizer(state)
        grads = GradientBuffer(np.zeros_like(state.user_emb),
                               np.zeros_like(state.item_emb))
        adam_step(state, opt, grads, lr=0.1)
        np.testing.assert_array_equal(state.user_emb, before_u)
        assert opt.step_count == 1

    def test_first_step_matches_closed_form(self):
        rng = np.random.default_rng(1)
        state = _state(rng)
        theta0 = state.user_emb.copy()
        g = rng.normal(size=state.user_emb.shape)
        opt = init_optimizer(state)
        adam_step(state, opt, GradientBuffer(g, np.zeros_like(state.item_emb)), 0.01)
        expected = adam_oracle(theta0, [g], lr=0.01, steps=1)
        np.testing.assert_allclose(state.user_emb, expected, atol=1e-15)

    def test_two_identical_steps_match_hand_recurrence(self):
        rng = np.random.default_rng(2)
        state = _state(rng)
        theta0 = state.item_emb.copy()
        g = rng.normal(size=state.item_emb.shape)
        opt = init_optimizer(state)
        buf = GradientBuffer(np.zeros_like(state.user_emb), g)
        adam_step(state, opt, buf, 0.05)
        adam_step(state, opt, buf, 0.05)
        expected = adam_oracle(theta0, [g, g], lr=0.05, steps=2)
        np.testing.assert_allclose(state.item_emb, expected, atol=1e-12)

    def test_non_finite_gradient_names_tensor(self):
        rng = np.random.default_rng(3)
        state = _state(rng)
        opt = init_optimizer(state)
        bad = np.zeros_like(state.item_emb)
        bad[0, 0] = np.nan
        with pytest.raises(NonFiniteGradientError, match="item embedding"):
            adam_step(state, opt, GradientBuffer(np.zeros_like(state.user_emb), bad),
                      0.01)


class TestSampling:
    def test_forced_negative_with_two_items(self):
        ds = make_dataset({"buy": {(0, 0): 1}}, "buy", num_users=1, num_items=2)
        split = split_leave_one_out(ds)
        batch = sample_batch(split, np.array([0]), np.random.default_rng(0))
        assert batch.per_behavior["buy"].tolist() == [[0, 0, 1]]
        assert batch.main.tolist() == [[0, 0, 1]]

    def test_user_without_edges_in_behavior_is_skipped(self):
        ds = make_dataset(
            {"view": {(0, 0): 1}, "cart": {(1, 1): 1},
             "buy": {(0, 0): 1, (1, 1): 1}},
            "buy",
        )
        split = split_leave_one_out(ds)
        batch = sample_batch(split, np.array([0, 1]), np.random.default_rng(0))
        assert batch.per_behavior["view"][:, 0].tolist() == [0]
        assert batch.per_behavior["cart"][:, 0].tolist() == [1]
        assert sorted(batch.per_behavior["buy"][:, 0].tolist()) == [0, 1]

    def test_triplet_membership_rule(self):
        rng = np.random.default_rng(4)
        ds = planted_dataset(seed=5, num_users=12, num_items=12, num_groups=4,
                             target_per_user=3, aux_per_user=4)
        split = split_leave_one_out(ds)
        sampler = TripletSampler(split)
        for _ in range(10):
            batch = sampler.sample(np.arange(12), rng)
            for b, triplets in batch.per_behavior.items():
                for u, pos, neg in triplets:
                    assert (u, pos) in split.train.edges[b]
                    assert (u, neg) not in split.train.edges[b]
            for u, pos, neg in batch.main:
                assert (u, pos) in split.train.edges["buy"]
                assert (u, neg) not in split.train.edges["buy"]

    def test_positive_sampling_is_uniform(self):
        # counts per train positive should sit within 3 sigma of uniform
        items = {(0, i): 1 for i in range(4)}
        ds = make_dataset({"buy": items}, "buy", num_users=1, num_items=8)
        split = split_leave_one_out(ds)
        # fewer than 3 interactions would be held out; 4 -> 2 remain in train
        train_items = sorted(i for _, i in split.train.edges["buy"])
        sampler = TripletSampler(split)
        rng = np.random.default_rng(123)
        n_draws = 400
        counts = {i: 0 for i in train_items}
        for _ in range(n_draws):
            batch = sampler.sample(np.array([0]), rng)
            counts[int(batch.main[0, 1])] += 1
        p = 1.0 / len(train_items)
        sigma = np.sqrt(n_draws * p * (1 - p))
        for i, c in counts.items():
            assert abs(c - n_draws * p) <= 3 * sigma, (i, c)


class TestTrainLoop:
    def _split(self):
        return split_leave_one_out(planted_dataset(seed=3, num_users=16,
                                                   num_items=16, num_groups=4,
                                                   target_per_user=4,
                                                   aux_per_user=5))

    def _hp(self, **kw):
        base = dict(dim=4, num_layers=1, lambda_rrm=0.5, lambda_orm=1.0,
                    lambda_reg=1e-5, lr=0.02, batch_size=16, max_epochs=8,
                    patience=5, seed=0)
        base.update(kw)
        return Hyperparameters(**base)

    def test_zero_epochs_returns_initial_state(self):
        split = self._split()
        state, rows = train(split, TrainConfig(hp=self._hp(max_epochs=0)))
        assert rows == []
        header_only = format_log(rows, list(split.train.manifest.behaviors))
        assert header_only.count("\n") == 1
        rng = np.random.default_rng(np.random.SeedSequence(0, spawn_key=(0,)))
        expected_user = rng.normal(0.0, 0.1, state.user_emb.shape)
        np.testing.assert_array_equal(state.user_emb, expected_user)

    def test_same_seed_bitwise_identical(self):
        split = self._split()
        cfg = TrainConfig(hp=self._hp(), eval_every=2)
        s1, r1 = train(split, cfg)
        s2, r2 = train(split, cfg)
        np.testing.assert_array_equal(s1.user_emb, s2.user_emb)
        np.testing.assert_array_equal(s1.item_emb, s2.item_emb)
        behaviors = list(split.train.manifest.behaviors)

        def strip_seconds(text):
            return ["," .join(line.split(",")[:-1]) for line in text.splitlines()]

        assert strip_seconds(format_log(r1, behaviors)) == strip_seconds(
            format_log(r2, behaviors)
        )

    def test_loss_decreases_with_small_lr(self):
        split = self._split()
        _, rows = train(split, TrainConfig(hp=self._hp(lr=1e-3, max_epochs=5)))
        totals = [r.total for r in rows]
        assert all(b < a for a, b in zip(totals, totals[1:])), totals

    def test_checkpoint_dominates_final_epoch(self):
        split = self._split()
        cfg = TrainConfig(hp=self._hp(max_epochs=20, lr=0.05), eval_every=2)
        state, rows = train(split, cfg)
        from mbrobust.evaluation import evaluate

        best = evaluate(state, split, ks=(10,), pairs=split.validation)
        evals = [r.val_hr10 for r in rows if r.val_hr10 is not None]
        assert best.hr[10] >= evals[-1]

    def test_empty_validation_trains_to_max_epochs(self):
        split = self._split()
        no_val = type(split)(train=split.train, validation=(), test=split.test)
        _, rows = train(no_val, TrainConfig(hp=self._hp(max_epochs=4)))
        assert len(rows) == 4
        assert all(r.val_hr10 is None for r in rows)


class TestCheckpoint:
    def test_roundtrip_is_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        hp = Hyperparameters(dim=3, tau=0.37, lambda_rrm=0.25)
        state = ModelState(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), hp)
        ds = make_dataset({"buy": {(0, 0): 1}}, "buy", num_users=4, num_items=5)
        path = tmp_path / "ckpt.json"
        save_checkpoint(state, ds.manifest, str(path))
        loaded, meta = load_checkpoint(str(path))
        np.testing.assert_array_equal(loaded.user_emb, state.user_emb)
        np.testing.assert_array_equal(loaded.item_emb, state.item_emb)
        assert loaded.hp == hp
        assert meta["manifest_hash"] == manifest_hash(ds.manifest)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 99}')
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(str(path))
