"""Trainer tests: optimizer update rules against hand-computed values,
schedule points, dataset plumbing, and the training-loop contracts
(determinism, teacher handling, clean-finetune tail)."""

import math

import numpy as np
import pytest

from distillaug import distill, smallnet, synthetic
from distillaug.distill import KDConfig
from distillaug.policy import AugmentSpace, RandAugmentPolicy
from distillaug.trainer import (
    Cosine,
    Dataset,
    ExponentialEvery,
    RMSProp,
    SGDMomentum,
    TrainConfig,
    evaluate,
    init_optimizer,
    lr_at,
    step,
    train,
)


def scalar_params():
    """A real ModelParams whose entries we can treat as independent scalars."""
    p = smallnet.init_params(0, (8, 8, 1), 3)
    return p.with_arrays({k: np.ones_like(v) for k, v in p.arrays().items()})


def ones_like_grads(params, value=1.0):
    return params.with_arrays(
        {k: np.full_like(v, value) for k, v in params.arrays().items()}
    )


class TestOptimizers:
    def test_rmsprop_two_hand_steps(self):
        # theta=1, g=1, lr=0.1, decay=0.9, momentum=0.9, eps=1e-8, wd=0:
        # s=0.1, u=0.1/sqrt(0.1+1e-8), theta1=0.68377225; second identical
        # gradient gives s=0.19, u=0.9u+0.1/sqrt(0.19+1e-8), theta2=0.16975155
        params = scalar_params()
        spec = RMSProp(weight_decay=0.0)
        state = init_optimizer(spec, params)
        grads = ones_like_grads(params)
        params, state = step(state, params, grads, 0.1)
        assert params.fc2_b[0] == pytest.approx(0.6837722497945492, abs=1e-12)
        params, state = step(state, params, grads, 0.1)
        assert params.fc2_b[0] == pytest.approx(0.1697515467763376, abs=1e-12)

    def test_rmsprop_weight_decay_moves_zero_gradient(self):
        # wd=1e-5 folds into g, so theta=1 with g=0 still decays: 0.99000500
        params = scalar_params()
        state = init_optimizer(RMSProp(weight_decay=1e-5), params)
        params, _ = step(state, params, ones_like_grads(params, 0.0), 0.1)
        assert params.conv1_w[0, 0, 0, 0] == pytest.approx(0.9900049962531222, abs=1e-12)

    def test_sgd_momentum_two_hand_steps(self):
        # v1=1 -> 0.9; v2=0.9+1=1.9 -> 0.9-0.19=0.71
        params = scalar_params()
        state = init_optimizer(SGDMomentum(momentum=0.9), params)
        grads = ones_like_grads(params)
        params, state = step(state, params, grads, 0.1)
        assert params.fc1_b[0] == pytest.approx(0.9, abs=1e-15)
        params, state = step(state, params, grads, 0.1)
        assert params.fc1_b[0] == pytest.approx(0.71, abs=1e-15)

    def test_accumulators_start_at_zero(self):
        params = scalar_params()
        st = init_optimizer(RMSProp(), params)
        assert all(np.all(v == 0) for v in st.square_avg.values())
        assert all(np.all(v == 0) for v in st.update_avg.values())
        st = init_optimizer(SGDMomentum(), params)
        assert all(np.all(v == 0) for v in st.velocity.values())

    def test_unknown_spec_rejected(self):
        with pytest.raises(TypeError):
            init_optimizer(object(), scalar_params())

    def test_grad_shape_mismatch_rejected(self):
        a = smallnet.init_params(0, (8, 8, 1), 3)
        b = smallnet.init_params(0, (8, 8, 1), 4)
        state = init_optimizer(RMSProp(), a)
        with pytest.raises(ValueError):
            step(state, a, b, 0.1)


class TestSchedules:
    def test_staircase_points(self):
        sched = ExponentialEvery(0.256, 0.97, 2.4)
        assert lr_at(sched, 0) == 0.256
        assert lr_at(sched, 2.3999) == 0.256
        assert lr_at(sched, 2.4) == pytest.approx(0.24832, abs=1e-15)
        assert lr_at(sched, 4.8) == pytest.approx(0.2408704, abs=1e-15)

    def test_staircase_ignores_total(self):
        sched = ExponentialEvery(0.1, 0.5, 1.0)
        assert lr_at(sched, 3, total_epochs=5) == lr_at(sched, 3, total_epochs=50)

    def test_cosine_points(self):
        sched = Cosine(0.1)
        assert lr_at(sched, 0, 10) == pytest.approx(0.1)
        assert lr_at(sched, 5, 10) == pytest.approx(0.05)
        assert lr_at(sched, 10, 10) == pytest.approx(0.0, abs=1e-17)

    def test_cosine_needs_total(self):
        with pytest.raises(ValueError):
            lr_at(Cosine(0.1), 1)

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            lr_at(Cosine(0.1), -1, 10)

    def test_invalid_base_lr(self):
        with pytest.raises(ValueError):
            ExponentialEvery(base_lr=0.0)
        with pytest.raises(ValueError):
            Cosine(base_lr=-1.0)


class TestDataset:
    def test_length_mismatch_rejected(self):
        imgs = synthetic.make_dataset(4, seed=0, size=8).images
        with pytest.raises(ValueError):
            Dataset(imgs, np.array([0, 1]))

    def test_negative_labels_rejected(self):
        imgs = synthetic.make_dataset(2, seed=0, size=8).images
        with pytest.raises(ValueError):
            Dataset(imgs, np.array([0, -1]))

    def test_subset_selects(self):
        ds = synthetic.make_dataset(6, seed=1, size=8)
        sub = ds.subset([4, 0])
        assert len(sub) == 2
        assert sub.labels.tolist() == [ds.labels[4], ds.labels[0]]
        assert np.array_equal(sub.images[0].pixels, ds.images[4].pixels)


def tiny_setup(n=20, classes=10, seed=3):
    data = synthetic.make_dataset(n, seed=seed, size=8, split="train")
    test = synthetic.make_dataset(n, seed=seed + 1, size=8, split="test")
    init = smallnet.init_params(seed, (8, 8, 1), classes)
    return data, test, init


def tiny_config(**kw):
    base = dict(
        epochs=1,
        batch_size=5,
        schedule=ExponentialEvery(0.001, 0.97, 2.4),
        kd=KDConfig(lam=0.0, k=3),
        policy=RandAugmentPolicy(n=1, m=2, space=AugmentSpace.DESTRUCTION),
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_bit_identical_repeat(self):
        data, test, init = tiny_setup()
        cfg = tiny_config(epochs=2)
        p1, h1 = train(None, init, data, test, cfg)
        p2, h2 = train(None, init, data, test, cfg)
        for name in smallnet.PARAM_FIELDS:
            assert np.array_equal(getattr(p1, name), getattr(p2, name)), name
        assert h1.records == h2.records

    def test_teacher_pairing_enforced(self):
        data, test, init = tiny_setup()
        with pytest.raises(ValueError, match="teacher"):
            train(init, init, data, test, tiny_config(kd=KDConfig(lam=0.0, k=3)))
        with pytest.raises(ValueError, match="teacher"):
            train(None, init, data, test, tiny_config(kd=KDConfig(lam=1.0, k=3)))

    def test_teacher_shape_checks(self):
        data, test, init = tiny_setup()
        other = smallnet.init_params(0, (8, 8, 1), 4)
        with pytest.raises(ValueError, match="class count"):
            train(other, init, data, test, tiny_config(kd=KDConfig(lam=1.0, k=3)))

    def test_label_range_checked(self):
        data, test, _ = tiny_setup()
        small = smallnet.init_params(0, (8, 8, 1), 3)
        with pytest.raises(ValueError, match="label"):
            train(None, small, data, test, tiny_config())

    def test_self_distillation_allowed(self):
        data, test, init = tiny_setup(n=10)
        _, hist = train(init, init, data, test, tiny_config(kd=KDConfig(lam=0.5, k=3)))
        assert len(hist.records) == 1

    def test_teacher_params_not_mutated(self):
        data, test, init = tiny_setup(n=10)
        teacher = smallnet.init_params(9, (8, 8, 1), 10)
        before = {k: v.copy() for k, v in teacher.arrays().items()}
        train(teacher, init, data, test, tiny_config(kd=KDConfig(lam=1.0, k=3)))
        for name, arr in teacher.arrays().items():
            assert np.array_equal(arr, before[name]), name

    def test_teacher_sees_student_input(self):
        data, test, init = tiny_setup(n=10)
        teacher = smallnet.init_params(9, (8, 8, 1), 10)
        seen = []

        def hook(epoch, idx, student_x, teacher_x):
            seen.append(teacher_x is student_x)

        train(teacher, init, data, test,
              tiny_config(kd=KDConfig(lam=1.0, k=3)), on_batch=hook)
        assert seen and all(seen)

    def test_no_teacher_input_without_kd(self):
        data, test, init = tiny_setup(n=10)
        seen = []
        train(None, init, data, test, tiny_config(),
              on_batch=lambda e, i, s, t: seen.append(t))
        assert seen and all(t is None for t in seen)

    def test_first_epoch_loss_is_initial_cross_entropy(self):
        # single batch + identity policy: the recorded mean loss is the plain
        # CE of the initial params on the clean images, recomputed here
        data, test, init = tiny_setup(n=10)
        cfg = tiny_config(batch_size=10,
                          policy=RandAugmentPolicy(n=1, m=0, space=AugmentSpace.DESTRUCTION))
        _, hist = train(None, init, data, test, cfg)
        x = np.stack([im.pixels for im in data.images]).astype(np.float64) / 255.0
        logits, _ = smallnet.forward(init, x)
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        ce = float(np.mean([-math.log(p[i, data.labels[i]]) for i in range(10)]))
        assert hist.records[0].mean_loss == pytest.approx(ce, abs=1e-12)

    def test_augment_draws_independent_of_batch_order(self):
        # per-sample rng keys on (seed, epoch, index), so the augmented pixels
        # for a given sample match across different batch sizes
        data, test, init = tiny_setup(n=12)

        def collect(batch_size):
            rows = {}

            def hook(epoch, idx, x, t):
                for row, i in zip(x, idx):
                    rows[int(i)] = row.copy()

            train(None, init, data, test,
                  tiny_config(batch_size=batch_size, policy=RandAugmentPolicy(
                      n=2, m=6, space=AugmentSpace.DESTRUCTION)), on_batch=hook)
            return rows

        a, b = collect(3), collect(12)
        assert a.keys() == b.keys()
        for i in a:
            assert np.array_equal(a[i], b[i]), i

    def test_history_records_epochs_and_lr(self):
        data, test, init = tiny_setup(n=10)
        sched = ExponentialEvery(0.001, 0.5, 1.0)
        cfg = tiny_config(epochs=2, clean_finetune_epochs=1, schedule=sched)
        _, hist = train(None, init, data, test, cfg)
        assert [r.epoch for r in hist.records] == [0, 1, 2]
        assert [r.lr for r in hist.records] == [0.001, 0.0005, 0.00025]
        assert hist.test_errors().shape == (3,)

    def test_finetune_prefix_property(self):
        # the staircase schedule ignores the total span, so a run without the
        # tail is a bit-exact prefix of the same run with the tail
        data, test, init = tiny_setup(n=10)
        _, short = train(None, init, data, test, tiny_config(epochs=2))
        _, long = train(None, init, data, test,
                        tiny_config(epochs=2, clean_finetune_epochs=2))
        assert long.records[:2] == short.records

    def test_finetune_uses_clean_images(self):
        data, test, init = tiny_setup(n=10)
        clean = np.stack([im.pixels for im in data.images]).astype(np.float64) / 255.0
        bad = []

        def hook(epoch, idx, x, t):
            if epoch >= 1 and not np.array_equal(x, clean[idx]):
                bad.append(epoch)

        train(None, init, data, test,
              tiny_config(epochs=1, clean_finetune_epochs=2, policy=RandAugmentPolicy(
                  n=1, m=8, space=AugmentSpace.DESTRUCTION)), on_batch=hook)
        assert not bad

    def test_kd_during_finetune_flag(self):
        data, test, init = tiny_setup(n=10)
        teacher = smallnet.init_params(9, (8, 8, 1), 10)
        teacher_active = {}

        def hook(epoch, idx, x, t):
            teacher_active[epoch] = t is not None

        kw = dict(epochs=1, clean_finetune_epochs=1, kd=KDConfig(lam=1.0, k=3))
        train(teacher, init, data, test, tiny_config(**kw), on_batch=hook)
        assert teacher_active == {0: True, 1: False}
        train(teacher, init, data, test,
              tiny_config(kd_during_finetune=True, **kw), on_batch=hook)
        assert teacher_active == {0: True, 1: True}

    def test_empty_dataset_rejected(self):
        data, test, init = tiny_setup(n=4)
        empty = Dataset((), np.array([], dtype=np.int64))
        with pytest.raises(ValueError):
            train(None, init, empty, test, tiny_config())
        with pytest.raises(ValueError):
            train(None, init, data, empty, tiny_config())


class TestEvaluate:
    def test_zero_params_tie_to_class_zero(self):
        # all-zero logits argmax to index 0, so error is the non-zero fraction
        init = smallnet.init_params(0, (8, 8, 1), 10)
        zero = init.with_arrays({k: np.zeros_like(v) for k, v in init.arrays().items()})
        test = synthetic.make_dataset(10, seed=2, size=8, split="test")
        frac_zero = float(np.mean(test.labels == 0))
        assert evaluate(zero, test) == pytest.approx(1.0 - frac_zero)

    def test_empty_rejected(self):
        init = smallnet.init_params(0, (8, 8, 1), 10)
        with pytest.raises(ValueError):
            evaluate(init, Dataset((), np.array([], dtype=np.int64)))


class TestConfigValidation:
    def test_bad_epochs(self):
        with pytest.raises(ValueError):
            tiny_config(epochs=0)

    def test_bad_batch(self):
        with pytest.raises(ValueError):
            tiny_config(batch_size=0)

    def test_bad_finetune(self):
        with pytest.raises(ValueError):
            tiny_config(clean_finetune_epochs=-1)
