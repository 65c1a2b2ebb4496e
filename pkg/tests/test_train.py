"""Optimizer behavior, the two-stage schedule, and map inference."""

import copy

import numpy as np
import pytest

from hsiseg import cae
from hsiseg.autodiff import Tensor
from hsiseg.clustering import kmeans
from hsiseg.cube import HsiCube, extract_patches
from hsiseg.errors import ParameterError, ShapeError, StateError
from hsiseg.metrics import contingency, nmi
from hsiseg.synth import generate_cube
from hsiseg.train import (AdamState, TrainConfig, adam_step, embed_all,
                          run_training, segment, train_stage1, train_stage2)
from hsiseg.cube import normalize

DESK = dict(bands=8, clusters=3, kernels_per_layer=4, kernel_depth=3, embedding_dim=6)


def desk_setup(seed=0, height=12, width=12, classes=3):
    cube = normalize(generate_cube(width, height, 8, classes, seed=seed,
                                   noise=0.03, layout="stripes"))
    config = cae.CaeConfig(**DESK)
    params = cae.build_cae(config, np.random.default_rng(seed))
    batch = extract_patches(cube)
    return cube, config, params, batch


def clone_params(params):
    out = cae.CaeParams(params.config,
                        {k: Tensor(v.data.copy(), requires_grad=True)
                         for k, v in params.weights.items()})
    if params.centers is not None:
        out.centers = Tensor(params.centers.data.copy(), requires_grad=True)
    return out


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        before = p.data.copy()
        adam_step([("p", p)], {"p": np.zeros(3)}, AdamState())
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_magnitude_is_lr(self):
        """Bias correction makes the first update lr * g / (|g| + eps)."""
        for g in (0.5, -3.0, 1e-4):
            p = Tensor(np.array([1.0]), requires_grad=True)
            state = AdamState(lr=1e-3)
            adam_step([("p", p)], {"p": np.array([g])}, state)
            expected = 1.0 - 1e-3 * g / (abs(g) + state.eps)
            assert p.data[0] == pytest.approx(expected, abs=1e-12)

    def test_identical_grads_identical_updates(self):
        a = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([1.0]), requires_grad=True)
        g = np.array([0.7])
        adam_step([("a", a), ("b", b)], {"a": g, "b": g.copy()}, AdamState())
        assert a.data[0] == b.data[0]

    def test_first_step_direction_is_sign(self):
        p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        state = AdamState(lr=1e-2)
        adam_step([("p", p)], {"p": np.array([5.0, -0.001])}, state)
        np.testing.assert_allclose(p.data, [-1e-2, 1e-2], rtol=1e-4)

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ShapeError):
            adam_step([("p", p)], {"p": np.zeros(4)}, AdamState())

    def test_moments_enroll_lazily(self):
        """Parameters appearing mid-run (the centers) start with zero moments."""
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = AdamState()
        adam_step([("p", p)], {"p": np.array([1.0])}, state)
        q = Tensor(np.array([2.0]), requires_grad=True)
        adam_step([("p", p), ("q", q)], {"p": np.zeros(1), "q": np.zeros(1)}, state)
        assert "q" in state.m and state.m["q"][0] == 0.0
        assert q.data[0] == 2.0


class TestStage1:
    def test_infinite_epsilon_stops_after_two_epochs(self):
        _, _, params, batch = desk_setup()
        cfg = TrainConfig(batch_size=32, epsilon=np.inf, stage1_max_epochs=50, lr=1e-3)
        losses = train_stage1(params, batch, cfg, AdamState(lr=cfg.lr),
                              np.random.default_rng(0), np.random.default_rng(1))
        assert len(losses) == 2

    def test_loss_trace_deterministic(self):
        losses = []
        for _ in range(2):
            _, _, params, batch = desk_setup(seed=5)
            cfg = TrainConfig(batch_size=32, epsilon=0.0, stage1_max_epochs=4, lr=1e-3)
            trace = train_stage1(params, batch, cfg, AdamState(lr=cfg.lr),
                                 np.random.default_rng(2), np.random.default_rng(3))
            losses.append(trace)
        assert losses[0] == losses[1]

    def test_empty_data_rejected(self):
        _, _, params, _ = desk_setup()
        cfg = TrainConfig(batch_size=8)
        with pytest.raises(ParameterError):
            train_stage1(params, np.zeros((0, 5, 5, 8)), cfg, AdamState(),
                         np.random.default_rng(0), np.random.default_rng(1))

    def test_desk_scale_convergence(self):
        """On a 16x16x8 three-class scene the loss must drop 10x."""
        cube = normalize(generate_cube(16, 16, 8, 3, seed=7, noise=0.03,
                                       layout="stripes"))
        config = cae.CaeConfig(**{**DESK, "kernels_per_layer": 8})
        params = cae.build_cae(config, np.random.default_rng(7))
        batch = extract_patches(cube)
        cfg = TrainConfig(batch_size=64, epsilon=1e-6, stage1_max_epochs=60, lr=1e-3)
        losses = train_stage1(params, batch, cfg, AdamState(lr=cfg.lr),
                              np.random.default_rng(8), np.random.default_rng(9))
        assert np.all(np.isfinite(losses))
        assert losses[-1] <= 0.1 * losses[0]


class TestStage2:
    def _pretrained(self, seed=3, epochs=12):
        cube, config, params, batch = desk_setup(seed=seed)
        cfg = TrainConfig(batch_size=32, epsilon=0.0, stage1_max_epochs=epochs,
                          stage2_epochs=5, lr=1e-3)
        adam = AdamState(lr=cfg.lr)
        shuffle_rng = np.random.default_rng(10)
        dropout_rng = np.random.default_rng(11)
        train_stage1(params, batch, cfg, adam, shuffle_rng, dropout_rng)
        return cube, params, batch, cfg, adam, shuffle_rng, dropout_rng

    def test_requires_centers(self):
        _, params, batch, cfg, adam, s_rng, d_rng = self._pretrained()
        with pytest.raises(StateError):
            train_stage2(params, batch, cfg, adam, s_rng, d_rng)

    def test_epoch_cap(self):
        _, params, batch, cfg, adam, s_rng, d_rng = self._pretrained()
        latents = embed_all(params, batch.patches)
        params.centers = Tensor(cae.init_centers(latents, 3, np.random.default_rng(1)),
                                requires_grad=True)
        trace = train_stage2(params, batch, cfg, adam, s_rng, d_rng)
        assert len(trace) == cfg.stage2_epochs <= 25

    def test_alpha_zero_equals_stage1_continuation(self):
        """With alpha = 0 the stage-2 weight trajectory must reproduce a
        plain stage-1 continuation bit for bit (same rng streams, and the
        Adam state carries over)."""
        _, params, batch, cfg, adam, s_rng, d_rng = self._pretrained()
        latents = embed_all(params, batch.patches)
        centers = cae.init_centers(latents, 3, np.random.default_rng(2))

        cont_params = clone_params(params)
        cont_adam = copy.deepcopy(adam)
        cont_s = copy.deepcopy(s_rng)
        cont_d = copy.deepcopy(d_rng)

        params.centers = Tensor(centers.copy(), requires_grad=True)
        cfg2 = TrainConfig(batch_size=cfg.batch_size, epsilon=0.0,
                           stage1_max_epochs=3, stage2_epochs=3, alpha=0.0, lr=cfg.lr)
        train_stage2(params, batch, cfg2, adam, s_rng, d_rng)
        train_stage1(cont_params, batch, cfg2, cont_adam, cont_s, cont_d)

        for (name, a), (_, b) in zip(params.weight_items(), cont_params.weight_items()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)
        np.testing.assert_array_equal(params.centers.data, centers)

    def test_does_not_undo_clustering(self):
        """Paired oracle: stage-2 NMI within 0.05 of k-means on embeddings."""
        cube, params, batch, cfg, adam, s_rng, d_rng = self._pretrained(seed=9, epochs=30)
        latents = embed_all(params, batch.patches)
        _, km_labels = kmeans(latents, 3, seed=0)
        truth = cube.labels.ravel()
        km_nmi = nmi(contingency(km_labels, truth))

        params.centers = Tensor(cae.init_centers(latents, 3, np.random.default_rng(3)),
                                requires_grad=True)
        cfg2 = TrainConfig(batch_size=32, stage2_epochs=10, lr=1e-3)
        train_stage2(params, batch, cfg2, adam, s_rng, d_rng)
        seg = segment(params, cube)
        s2_nmi = nmi(contingency(seg.labels.ravel(), truth))
        assert s2_nmi >= km_nmi - 0.05


class TestEmbedAll:
    def test_chunking_matches_single_pass(self):
        _, _, params, batch = desk_setup()
        whole = embed_all(params, batch.patches)
        chunked = embed_all(params, batch.patches, chunk=7)
        np.testing.assert_array_equal(whole, chunked)


class TestSegment:
    def _trained(self):
        cube = normalize(generate_cube(10, 11, 8, 3, seed=4, noise=0.03,
                                       layout="stripes"))
        config = cae.CaeConfig(**DESK)
        cfg = TrainConfig(batch_size=32, epsilon=0.0, stage1_max_epochs=6,
                          stage2_epochs=2, lr=1e-3)
        params, _ = run_training(cube, config, cfg, seed=6)
        return cube, params

    def test_untrained_rejected(self):
        cube, _, params, _ = desk_setup()
        with pytest.raises(StateError):
            segment(params, cube)

    def test_map_matches_cube_dimensions(self):
        cube, params = self._trained()
        seg = segment(params, cube)
        assert seg.labels.shape == (cube.height, cube.width)
        assert seg.labels.min() >= 1

    def test_band_mismatch_rejected(self):
        cube, params = self._trained()
        other = HsiCube(values=np.zeros((6, 6, 9)))
        with pytest.raises(ShapeError):
            segment(params, other)

    def test_identical_patches_identical_labels(self):
        _, params = self._trained()
        values = np.zeros((7, 7, 8))
        values[:, :, 2] = 0.7  # uniform scene: every patch identical
        seg = segment(params, HsiCube(values=values))
        assert len(np.unique(seg.labels)) == 1

    def test_pure_function(self):
        cube, params = self._trained()
        a = segment(params, cube).labels
        b = segment(params, cube).labels
        np.testing.assert_array_equal(a, b)

    def test_background_flagged_but_labeled(self):
        cube, params = self._trained()
        labeled = HsiCube(values=cube.values, labels=np.zeros((cube.height, cube.width),
                                                              dtype=int))
        labeled.labels[0, 0] = 1
        seg = segment(params, labeled)
        assert seg.background is not None
        assert seg.background.sum() == cube.height * cube.width - 1
        assert seg.labels.min() >= 1  # background still gets a cluster


class TestRunTraining:
    def test_report_contents_and_determinism(self):
        cube = normalize(generate_cube(10, 10, 8, 3, seed=12, noise=0.03,
                                       layout="stripes"))
        config = cae.CaeConfig(**DESK)
        cfg = TrainConfig(batch_size=32, epsilon=0.0, stage1_max_epochs=4,
                          stage2_epochs=3, lr=1e-3)
        params_a, report_a = run_training(cube, config, cfg, seed=21)
        params_b, report_b = run_training(cube, config, cfg, seed=21)

        assert report_a.seed == 21
        assert report_a.stage1_epochs == len(report_a.stage1_losses) == 4
        assert len(report_a.stage2_losses) == 3
        assert report_a.stage1_losses == report_b.stage1_losses
        assert report_a.stage2_losses == report_b.stage2_losses
        for (name, a), (_, b) in zip(params_a.trainable_items(),
                                     params_b.trainable_items()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)

    def test_background_pixels_excluded_from_training(self):
        cube = normalize(generate_cube(10, 10, 8, 3, seed=13, noise=0.03,
                                       layout="stripes"))
        cube.labels[:5, :] = 0  # mask half the scene
        config = cae.CaeConfig(**DESK)
        cfg = TrainConfig(batch_size=16, epsilon=0.0, stage1_max_epochs=2,
                          stage2_epochs=1, lr=1e-3)
        params, _ = run_training(cube, config, cfg, seed=3)
        seg = segment(params, cube)
        assert seg.labels.shape == (10, 10)  # background still mapped
        assert seg.background[:5, :].all()
