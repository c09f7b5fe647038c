import numpy as np
import pytest

from dvl.dataset import WindowSample, make_windows, stack_windows
from dvl.geometry import solve_velocity
from neural.checkpoint import read_header
from neural.networks import LiBeamsNet, MissBeamNet
from pipeline.estimators import (
    MIN_BEAM_SCALE,
    BeamScaling,
    Estimator,
    ModelMismatch,
    average_predict,
    libeamsnet_forward,
    load_estimator,
    missbeamnet_forward,
    predict_missing,
    reconstruct_batch,
    reconstruct_full_beams,
    save_estimator,
)
from tests.conftest import make_section
from utils.errors import ShapeMismatch
from utils.seeding import make_rng

MASK_34 = (False, False, True, True)


def _sample(past, current, mask=MASK_34):
    past = np.asarray(past, dtype=float)
    current = np.asarray(current, dtype=float)
    missing = np.array(mask)
    return WindowSample(
        section="s",
        times=np.arange(past.shape[0] + 1, dtype=float),
        past=past,
        current_available=current[~missing],
        missing_mask=tuple(mask),
        target_missing=current[missing],
        target_all=current,
        v_true_t=np.zeros(3),
    )


def _estimator(kind, hidden=6, mask=MASK_34, window=3):
    rng = make_rng(0)
    if kind == "libeamsnet":
        net = LiBeamsNet.build(LiBeamsNet.layer_specs(window=window, n_available=2), rng)
    else:
        net = MissBeamNet.build(MissBeamNet.layer_specs(n_available=2, hidden_size=hidden), rng)
    return Estimator(tag=kind, missing_mask=mask, window=window, network=net)


class TestAverage:
    def test_mean_of_past(self):
        past = np.zeros((3, 4))
        past[:, 2] = [1.0, 2.0, 3.0]
        past[:, 3] = [0.93, 0.95, 0.94]
        pred = average_predict(_sample(past, np.zeros(4)))
        assert pred[0] == 2.0
        assert pred[1] == pytest.approx(0.94, abs=1e-15)

    def test_constant_past(self):
        pred = average_predict(_sample(np.full((3, 4), 0.37), np.zeros(4)))
        np.testing.assert_allclose(pred, [0.37, 0.37], rtol=1e-15)

    def test_translation_equivariance(self, rng):
        past = rng.normal(size=(3, 4))
        base = average_predict(_sample(past, np.zeros(4)))
        shifted = average_predict(_sample(past + 0.5, np.zeros(4)))
        np.testing.assert_allclose(shifted, base + 0.5, atol=1e-15)


class TestNeuralForward:
    def test_libeamsnet_output_shape(self, rng):
        out = libeamsnet_forward(_estimator("libeamsnet"), _sample(rng.normal(size=(3, 4)), rng.normal(size=4)))
        assert out.shape == (4,)

    def test_libeamsnet_feature_count(self):
        assert _estimator("libeamsnet").network.feature_count == 12

    def test_libeamsnet_zero_network(self, rng):
        est = _estimator("libeamsnet")
        for p in est.network.params.values():
            p[...] = 0.0
        est.network.params["out.b"][:] = [0.1, -0.2, 0.3, 0.4]
        out = libeamsnet_forward(est, _sample(rng.normal(size=(3, 4)), rng.normal(size=4)))
        np.testing.assert_array_equal(out, [0.1, -0.2, 0.3, 0.4])

    def test_missbeamnet_output_dimension(self, rng):
        out = missbeamnet_forward(_estimator("missbeamnet"), _sample(rng.normal(size=(3, 4)), rng.normal(size=4)))
        assert out.shape == (2,)

    def test_missbeamnet_dense_width(self):
        specs = MissBeamNet.layer_specs(n_available=2, hidden_size=500)
        assert specs[-1].in_features == 502

    def test_missbeamnet_zero_recurrence(self, rng):
        est = _estimator("missbeamnet", hidden=6)
        for key in ("lstm.W", "lstm.U", "lstm.b"):
            est.network.params[key][...] = 0.0
        sample = _sample(rng.normal(size=(3, 4)), rng.normal(size=4))
        w, b = est.network.params["out.W"], est.network.params["out.b"]
        expected = w[:, 6:] @ sample.current_available + b
        np.testing.assert_allclose(missbeamnet_forward(est, sample), expected, atol=1e-15)

    def test_inference_is_deterministic(self, rng):
        est = _estimator("libeamsnet")
        sample = _sample(rng.normal(size=(3, 4)), rng.normal(size=4))
        a = libeamsnet_forward(est, sample)
        b = libeamsnet_forward(est, sample)
        assert a.tobytes() == b.tobytes()

    def test_forward_leaves_training_state_alone(self, rng):
        est = _estimator("libeamsnet")
        net = est.network
        net.train()
        out = net.forward(rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 2)), rng=rng)
        libeamsnet_forward(est, _sample(rng.normal(size=(3, 4)), rng.normal(size=4)))
        assert net.state.training
        assert set(net.backward(np.zeros_like(out))) == set(net.params)

    def test_wrong_kind(self, rng):
        with pytest.raises(ModelMismatch):
            libeamsnet_forward(_estimator("missbeamnet"), _sample(rng.normal(size=(3, 4)), rng.normal(size=4)))

    def test_wrong_mask(self, rng):
        sample = _sample(rng.normal(size=(3, 4)), rng.normal(size=4), mask=(True, False, False, True))
        with pytest.raises(ModelMismatch):
            missbeamnet_forward(_estimator("missbeamnet"), sample)

    def test_wrong_window(self, rng):
        with pytest.raises(ModelMismatch):
            libeamsnet_forward(_estimator("libeamsnet"), _sample(rng.normal(size=(4, 4)), rng.normal(size=4)))


class TestReconstruct:
    def test_slot_filling(self):
        sample = _sample(np.zeros((3, 4)), [0.1, 0.2, 9.0, 9.0])
        np.testing.assert_array_equal(reconstruct_full_beams(sample, [0.3, 0.4]), [0.1, 0.2, 0.3, 0.4])

    def test_four_vector_keeps_measurements(self):
        sample = _sample(np.zeros((3, 4)), [0.1, 0.2, 9.0, 9.0])
        out = reconstruct_full_beams(sample, [7.0, 8.0, 0.3, 0.4])
        np.testing.assert_array_equal(out, [0.1, 0.2, 0.3, 0.4])

    def test_oracle_reduction(self, geom, rng):
        sample = _sample(np.zeros((3, 4)), rng.normal(size=4))
        beams = reconstruct_full_beams(sample, sample.target_missing)
        np.testing.assert_array_equal(solve_velocity(geom, beams), solve_velocity(geom, sample.target_all))

    def test_bad_prediction_length(self):
        with pytest.raises(ShapeMismatch):
            reconstruct_full_beams(_sample(np.zeros((3, 4)), np.zeros(4)), [0.1, 0.2, 0.3])

    def test_batch_matches_single(self, geom, rng):
        section = make_section("s", rng.uniform(-1, 1, size=(12, 3)), geom)
        samples = make_windows(section, 3, MASK_34)
        batch = stack_windows(samples)
        est = _estimator("missbeamnet")
        preds = predict_missing(est, batch)
        full = reconstruct_batch(batch, preds)
        for row, sample in zip(full, samples):
            single = reconstruct_full_beams(sample, missbeamnet_forward(est, sample))
            np.testing.assert_allclose(row, single, atol=1e-14)

    def test_average_batch(self, geom, rng):
        section = make_section("s", rng.uniform(-1, 1, size=(12, 3)), geom)
        samples = make_windows(section, 3, MASK_34)
        est = Estimator(tag="average", missing_mask=MASK_34, window=3)
        preds = predict_missing(est, stack_windows(samples))
        np.testing.assert_allclose(preds, [average_predict(s) for s in samples], atol=1e-15)


class TestScaling:
    @pytest.mark.parametrize("kind", ["libeamsnet", "missbeamnet"])
    def test_zero_network_is_the_average(self, geom, rng, kind):
        samples = make_windows(make_section("s", rng.uniform(-1, 1, size=(12, 3)), geom), 3, MASK_34)
        batch = stack_windows(samples)
        est = _estimator(kind)
        for p in est.network.params.values():
            p[...] = 0.0
        est.scaling = BeamScaling.fit(batch)
        np.testing.assert_allclose(
            predict_missing(est, batch), [average_predict(s) for s in samples], atol=1e-15
        )

    def test_outputs_invert_targets(self, rng):
        scaling = BeamScaling(scale=[0.1, 0.2, 0.3, 0.4])
        past, targets = rng.normal(size=(5, 3, 4)), rng.normal(size=(5, 2))
        columns = np.array(MASK_34)
        back = scaling.outputs(past, scaling.targets(past, targets, columns), columns)
        np.testing.assert_allclose(back, targets, atol=1e-14)

    def test_constant_data_uses_floor(self, geom):
        section = make_section("c", np.tile([1.0, 0.0, 0.05], (10, 1)), geom)
        scaling = BeamScaling.fit(stack_windows(make_windows(section, 3, MASK_34)))
        np.testing.assert_array_equal(scaling.scale, np.full(4, MIN_BEAM_SCALE))

    @pytest.mark.parametrize("scale", [[0.1, 0.2, 0.3], [0.1, 0.0, 0.3, 0.4], [0.1, np.inf, 0.3, 0.4]])
    def test_bad_scale(self, scale):
        with pytest.raises(ShapeMismatch):
            BeamScaling(scale=scale)

    def test_checkpoint_keeps_scaling(self, tmp_path, rng):
        est = _estimator("missbeamnet")
        est.scaling = BeamScaling(scale=[0.011, 0.012, 0.013, 0.014])
        path = save_estimator(est, tmp_path / "mb.ckpt")
        assert read_header(path).normalization == {"beam_scale": [0.011, 0.012, 0.013, 0.014]}

        loaded = load_estimator(path)
        np.testing.assert_array_equal(loaded.scaling.scale, est.scaling.scale)
        sample = _sample(rng.normal(size=(3, 4)), rng.normal(size=4))
        np.testing.assert_array_equal(missbeamnet_forward(loaded, sample), missbeamnet_forward(est, sample))

    def test_unknown_normalization_entry(self):
        with pytest.raises(ModelMismatch):
            BeamScaling.from_header({"input_mean": [0.0, 0.0, 0.0, 0.0]})


class TestPersistence:
    def test_round_trip(self, tmp_path, rng):
        est = _estimator("libeamsnet")
        path = save_estimator(est, tmp_path / "lb.ckpt")
        loaded = load_estimator(path, expected_tag="libeamsnet", missing_mask=MASK_34, window=3)
        sample = _sample(rng.normal(size=(3, 4)), rng.normal(size=4))
        np.testing.assert_array_equal(libeamsnet_forward(loaded, sample), libeamsnet_forward(est, sample))

    def test_mask_mismatch(self, tmp_path):
        path = save_estimator(_estimator("missbeamnet"), tmp_path / "mb.ckpt")
        with pytest.raises(ModelMismatch):
            load_estimator(path, missing_mask=(True, True, False, False))

    def test_tag_mismatch(self, tmp_path):
        path = save_estimator(_estimator("missbeamnet"), tmp_path / "mb.ckpt")
        with pytest.raises(ModelMismatch):
            load_estimator(path, expected_tag="libeamsnet")

    def test_estimator_needs_network(self):
        with pytest.raises(ValueError):
            Estimator(tag="libeamsnet", missing_mask=MASK_34, window=3)
