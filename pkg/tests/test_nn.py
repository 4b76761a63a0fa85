import numpy as np
import pytest

from wpcnsched.nn import (
    Normalizer,
    Head,
    MlpSpec,
    MlpModel,
    AdamState,
    TrainConfig,
    init_model,
    forward,
    backward,
    train,
    train_loop,
    joint_mse_outage,
    hidden_sizes,
    save_model,
    load_model,
    DivergenceError,
)


def small_spec(n_in=4, n_power=3, n_time=4, hidden=8, time_scale=1e-4):
    heads = [
        Head(kind="power", size=n_power, scale=np.full(n_power, 0.01)),
        Head(kind="time", size=n_time, scale=np.full(n_time, time_scale)),
    ]
    return MlpSpec(layer_sizes=[n_in, hidden, n_power + n_time], heads=heads)


class TestInit:
    def test_uniform_bound(self):
        spec = small_spec(n_in=10, hidden=16)
        model = init_model(spec, np.random.default_rng(0))
        a = np.sqrt(3.0 / 10.0)
        w = model.weights[0]
        assert np.all(np.abs(w) <= a)
        assert np.max(np.abs(w)) > 0.8 * a

    def test_variance_scaling(self):
        fan_in = 50
        spec = MlpSpec(
            layer_sizes=[fan_in, 2000, 1],
            heads=[Head(kind="raw", size=1, scale=np.ones(1))],
        )
        model = init_model(spec, np.random.default_rng(1))
        var = np.var(model.weights[0])
        assert var == pytest.approx(1.0 / fan_in, rel=0.02)

    def test_biases_zero_and_seed_reproducible(self):
        spec = small_spec()
        a = init_model(spec, np.random.default_rng(5))
        b = init_model(spec, np.random.default_rng(5))
        assert all(np.all(x == 0) for x in a.biases)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)


class TestForward:
    def test_zero_weight_heads(self):
        spec = small_spec(time_scale=2e-4)
        model = init_model(spec, np.random.default_rng(0))
        for w in model.weights:
            w[:] = 0.0
        power, time = forward(model, np.ones(4))
        assert np.allclose(power, 0.005)              # P_max/2
        assert np.allclose(time, 2e-4 * np.log(2.0))  # scale * softplus(0)

    def test_ranges(self):
        spec = small_spec()
        model = init_model(spec, np.random.default_rng(3))
        x = np.abs(np.random.default_rng(4).normal(size=(50, 4))) + 0.1
        power, time = forward(model, x)
        assert np.all((power > 0) & (power < 0.01))
        assert np.all(time > 0)
        assert np.all(np.isfinite(power)) and np.all(np.isfinite(time))

    def test_shape_mismatch(self):
        model = init_model(small_spec(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            forward(model, np.ones(5))


class TestBackprop:
    def test_matches_finite_differences(self):
        # both head kinds and both loss terms, on a <=500 parameter net
        rng = np.random.default_rng(12)
        n = 3
        spec = small_spec(n_in=4, n_power=n, n_time=n + 1, hidden=8, time_scale=1e-4)
        model = init_model(spec, np.random.default_rng(7))
        assert model.n_params <= 500

        x = np.abs(rng.normal(size=(6, 4))) + 0.5
        gamma = 10.0 ** rng.uniform(4, 6, size=(6, n))
        label_p = rng.uniform(0.002, 0.01, size=(6, n))
        label_t = rng.uniform(1e-5, 1e-4, size=(6, n + 1))
        p_norm = Normalizer.fit(label_p)
        t_norm = Normalizer.fit(label_t)

        def loss_value():
            power, time = forward(model, x)
            loss, _, _ = joint_mse_outage(
                power, time, label_p, label_t, gamma, 50.0, 1e6, p_norm, t_norm, 1.0, 1.0
            )
            return loss

        cache = {}
        power, time = forward(model, x, cache)
        loss, g_p, g_t = joint_mse_outage(
            power, time, label_p, label_t, gamma, 50.0, 1e6, p_norm, t_norm, 1.0, 1.0
        )
        wg, bg = backward(model, cache, [g_p, g_t])
        analytic = wg + bg

        h = 1e-6
        worst = 0.0
        for p_arr, g_arr in zip(model.weights + model.biases, analytic):
            flat_p = p_arr.ravel()
            flat_g = g_arr.ravel()
            for k in range(flat_p.size):
                orig = flat_p[k]
                flat_p[k] = orig + h
                up = loss_value()
                flat_p[k] = orig - h
                dn = loss_value()
                flat_p[k] = orig
                fd = (up - dn) / (2 * h)
                denom = max(abs(fd), abs(flat_g[k]), 1e-10)
                worst = max(worst, abs(fd - flat_g[k]) / denom)
        assert worst <= 1e-4

    def test_input_gradient(self):
        model = init_model(small_spec(), np.random.default_rng(2))
        x = np.abs(np.random.default_rng(3).normal(size=(2, 4))) + 0.5
        cache = {}
        power, time = forward(model, x, cache)
        g = [np.ones_like(power), np.zeros_like(time)]
        _, _, gin = backward(model, cache, g, want_input_grad=True)
        # finite difference through the normalized input
        z = model.normalizer.transform(x)
        h = 1e-7

        def loss_at(zp):
            a = zp
            for l in range(len(model.weights) - 1):
                a = np.maximum(a @ model.weights[l] + model.biases[l], 0.0)
            out = a @ model.weights[-1] + model.biases[-1]
            return np.sum(model.spec.heads[0].activate(out[:, :3]))

        for k in range(z.size):
            zp = z.copy().ravel()
            zp[k] += h
            up = loss_at(zp.reshape(z.shape))
            zp[k] -= 2 * h
            dn = loss_at(zp.reshape(z.shape))
            fd = (up - dn) / (2 * h)
            assert fd == pytest.approx(gin.ravel()[k], rel=1e-4, abs=1e-12)


class TestLoss:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.n = 4
        self.gamma = 10.0 ** rng.uniform(4, 6, size=(5, self.n))
        self.label_p = rng.uniform(0.002, 0.01, size=(5, self.n))
        # times long enough that the demand is met at the labels
        self.label_t = np.concatenate(
            [
                rng.uniform(1e-5, 1e-4, size=(5, 1)),
                1.05 * 50.0 / (1e6 * np.log2(1.0 + self.label_p * self.gamma)),
            ],
            axis=1,
        )
        self.p_norm = Normalizer.fit(self.label_p)
        self.t_norm = Normalizer.fit(self.label_t)

    def loss(self, power, time, w_mse=1.0, w_outage=1.0):
        return joint_mse_outage(
            power, time, self.label_p, self.label_t, self.gamma,
            50.0, 1e6, self.p_norm, self.t_norm, w_mse, w_outage,
        )

    def test_zero_at_label(self):
        loss, g_p, g_t = self.loss(self.label_p, self.label_t)
        assert loss == 0.0
        assert np.allclose(g_p, 0.0) and np.allclose(g_t, 0.0)

    def test_outage_weight_linear(self):
        power = self.label_p * 0.3
        time = self.label_t * 0.5
        l1, _, _ = self.loss(power, time, w_mse=0.0, w_outage=1.0)
        l2, _, _ = self.loss(power, time, w_mse=0.0, w_outage=2.0)
        assert l1 > 0
        assert l2 == pytest.approx(2 * l1, rel=1e-12)

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(10)
        power = rng.uniform(0.002, 0.01, size=(5, self.n))
        time = self.label_t * rng.uniform(0.4, 1.6, size=self.label_t.shape)
        loss, g_p, g_t = self.loss(power, time)
        h = 1e-9
        for arr, grad in ((power, g_p), (time, g_t)):
            for k in range(arr.size):
                orig = arr.ravel()[k]
                arr.ravel()[k] = orig + orig * h
                up, _, _ = self.loss(power, time)
                arr.ravel()[k] = orig - orig * h
                dn, _, _ = self.loss(power, time)
                arr.ravel()[k] = orig
                fd = (up - dn) / (2 * orig * h)
                assert fd == pytest.approx(grad.ravel()[k], rel=1e-4, abs=1e-9)


class TestAdam:
    def test_single_step_reduces_convex_quadratic(self):
        w = np.array([2.0])
        adam = AdamState([w], lr=1e-4, weight_decay=0.0)
        before = 0.5 * w[0] ** 2
        adam.step([w], [w.copy()])
        after = 0.5 * w[0] ** 2
        assert after < before


class TestNormalizer:
    def test_round_trip_linear(self):
        x = np.random.default_rng(0).normal(size=(100, 3)) * 5 + 2
        norm = Normalizer.fit(x)
        assert np.allclose(norm.inverse(norm.transform(x)), x, rtol=1e-12, atol=1e-12)

    def test_round_trip_log(self):
        x = 10.0 ** np.random.default_rng(1).uniform(-8, 2, size=(100, 4))
        norm = Normalizer.fit(x, log_mask=np.ones(4, dtype=bool))
        assert np.allclose(norm.inverse(norm.transform(x)), x, rtol=1e-12)

    def test_constant_channel_guard(self):
        x = np.ones((50, 2))
        norm = Normalizer.fit(x)
        assert np.all(np.isfinite(norm.transform(x)))


def _linear_task(n_samples, rng):
    x = rng.normal(size=(n_samples, 2))
    y = (0.7 * x[:, 0] - 0.3 * x[:, 1] + 0.1)[:, None]
    return x, {"y": y}


def _mse_loss(heads, extras):
    (pred,) = heads
    err = pred - extras["y"]
    loss = float(np.mean(err ** 2))
    return loss, [2.0 * err / err.size]


class TestTrain:
    def make_model(self, seed=0):
        spec = MlpSpec(layer_sizes=[2, 32, 1], heads=[Head(kind="raw", size=1, scale=np.ones(1))])
        return init_model(spec, np.random.default_rng(seed))

    def test_learns_linear_map(self):
        rng = np.random.default_rng(42)
        train_set = _linear_task(4000, rng)
        val_set = _linear_task(500, rng)
        model = self.make_model()
        cfg = TrainConfig(lr=1e-3, seed=1)
        report = train(model, train_set, val_set, _mse_loss, cfg)
        assert min(report.val_losses) < 1e-3
        assert report.stop_epoch <= 100

    def test_constant_labels_early_stop(self):
        rng = np.random.default_rng(43)
        x = rng.normal(size=(64, 2))
        const = (x[:, :1] * 0.0) + 1.0
        train_set = (x, {"y": const})
        val_set = (x[:32], {"y": const[:32]})
        model = self.make_model()
        report = train(model, train_set, val_set, _mse_loss, TrainConfig(seed=2))
        assert report.early_stopped
        assert report.stop_epoch <= 10

    def test_deterministic(self):
        rng = np.random.default_rng(44)
        train_set = _linear_task(300, rng)
        val_set = _linear_task(100, rng)
        reports = []
        finals = []
        for _ in range(2):
            model = self.make_model(seed=3)
            reports.append(train(model, train_set, val_set, _mse_loss, TrainConfig(max_epochs=8, seed=5)))
            finals.append(model.copy_state())
        assert reports[0].train_losses == reports[1].train_losses
        assert reports[0].val_losses == reports[1].val_losses
        for wa, wb in zip(finals[0][0], finals[1][0]):
            assert np.array_equal(wa, wb)

    def test_divergence_detected(self):
        rng = np.random.default_rng(45)
        train_set = _linear_task(200, rng)
        val_set = _linear_task(50, rng)
        model = self.make_model()

        def bad_loss(heads, extras):
            return float("nan"), [np.zeros_like(heads[0])]

        with pytest.raises(DivergenceError):
            train(model, train_set, val_set, bad_loss, TrainConfig(seed=1))


class TestModelFiles:
    def test_bit_exact_round_trip(self, tmp_path):
        spec = MlpSpec(
            layer_sizes=[6, *hidden_sizes(1), 2],
            heads=[Head(kind="power", size=1, scale=np.array([0.01])),
                   Head(kind="time", size=1, scale=np.array([3.7e-5]))],
        )
        norm = Normalizer(
            mean=np.random.default_rng(0).normal(size=6),
            std=np.abs(np.random.default_rng(1).normal(size=6)) + 0.5,
            log10=np.array([True, True, False, True, False, False]),
        )
        model = init_model(spec, np.random.default_rng(9), normalizer=norm)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        for a, b in zip(model.weights, loaded.weights):
            assert np.array_equal(a, b)
        for a, b in zip(model.biases, loaded.biases):
            assert np.array_equal(a, b)
        assert np.array_equal(model.normalizer.mean, loaded.normalizer.mean)
        assert np.array_equal(model.normalizer.std, loaded.normalizer.std)
        assert np.array_equal(model.normalizer.log10, loaded.normalizer.log10)
        assert loaded.spec.to_dict() == model.spec.to_dict()
        x = np.abs(np.random.default_rng(2).normal(size=(4, 6))) + 0.1
        for ya, yb in zip(forward(model, x), forward(loaded, x)):
            assert np.array_equal(ya, yb)
