"""Contrastive loss values, RMSprop oracle, training loop behavior."""

import math

import numpy as np
import pytest

from gradcheck import finite_difference_check, relative_error
from signet.data import PairSample
from signet.model import build_signet, embed, pair_distance, tiny_architecture
from signet.tensor import Tape, Tensor, backward, use_dtype
from signet.training import (
    ContrastiveLossParams,
    RmspropState,
    TrainConfig,
    TrainHistory,
    contrastive_loss,
    rmsprop_step,
    train,
    write_history,
)


def loss_value(d, y, alpha=0.5, beta=0.5, margin=1.0):
    """Single-pair loss from a prescribed embedding distance."""
    e1 = Tensor(np.array([[float(d)]]))
    e2 = Tensor(np.array([[0.0]]))
    params = ContrastiveLossParams(alpha=alpha, beta=beta, margin=margin)
    return contrastive_loss(e1, e2, np.array([y]), params).item()


class TestContrastiveLossValues:
    """The four pinned cases: substituting D and y into
    alpha*(1-y)*D^2 + beta*y*max(0, m-D)^2."""

    CASES = [
        (0.0, 0, 0.5, 0.5, 1.0, 0.0),   # similar, collapsed
        (1.5, 1, 0.5, 0.5, 1.0, 0.0),   # dissimilar beyond margin
        (0.0, 1, 0.5, 0.5, 1.0, 0.5),   # dissimilar at zero distance
        (2.0, 0, 0.5, 0.5, 1.0, 2.0),   # similar at distance 2
    ]

    @pytest.mark.parametrize("d,y,alpha,beta,margin,expected", CASES)
    def test_exact_in_float64(self, d, y, alpha, beta, margin, expected):
        with use_dtype("float64"):
            assert loss_value(d, y, alpha, beta, margin) == expected

    @pytest.mark.parametrize("d,y,alpha,beta,margin,expected", CASES)
    def test_close_in_float32(self, d, y, alpha, beta, margin, expected):
        assert loss_value(d, y, alpha, beta, margin) == pytest.approx(expected, abs=1e-6)


class TestContrastiveLossProperties:
    def test_non_negative(self):
        rng = np.random.default_rng(40)
        params = ContrastiveLossParams()
        for _ in range(50):
            n = int(rng.integers(1, 8))
            e1 = Tensor(rng.normal(size=(n, 4)).astype(np.float32))
            e2 = Tensor(rng.normal(size=(n, 4)).astype(np.float32))
            y = rng.integers(0, 2, n)
            assert contrastive_loss(e1, e2, y, params).item() >= 0.0

    def test_bad_labels_rejected(self):
        e = Tensor(np.zeros((2, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            contrastive_loss(e, e, np.array([0, 2]), ContrastiveLossParams())

    def test_mean_reduction(self):
        with use_dtype("float64"):
            e1 = Tensor(np.array([[2.0], [0.0]]))
            e2 = Tensor(np.zeros((2, 1)))
            got = contrastive_loss(e1, e2, np.array([0, 0]), ContrastiveLossParams())
            assert got.item() == pytest.approx((0.5 * 4.0 + 0.0) / 2)

    def test_gradient_matches_closed_form(self):
        # dL/dD = 2*alpha*(1-y)*D - 2*beta*y*max(0, m - D), chained through
        # D = |e1 - e2|; checked against both the formula and differences
        with use_dtype("float64"):
            rng = np.random.default_rng(41)
            params = ContrastiveLossParams()
            e1 = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
            e2 = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
            y = rng.integers(0, 2, 6)

            def loss_fn():
                return contrastive_loss(e1, e2, y, params)

            with Tape() as tape:
                loss = loss_fn()
            grads = backward(loss, tape)

            d = np.linalg.norm(e1.data - e2.data, axis=1)
            dl_dd = (2 * params.alpha * (1 - y) * d
                     - 2 * params.beta * y * np.maximum(0.0, params.margin - d))
            expected = dl_dd[:, None] * (e1.data - e2.data) / d[:, None] / 6
            np.testing.assert_allclose(grads[e1], expected, rtol=1e-9)

            worst = finite_difference_check(loss_fn, [e1, e2],
                                            rng, n_coords=30, eps=1e-6)
            assert worst < 1e-6

    def test_margin_validation(self):
        with pytest.raises(ValueError):
            ContrastiveLossParams(margin=0.0)


class TestRmsprop:
    def test_zero_gradient_no_motion(self):
        with use_dtype("float64"):
            p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
            params = {"p": p}
            state = RmspropState(learning_rate=1e-2, weight_decay=0.0,
                                 acc={"p": np.zeros(2)})
            rmsprop_step(params, {p: np.zeros(2)}, state)
            np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_single_step_oracle(self):
        # theta=0, g=1, lr=1e-4, rho=0.9, eps=1e-8, fresh accumulator:
        # acc = 0.1, delta = -1e-4 / (sqrt(0.1) + 1e-8) ~ -3.1623e-4
        with use_dtype("float64"):
            p = Tensor(np.array([0.0]), requires_grad=True)
            state = RmspropState(learning_rate=1e-4, rho=0.9, epsilon=1e-8,
                                 weight_decay=0.0, acc={"p": np.zeros(1)})
            rmsprop_step({"p": p}, {p: np.ones(1)}, state)
            expected = -1e-4 / (math.sqrt(0.1) + 1e-8)
            assert relative_error(float(p.data[0]), expected) < 1e-9
            assert state.acc["p"][0] == pytest.approx(0.1)
            assert abs(float(p.data[0]) - (-3.1623e-4)) < 1e-8

    def test_quadratic_convergence(self):
        with use_dtype("float64"):
            p = Tensor(np.array([1.0]), requires_grad=True)
            state = RmspropState(learning_rate=1e-2, weight_decay=0.0,
                                 acc={"p": np.zeros(1)})
            for _ in range(200):
                rmsprop_step({"p": p}, {p: 2.0 * p.data}, state)
            assert abs(float(p.data[0])) < 0.1

    def test_missing_gradient_names_parameter(self):
        p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
        state = RmspropState(acc={"conv9.weight": np.zeros(2, dtype=np.float32)})
        with pytest.raises(KeyError, match="conv9.weight"):
            rmsprop_step({"conv9.weight": p}, {}, state)

    def test_iteration_order_invariant(self):
        with use_dtype("float64"):
            rng = np.random.default_rng(44)
            values = {n: rng.normal(size=3) for n in ("a", "b", "c")}
            grads_v = {n: rng.normal(size=3) for n in values}

            def run(order):
                params = {n: Tensor(values[n].copy(), requires_grad=True)
                          for n in order}
                state = RmspropState(acc={n: np.zeros(3) for n in order})
                rmsprop_step(params, {p: grads_v[n] for n, p in params.items()},
                             state)
                return {n: p.data for n, p in params.items()}

            fwd = run(("a", "b", "c"))
            rev = run(("c", "b", "a"))
            for n in values:
                np.testing.assert_array_equal(fwd[n], rev[n])

    def test_weight_decay_enters_gradient(self):
        with use_dtype("float64"):
            p = Tensor(np.array([2.0]), requires_grad=True)
            state = RmspropState(learning_rate=1e-3, rho=0.9, epsilon=1e-8,
                                 weight_decay=0.5, acc={"p": np.zeros(1)})
            rmsprop_step({"p": p}, {p: np.zeros(1)}, state)
            g = 0.5 * 2.0
            expected = 2.0 - 1e-3 * g / (math.sqrt(0.1 * g * g) + 1e-8)
            assert float(p.data[0]) == pytest.approx(expected, rel=1e-12)


def make_pairs(n, seed, h=32, w=48):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        pairs.append(PairSample(
            path_a=f"a{i}", path_b=f"b{i}", y=int(i % 2), writer_id="w0",
            pairing_mode="skilled",
            image_a=rng.normal(size=(1, h, w)).astype(np.float32),
            image_b=rng.normal(size=(1, h, w)).astype(np.float32),
        ))
    return pairs


class TestTrainLoop:
    def test_empty_stream_rejected(self):
        model = build_signet(tiny_architecture(), seed=0)
        with pytest.raises(ValueError, match="no training pairs"):
            train(model, [], TrainConfig(epochs=1, batch_size=4, seed=0),
                  ContrastiveLossParams(), RmspropState.for_model(model))

    def test_unmaterialized_pairs_rejected(self):
        model = build_signet(tiny_architecture(), seed=0)
        pair = PairSample("a", "b", 0, "w", "skilled")
        with pytest.raises(ValueError, match="materialized"):
            train(model, [pair], TrainConfig(epochs=1, batch_size=1, seed=0),
                  ContrastiveLossParams(), RmspropState.for_model(model))

    def test_loss_decreases_on_fixed_batch(self):
        model = build_signet(tiny_architecture(), seed=1)
        pairs = make_pairs(16, seed=2)
        state = RmspropState.for_model(model, learning_rate=1e-3)
        _, hist = train(model, pairs,
                        TrainConfig(epochs=5, batch_size=16, seed=3,
                                    lr_decay_epochs=()),
                        ContrastiveLossParams(), state)
        diffs = np.diff(hist.mean_loss)
        assert (diffs >= 0).sum() <= 1, hist.mean_loss

    def test_nan_loss_aborts_with_batch_index(self):
        model = build_signet(tiny_architecture(), seed=1)
        model.params["fc2.weight"].data[0, 0] = np.nan
        pairs = make_pairs(4, seed=4)
        with pytest.raises(RuntimeError, match="batch 0"):
            train(model, pairs, TrainConfig(epochs=1, batch_size=4, seed=0),
                  ContrastiveLossParams(), RmspropState.for_model(model))

    def test_same_seed_bit_identical_checkpoint(self, tmp_path):
        pairs = make_pairs(8, seed=5)

        def run(out):
            model = build_signet(tiny_architecture(), seed=7)
            state = RmspropState.for_model(model)
            train(model, pairs,
                  TrainConfig(epochs=2, batch_size=4, seed=7, lr_decay_epochs=()),
                  ContrastiveLossParams(), state, out_dir=str(out),
                  checkpoint_meta={"preprocess.std": "1.0"})
            return (out / "checkpoint.sgnt").read_bytes()

        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir()
        b.mkdir()
        assert run(a) == run(b)

    def test_lr_decay_applied_at_epoch(self):
        model = build_signet(tiny_architecture(), seed=1)
        pairs = make_pairs(4, seed=6)
        state = RmspropState.for_model(model, learning_rate=1e-3)
        train(model, pairs,
              TrainConfig(epochs=2, batch_size=4, seed=0, lr_decay_epochs=(1,),
                          lr_decay_factor=0.1),
              ContrastiveLossParams(), state)
        assert state.learning_rate == pytest.approx(1e-4)

    def test_history_file_has_no_timestamps(self, tmp_path):
        hist = TrainHistory(mean_loss=[0.5, 0.25], wall_seconds=[1.0, 2.0])
        path = tmp_path / "history.tsv"
        write_history(hist, path)
        text = path.read_text()
        assert text.splitlines()[0] == "epoch\tmean_loss"
        assert "1\t0.5" in text and "wall" not in text


class TestGradientDirection:
    """One small-LR step pulls similar pairs together and pushes apart
    dissimilar pairs that are inside the margin."""

    @pytest.mark.parametrize("seed", range(3))
    def test_similar_pair_distance_decreases(self, seed):
        assert self._delta(seed, y=0) < 0

    @pytest.mark.parametrize("seed", range(3))
    def test_dissimilar_pair_distance_increases(self, seed):
        assert self._delta(seed, y=1) > 0

    @staticmethod
    def _delta(seed, y):
        rng = np.random.default_rng(100 + seed)
        model = build_signet(tiny_architecture(), seed=seed)
        a = rng.normal(size=(1, 1, 32, 48)).astype(np.float32)
        b = rng.normal(size=(1, 1, 32, 48)).astype(np.float32)
        d0 = float(pair_distance(embed(model, a), embed(model, b)).data[0])
        assert d0 > 0
        # margin above the current distance keeps the hinge active for y=1
        params = ContrastiveLossParams(margin=2.0 * d0)
        state = RmspropState.for_model(model, learning_rate=1e-4, weight_decay=0.0)
        with Tape() as tape:
            e1 = embed(model, Tensor(a))
            e2 = embed(model, Tensor(b))
            loss = contrastive_loss(e1, e2, np.array([y]), params)
        grads = backward(loss, tape)
        grads = {t: g for t, g in grads.items()}
        full = {}
        for name, p in model.params.items():
            full[p] = grads.get(p, np.zeros_like(p.data))
        rmsprop_step(model.params, full, state)
        d1 = float(pair_distance(embed(model, a), embed(model, b)).data[0])
        return d1 - d0


class TestFullNetworkGradients:
    """Finite differences through the whole twin forward + loss.

    Uses a cut-down stack (every layer kind present) so the sweep over
    sampled coordinates stays fast; dropout masks are re-derived from a
    fixed seed on every closure call so the loss is a deterministic
    function of the parameters.
    """

    @staticmethod
    def _micro_model():
        from signet.model import ArchitectureConfig, LayerSpec, build_signet

        config = ArchitectureConfig(
            input_height=12, input_width=18,
            layers=(
                LayerSpec.conv(4, 3, stride=1, pad=1),
                LayerSpec.lrn(),
                LayerSpec.pool_dropout(2, 2, 0.3),
                LayerSpec.flatten(),
                LayerSpec.dense_dropout(10, 0.5),
                LayerSpec.dense(6),
            ),
            embedding_dim=6,
        )
        return build_signet(config, seed=5)

    def _check(self, n_coords, eps, kink_filter=False):
        from signet.seeding import stable_rng

        model = self._micro_model()
        rng = np.random.default_rng(55)
        dtype = model.params["conv1.weight"].dtype
        a = Tensor(rng.normal(size=(2, 1, 12, 18)).astype(dtype))
        b = Tensor(rng.normal(size=(2, 1, 12, 18)).astype(dtype))
        y = np.array([0, 1])
        params = ContrastiveLossParams()

        def loss_fn():
            e1 = embed(model, a, mode="train", rng=stable_rng(1))
            e2 = embed(model, b, mode="train", rng=stable_rng(2))
            return contrastive_loss(e1, e2, y, params)

        with Tape() as tape:
            loss = loss_fn()
        from signet.tensor import backward as tape_backward

        grads = tape_backward(loss, tape)

        base = loss.item()

        def shifted(flat, i, step):
            saved = flat[i]
            flat[i] = saved + step
            value = loss_fn().item()
            flat[i] = saved
            return value

        worst, kept, total = 0.0, 0, 0
        for t in model.params.values():
            flat = t.data.reshape(-1)
            g = grads[t].reshape(-1)
            for i in rng.choice(flat.size, size=min(n_coords, flat.size),
                                replace=False):
                total += 1
                up = shifted(flat, i, eps)
                down = shifted(flat, i, -eps)
                numeric = (up - down) / (2.0 * eps)
                if kink_filter:
                    # forward/backward quotient asymmetry flags a relu or
                    # pooling kink within the probed interval: skip it
                    fwd = (up - base) / eps
                    bwd = (base - down) / eps
                    if abs(fwd - bwd) > 0.02 * (abs(fwd) + abs(bwd) + 1e-6):
                        continue
                kept += 1
                rel = abs(numeric - g[i]) / (abs(numeric) + abs(g[i]) + 1e-8)
                worst = max(worst, rel)
        assert kept >= 0.7 * total, f"kink filter dropped too much: {kept}/{total}"
        return worst

    def test_float64_mode(self):
        with use_dtype("float64"):
            assert self._check(n_coords=40, eps=1e-5) < 1e-4

    def test_float32_mode(self):
        assert self._check(n_coords=25, eps=2e-3, kink_filter=True) < 1e-2
