import math

import numpy as np
import pytest

from conftest import small_hp
from esnlm.data import TokenSequence
from esnlm.errors import InvalidArgument, NonFiniteError
from esnlm.head import (
    OutputHead,
    init_output_head,
    log_softmax,
    logits,
    loss_and_grads,
    sequence_log_prob,
    token_nlls,
)
from esnlm.optim import OptimizerState, adamw_step
from esnlm.reservoir import build_reservoir, run_batch
from esnlm.train import EpochProgress, train_epoch


def random_head(rng, v, r, n, scale=0.5):
    return OutputHead(
        rng.normal(0, scale, (v, r)), rng.normal(0, scale, (r, n)), rng.normal(0, scale, v)
    )


def central_difference(f, x, eps=1e-3):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


class TestInit:
    def test_bounds(self):
        head = init_output_head(small_hp(output_rank=1, state_size=4, rec_degree=2))
        assert np.all(np.abs(head.a_mat) <= 1.0)
        assert np.all(np.abs(head.b_mat) <= 0.5)
        assert np.all(np.abs(head.bias) <= 1.0)

    def test_shapes_and_dtype(self):
        head = init_output_head(small_hp())
        assert head.a_mat.shape == (16, 4) and head.b_mat.shape == (4, 32) and head.bias.shape == (16,)
        assert all(t.dtype == np.float32 for t in head.tensors().values())

    def test_spread_matches_bound(self):
        hp = small_hp(state_size=400, vocab_size=300, rec_degree=4, output_rank=100)
        head = init_output_head(hp)
        # Uniform(-b, b) has standard deviation b / sqrt(3)
        assert head.a_mat.std() == pytest.approx(0.1 / math.sqrt(3), rel=0.03)
        assert head.b_mat.std() == pytest.approx(0.05 / math.sqrt(3), rel=0.03)

    def test_deterministic(self):
        a, b = init_output_head(small_hp(seed=3)), init_output_head(small_hp(seed=3))
        for x, y in zip(a.tensors().values(), b.tensors().values()):
            np.testing.assert_array_equal(x, y)


class TestLogits:
    def test_zero_a_gives_bias(self):
        head = OutputHead(np.zeros((5, 2)), np.ones((2, 3)), np.arange(5.0))
        np.testing.assert_array_equal(logits(head, np.ones(3)), np.arange(5.0))

    def test_zero_state_gives_bias(self):
        head = random_head(np.random.default_rng(0), 5, 2, 3)
        np.testing.assert_array_equal(logits(head, np.zeros(3)), head.bias)

    def test_dense_oracle(self):
        rng = np.random.default_rng(1)
        head = random_head(rng, 5, 2, 3)
        h = rng.standard_normal(3)
        np.testing.assert_allclose(logits(head, h), (head.a_mat @ head.b_mat) @ h + head.bias, atol=1e-6)

    def test_row_block(self):
        rng = np.random.default_rng(2)
        head = random_head(rng, 5, 2, 3)
        hs = rng.standard_normal((4, 3))
        block = logits(head, hs)
        for k in range(4):
            np.testing.assert_allclose(block[k], logits(head, hs[k]), rtol=1e-12)

    def test_dimension_mismatch(self):
        head = random_head(np.random.default_rng(0), 5, 2, 3)
        with pytest.raises(InvalidArgument):
            logits(head, np.zeros(4))


class TestLoss:
    def test_uniform(self):
        head = OutputHead.zeros(2, 1, 4)
        rep = sequence_log_prob(head, np.random.default_rng(0).standard_normal((3, 4)), [0, 1, 1])
        assert rep.total_nll == pytest.approx(3 * math.log(2), abs=1e-12)
        assert rep.predicted_token_count == 3
        assert rep.nll_per_token == pytest.approx(math.log(2))

    def test_hand_logits(self):
        head = OutputHead(np.zeros((3, 1)), np.zeros((1, 2)), np.array([1.0, 0.0, -1.0]))
        rep = sequence_log_prob(head, np.zeros((1, 2)), [0])
        assert rep.total_nll == pytest.approx(-1 + math.log(math.e + 1 + math.exp(-1)), abs=1e-12)
        assert rep.total_nll == pytest.approx(0.40761, abs=1e-5)

    def test_product_of_probabilities(self):
        rng = np.random.default_rng(3)
        head = random_head(rng, 7, 3, 5)
        hs, t = rng.standard_normal((4, 5)), [1, 6, 0, 3]
        probs = []
        for h, w in zip(hs, t):
            o = (head.a_mat @ head.b_mat) @ h + head.bias
            p = np.exp(o - o.max())
            probs.append(p[w] / p.sum())
        rep = sequence_log_prob(head, hs, t)
        assert math.exp(-rep.total_nll) == pytest.approx(np.prod(probs), rel=1e-6)

    def test_stable_for_huge_logits(self):
        head = OutputHead(np.zeros((3, 1), np.float32), np.zeros((1, 2), np.float32),
                          np.array([1e4, 0, -1e4], np.float32))
        nll = token_nlls(head, np.zeros((1, 2), np.float32), [1])
        assert np.isfinite(nll).all() and nll[0] == pytest.approx(1e4)

    def test_softmax_normalized(self):
        o = np.random.default_rng(0).normal(0, 30, (10, 50))
        np.testing.assert_allclose(np.exp(log_softmax(o)).sum(axis=1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("bad", [dict(states=np.zeros((0, 4)), targets=[]),
                                     dict(states=np.zeros((2, 4)), targets=[0]),
                                     dict(states=np.zeros((1, 4)), targets=[9])])
    def test_invalid(self, bad):
        with pytest.raises(InvalidArgument):
            sequence_log_prob(OutputHead.zeros(3, 1, 4), **bad)


class TestGradients:
    def test_zero_states(self):
        rng = np.random.default_rng(0)
        head = random_head(rng, 6, 2, 4)
        t = np.array([0, 3, 3])
        _, g = loss_and_grads(head, np.zeros((3, 4)), t)
        assert not g.a_mat.any() and not g.b_mat.any()
        p = np.exp(head.bias - head.bias.max())
        p /= p.sum()
        expected = np.mean([p - np.eye(6)[w] for w in t], axis=0)
        np.testing.assert_allclose(g.bias, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        head = random_head(rng, 17, 8, 64, scale=0.3)
        hs = rng.uniform(-1, 1, (5, 64))
        t = rng.integers(0, 17, 5)
        rep, g = loss_and_grads(head, hs, t)

        def loss():
            return sequence_log_prob(head, hs, t).nll_per_token

        for name in ("a_mat", "b_mat", "bias"):
            fd = central_difference(loss, getattr(head, name))
            np.testing.assert_allclose(getattr(g, name), fd, rtol=1e-4, atol=1e-6, err_msg=name)

    def test_loss_matches_sequence_log_prob(self):
        rng = np.random.default_rng(9)
        head = init_output_head(small_hp())
        hs = rng.uniform(-1, 1, (11, 32)).astype(np.float32)
        t = rng.integers(0, 16, 11)
        assert loss_and_grads(head, hs, t)[0].total_nll == sequence_log_prob(head, hs, t).total_nll

    def test_perfect_predictor_limit(self):
        norms = []
        for big in (1.0, 10.0, 40.0):
            head = OutputHead(np.zeros((4, 1)), np.ones((1, 2)), np.array([big, 0, 0, 0]))
            _, g = loss_and_grads(head, np.ones((2, 2)), [0, 0])
            norms.append(sum(np.linalg.norm(x) for x in g))
        assert norms[0] > norms[1] > norms[2] and norms[2] < 1e-15


def scalar_adamw(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * theta)
    return theta


def f64_head(a=0.0, b=0.0, bias=0.0):
    return OutputHead(np.full((1, 1), a), np.full((1, 1), b), np.full(1, bias))


def grads_of(value):
    return {k: np.full(s, value) for k, s in (("a_mat", (1, 1)), ("b_mat", (1, 1)), ("bias", (1,)))}


class TestAdamW:
    def test_first_step_hand_value(self):
        head = f64_head()
        opt = OptimizerState.for_head(head)
        adamw_step(head, opt, grads_of(1.0))
        assert opt.step_count == 1
        for t in head.tensors().values():
            assert t.item() == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)

    def test_zero_gradient_zero_param(self):
        head = f64_head()
        adamw_step(head, OptimizerState.for_head(head), grads_of(0.0))
        assert all(t.item() == 0.0 for t in head.tensors().values())

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(0)
        gs = rng.standard_normal(100)
        head = f64_head(0.3, -0.2, 0.1)
        opt = OptimizerState.for_head(head, weight_decay=0.0)
        for g in gs:
            adamw_step(head, opt, grads_of(g))
        for name, start in (("a_mat", 0.3), ("b_mat", -0.2), ("bias", 0.1)):
            assert abs(head.tensors()[name].item() - scalar_adamw(start, gs)) < 1e-12

    def test_weight_decay_everywhere(self):
        head = f64_head(1.0, 1.0, 1.0)
        opt = OptimizerState.for_head(head, learning_rate=0.1, weight_decay=0.5)
        adamw_step(head, opt, grads_of(0.0))
        # zero gradient: only the decoupled decay acts, theta <- theta (1 - lr wd)
        assert all(t.item() == pytest.approx(0.95) for t in head.tensors().values())

    def test_bias_decay_switch(self):
        head = f64_head(1.0, 1.0, 1.0)
        opt = OptimizerState.for_head(head, learning_rate=0.1, weight_decay=0.5, decay_bias=False)
        adamw_step(head, opt, grads_of(0.0))
        assert head.bias.item() == 1.0 and head.a_mat.item() == pytest.approx(0.95)

    def test_defaults(self):
        opt = OptimizerState.for_head(f64_head())
        assert (opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon, opt.weight_decay) == (
            1e-3, 0.9, 0.999, 1e-8, 1e-2)

    def test_non_finite_gradient_aborts(self):
        head = f64_head(0.5, 0.5, 0.5)
        opt = OptimizerState.for_head(head)
        g = grads_of(1.0)
        g["b_mat"][0, 0] = np.inf
        with pytest.raises(NonFiniteError) as err:
            adamw_step(head, opt, g)
        assert err.value.tensor == "b_mat"
        assert opt.step_count == 0 and head.a_mat.item() == 0.5 and not opt.first_moment["a_mat"].any()

    def test_float32_params_stay_float32(self):
        head = init_output_head(small_hp())
        opt = OptimizerState.for_head(head)
        rng = np.random.default_rng(0)
        _, g = loss_and_grads(head, rng.uniform(-1, 1, (4, 32)), [1, 2, 3, 4])
        adamw_step(head, opt, g)
        assert all(t.dtype == np.float32 for t in head.tensors().values())
        assert all(m.dtype == np.float64 for m in opt.second_moment.values())
        assert all((v >= 0).all() for v in opt.second_moment.values())


def dense_reference_trajectory(head, batches, steps_cfg):
    """Train with W_out = A B materialized; chain rule through the dense matrix."""
    a, b, bias = (head.a_mat.astype(np.float64), head.b_mat.astype(np.float64), head.bias.astype(np.float64))
    params = {"a": a, "b": b, "bias": bias}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(x) for k, x in params.items()}
    lr, b1, b2, eps, wd = steps_cfg
    for t, (h, tgt) in enumerate(batches, 1):
        w = params["a"] @ params["b"]
        o = h @ w.T + params["bias"]
        p = np.exp(o - o.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        g = p.copy()
        g[np.arange(len(tgt)), tgt] -= 1
        g /= len(tgt)
        dw = g.T @ h
        grads = {"a": dw @ params["b"].T, "b": params["a"].T @ dw, "bias": g.sum(0)}
        for k in params:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            upd = (m[k] / (1 - b1**t)) / (np.sqrt(v[k] / (1 - b2**t)) + eps) + wd * params[k]
            params[k] = params[k] - lr * upd
    return params


def test_low_rank_matches_dense_reference():
    rng = np.random.default_rng(4)
    head = random_head(rng, 64, 8, 32, scale=0.2)
    batches = [(rng.uniform(-1, 1, (20, 32)), rng.integers(0, 64, 20)) for _ in range(15)]
    ref = dense_reference_trajectory(head, batches, (1e-2, 0.9, 0.999, 1e-8, 1e-2))
    opt = OptimizerState.for_head(head, learning_rate=1e-2)
    for h, t in batches:
        _, g = loss_and_grads(head, h, t)
        adamw_step(head, opt, g)
    np.testing.assert_allclose(head.a_mat, ref["a"], atol=1e-5)
    np.testing.assert_allclose(head.b_mat, ref["b"], atol=1e-5)
    np.testing.assert_allclose(head.bias, ref["bias"], atol=1e-5)


class TestTrainEpoch:
    def test_identical_sentences_beat_uniform(self):
        hp = small_hp(state_size=64, vocab_size=4, rec_degree=8, output_rank=2)
        res = build_reservoir(hp)
        head = init_output_head(hp)
        opt = OptimizerState.for_head(head, learning_rate=0.05)
        seq = TokenSequence((0, 2, 3, 2, 3, 1))
        batches = [[seq] * 8 for _ in range(40)]
        head, opt, prog = train_epoch(res, head, opt, batches)
        assert prog.batches_done == 40 and prog.predicted_tokens == 40 * 8 * 5
        assert prog.train_nll < math.log(4)

    def test_empty_iterator(self):
        hp = small_hp()
        head = init_output_head(hp)
        with pytest.raises(InvalidArgument):
            train_epoch(build_reservoir(hp), head, OptimizerState.for_head(head), iter([]))

    def test_reservoir_untouched_and_deterministic(self):
        hp = small_hp()
        rng = np.random.default_rng(0)
        batches = [[TokenSequence((0, *rng.integers(2, 16, 6).tolist(), 1)) for _ in range(4)] for _ in range(5)]
        heads = []
        for _ in range(2):
            res = build_reservoir(hp)
            before = res.digest()
            head = init_output_head(hp)
            train_epoch(res, head, OptimizerState.for_head(head), batches)
            assert res.digest() == before
            heads.append(head)
        for x, y in zip(heads[0].tensors().values(), heads[1].tensors().values()):
            np.testing.assert_array_equal(x, y)

    def test_train_nll_is_equal_weight_batch_mean(self):
        prog = EpochProgress([1.0, 2.0, 6.0], predicted_tokens=100)
        assert prog.train_nll == 3.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_reports_batch(self):
        hp = small_hp()
        head = init_output_head(hp)
        head.bias[0] = np.inf
        batch = [TokenSequence((0, 3, 4, 1))]
        with pytest.raises(NonFiniteError) as err:
            train_epoch(build_reservoir(hp), head, OptimizerState.for_head(head), [batch])
        assert err.value.batch_index == 0

    def test_batch_gradient_pools_tokens(self):
        hp = small_hp()
        res = build_reservoir(hp)
        head = init_output_head(hp)
        seqs = [TokenSequence((0, 3, 4, 5, 1)), TokenSequence((0, 9, 1))]
        states, targets = run_batch(res, seqs)
        rep, _ = loss_and_grads(head, states, targets)
        assert rep.predicted_token_count == 4 + 2
