import io
import json
from dataclasses import replace

import numpy as np
import pytest

from spandmd.errors import GenerationError, ValidationError
from spandmd.metrics import relative_l2
from spandmd.snapshot import SpanDims, stack_pairs, write_span
from spandmd.toymodel import (
    LinearSystem,
    ToyModel,
    block_forward,
    fold_layerscale,
    forward_collect,
    forward_with_taps,
    generate_linear_span,
    make_inputs,
    make_toy_model,
    random_linear_system,
    run_remaining_blocks,
)


@pytest.fixture(scope="module")
def model():
    return make_toy_model(seed=42)


@pytest.fixture(scope="module")
def inputs(model):
    return make_inputs(model, 6, seed=7)


class TestForwardWithTaps:
    def test_single_block_records_input(self):
        model = make_toy_model(seed=1, L=1)
        x = make_inputs(model, 3, seed=2)
        span = forward_with_taps(model, x, i=0, p=1)
        assert len(span.states) == 2
        keep = model.kept_indices
        assert np.array_equal(span.states[0], x[:, keep, :])
        assert span.anchor is None  # no kept block before the cut at i=0

    def test_zero_mlp_weights_gives_constant_branch(self):
        base = make_toy_model(seed=3, L=2)
        blocks = tuple(
            replace(b, W_out=np.zeros_like(b.W_out)) for b in base.blocks
        )
        model = ToyModel(blocks=blocks, d=base.d, t=base.t, n_register=base.n_register,
                         seed=base.seed, d_ff=base.d_ff, heads=base.heads)
        x = make_inputs(model, 2, seed=4)
        span = forward_with_taps(model, x, i=1, p=1)
        blk = model.blocks[0]
        expected = (blk.D2 * blk.b_out)[:, None, None]
        assert np.allclose(span.mlp_tap, np.broadcast_to(expected, span.mlp_tap.shape))
        resid = span.states[0] - span.anchor
        assert np.abs(resid - span.mlp_tap).max() <= 1e-12 * np.abs(span.states[0]).max()

    def test_deterministic_span_bytes(self):
        a = make_toy_model(seed=42, d=32, t=21, n_register=4, L=12)
        b = make_toy_model(seed=42, d=32, t=21, n_register=4, L=12)
        xa = make_inputs(a, 4, seed=5)
        xb = make_inputs(b, 4, seed=5)
        buf_a, buf_b = io.BytesIO(), io.BytesIO()
        write_span(forward_with_taps(a, xa, i=4, p=3), buf_a)
        write_span(forward_with_taps(b, xb, i=4, p=3), buf_b)
        assert buf_a.getvalue() == buf_b.getvalue()

    def test_tap_identity(self, model, inputs):
        for i, p in [(1, 1), (4, 3), (9, 3)]:
            span = forward_with_taps(model, inputs, i=i, p=p)
            err = np.abs((span.states[0] - span.anchor) - span.mlp_tap).max()
            assert err <= 1e-5 * np.abs(span.mlp_tap).max()

    def test_register_discipline(self, model, inputs):
        span = forward_with_taps(model, inputs, i=2, p=2)
        assert span.states[0].shape[1] == model.t - model.n_register == 17
        # CLS column survives at index 0: compare against the raw trajectory
        states, _, _ = forward_collect(model, inputs)
        assert np.array_equal(span.states[0][:, 0, :], states[2][:, 0, :])
        # patch columns skip the register block at raw indices 1..4
        assert np.array_equal(span.states[0][:, 1, :], states[2][:, 5, :])

    def test_invalid_span_rejected(self, model, inputs):
        with pytest.raises(ValidationError):
            forward_with_taps(model, inputs, i=10, p=3)


class TestFoldLayerscale:
    def test_unit_scale_is_noop(self, model):
        blk = replace(model.blocks[0],
                      D1=np.ones(model.d), D2=np.ones(model.d))
        folded = fold_layerscale(blk)
        assert np.array_equal(folded.W_out, blk.W_out)
        assert np.array_equal(folded.b_out, blk.b_out)
        assert np.array_equal(folded.Wo, blk.Wo)

    def test_scalar_scale_doubles_projection(self, model):
        blk = replace(model.blocks[0], D2=2.0 * np.ones(model.d))
        folded = fold_layerscale(blk)
        assert np.allclose(folded.W_out, 2.0 * blk.W_out)
        assert np.allclose(folded.b_out, 2.0 * blk.b_out)
        assert np.all(folded.D2 == 1.0)

    def test_forward_equivalence_over_random_inputs(self, model):
        rng = np.random.default_rng(11)
        blk = model.blocks[3]
        folded = fold_layerscale(blk)
        x = rng.standard_normal((model.d, model.t, 100))
        out_raw = block_forward(blk, x)
        out_folded = block_forward(folded, x)
        scale = np.abs(out_raw).max()
        assert np.abs(out_raw - out_folded).max() <= 1e-6 * scale


class TestLinearSpans:
    def test_identity_system(self):
        dims = SpanDims(d=3, t=4, B=2, p=3, i=0, L=3, n_register=0)
        span = generate_linear_span(LinearSystem(K=np.eye(3)), dims, seed=1)
        for s in span.states[1:]:
            assert np.array_equal(s, span.states[0])

    def test_zero_system(self):
        dims = SpanDims(d=3, t=4, B=2, p=2, i=0, L=2, n_register=0)
        span = generate_linear_span(LinearSystem(K=np.zeros((3, 3))), dims, seed=2)
        assert np.all(span.states[1] == 0.0) and np.all(span.states[2] == 0.0)

    def test_fit_and_compare_oracle(self):
        from spandmd.linalg import ridge_solve

        system = random_linear_system(6, rho=0.9, seed=3)
        dims = SpanDims(d=6, t=5, B=10, p=10, i=0, L=10, n_register=0)
        span = generate_linear_span(system, dims, seed=4)
        K = ridge_solve(stack_pairs(span), 0.0)
        assert np.abs(K - system.K).max() <= 1e-8
        x = span.states[0]
        for q in range(1, 11):
            x = np.einsum("ef,ftb->etb", K, x)
            assert relative_l2(x, span.states[q]) <= 1e-7

    def test_spectral_radius_guard(self):
        with pytest.raises(ValidationError):
            LinearSystem(K=1.2 * np.eye(2))

    def test_anchored_reduces_to_full(self):
        dims = SpanDims(d=4, t=3, B=2, p=2, i=0, L=2, n_register=0)
        span = generate_linear_span(random_linear_system(4, seed=5), dims, seed=6)
        assert np.all(span.anchor == 0.0)
        assert np.array_equal(span.mlp_tap, span.states[0])


class TestRunRemainingBlocks:
    def test_true_substitution_is_consistent(self, model, inputs):
        states, _, _ = forward_collect(model, inputs)
        keep = model.kept_indices
        i, p = 4, 3
        out = run_remaining_blocks(model, states[i + p][:, keep, :], i, p, states[i + p])
        truth = states[model.L][:, keep, :]
        assert np.abs(out - truth).max() <= 1e-6 * np.abs(truth).max()

    def test_empty_tail_returns_input(self, model, inputs):
        states, _, _ = forward_collect(model, inputs)
        keep = model.kept_indices
        sub = states[model.L][:, keep, :]
        out = run_remaining_blocks(model, sub, model.L - 2, 2, states[model.L])
        assert np.array_equal(out, sub)

    def test_identity_substitution_smoke(self, model, inputs):
        states, _, _ = forward_collect(model, inputs)
        keep = model.kept_indices
        i, p = 4, 3
        out = run_remaining_blocks(model, states[i][:, keep, :], i, p, states[i + p])
        truth = states[model.L][:, keep, :]
        rel = relative_l2(out, truth)
        assert np.isfinite(rel)

    def test_shape_mismatch_rejected(self, model):
        with pytest.raises(ValidationError):
            run_remaining_blocks(model, np.zeros((model.d, model.t, 2)), 4, 3,
                                 np.zeros((model.d, model.t, 2)))


class TestModelSpec:
    def test_seeded_spec_round_trip(self, model, inputs):
        spec = model.to_spec()
        clone = ToyModel.from_spec(spec)
        span_a = forward_with_taps(model, inputs, i=3, p=2)
        span_b = forward_with_taps(clone, inputs, i=3, p=2)
        for a, b in zip(span_a.states, span_b.states):
            assert np.array_equal(a, b)

    def test_spec_has_no_weights(self, model):
        payload = json.loads(model.to_spec())
        assert set(payload) == {"seed", "d", "t", "L", "n_register", "d_ff", "heads"}

    def test_nonfinite_inputs_raise(self, model):
        bad = np.full((model.d, model.t, 1), np.nan)
        with pytest.raises(GenerationError):
            forward_collect(model, bad)
