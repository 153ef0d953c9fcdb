"""Prompt encoder tests: selective scan vs. a literal recurrence oracle,
causality, branch degeneration, fusion conventions, and gradient flow."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from conftest import TINY
from dualseg.errors import ShapeError
from dualseg.prompts import PromptEncoder, SpatialBranch, TemporalBranch
from dualseg.ssm import SelectiveSSM, selective_scan


def scan_oracle(x, delta, a, b, c, d):
    """Literal per-channel recurrence, one state vector at a time.

    s_t = exp(delta_t * a) * s_{t-1} + delta_t * x_t * b_t
    y_t = <c_t, s_t> + d * x_t
    """
    bsz, length, channels = x.shape
    nstate = a.shape[1]
    y = np.zeros_like(x)
    for bi in range(bsz):
        for ch in range(channels):
            state = np.zeros(nstate, dtype=x.dtype)
            for t in range(length):
                a_bar = np.exp(delta[bi, t, ch] * a[ch])
                state = a_bar * state + delta[bi, t, ch] * x[bi, t, ch] * b[bi, t]
                y[bi, t, ch] = state @ c[bi, t] + d[ch] * x[bi, t, ch]
    return y


def random_scan_inputs(rng, bsz, length, channels, nstate):
    x = rng.standard_normal((bsz, length, channels))
    delta = rng.uniform(1e-3, 0.2, size=(bsz, length, channels))
    a = -np.exp(rng.standard_normal((channels, nstate)) * 0.5)
    b = rng.standard_normal((bsz, length, nstate))
    c = rng.standard_normal((bsz, length, nstate))
    d = rng.standard_normal(channels)
    return x, delta, a, b, c, d


def scan_case(rng, bsz, length, channels, nstate):
    arrays = random_scan_inputs(rng, bsz, length, channels, nstate)
    got = selective_scan(*[torch.from_numpy(v).float() for v in arrays]).numpy()
    want = scan_oracle(*arrays)
    return np.abs(got - want).max()


class TestSelectiveScan:
    def test_matches_recurrence_oracle_on_reference_shape(self):
        rng = np.random.default_rng(0)
        assert scan_case(rng, 1, 32, 8, 4) < 1e-5

    def test_matches_recurrence_oracle_on_random_shapes(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            length = int(rng.integers(1, 65))
            channels = int(rng.integers(1, 17))
            nstate = int(rng.integers(1, 9))
            bsz = int(rng.integers(1, 3))
            assert scan_case(rng, bsz, length, channels, nstate) < 1e-5

    def test_causal_exactly(self):
        torch.manual_seed(0)
        rng = np.random.default_rng(2)
        arrays = [torch.from_numpy(v).float()
                  for v in random_scan_inputs(rng, 1, 12, 4, 3)]
        x = arrays[0]
        base = selective_scan(*arrays)
        k = 7
        bumped = x.clone()
        bumped[0, k] += 1.0
        out = selective_scan(bumped, *arrays[1:])
        assert torch.equal(out[:, :k], base[:, :k])
        assert not torch.allclose(out[:, k:], base[:, k:])

    def test_module_is_causal(self):
        torch.manual_seed(1)
        ssm = SelectiveSSM(dim=6, state_dim=4)
        x = torch.randn(1, 10, 6)
        base = ssm(x)
        k = 4
        bumped = x.clone()
        bumped[0, k] += 1.0
        out = ssm(bumped)
        assert torch.equal(out[:, :k], base[:, :k])
        assert not torch.allclose(out[:, k:], base[:, k:])

    def test_zero_input_stays_zero(self):
        torch.manual_seed(2)
        ssm = SelectiveSSM(dim=6, state_dim=4)
        out = ssm(torch.zeros(2, 9, 6))
        assert torch.equal(out, torch.zeros_like(out))

    def test_transition_magnitudes_below_one(self):
        torch.manual_seed(3)
        ssm = SelectiveSSM(dim=5, state_dim=3)
        delta = torch.rand(2, 7, 5) * 10 + 1e-6
        mags = ssm.transition_magnitudes(delta)
        assert mags.shape == (2, 7, 5, 3)
        assert (mags < 1.0).all()
        assert (mags > 0.0).all()


class TestTemporalBranch:
    def test_output_shape_matches_input(self):
        torch.manual_seed(0)
        branch = TemporalBranch(dim=16, inner_dim=8, state_dim=4)
        h = torch.randn(2, 12, 16)
        assert branch(h).shape == h.shape

    def test_zero_tokens_give_zero_prompt(self):
        torch.manual_seed(1)
        branch = TemporalBranch(dim=16, inner_dim=8, state_dim=4)
        out = branch(torch.zeros(1, 12, 16))
        assert torch.equal(out, torch.zeros_like(out))

    def test_causal_over_token_sequence(self):
        torch.manual_seed(2)
        branch = TemporalBranch(dim=16, inner_dim=8, state_dim=4)
        h = torch.randn(1, 10, 16)
        base = branch(h)
        k = 5
        bumped = h.clone()
        bumped[0, k] += 1.0
        out = branch(bumped)
        assert torch.equal(out[:, :k], base[:, :k])
        assert not torch.allclose(out[:, k:], base[:, k:])

    def test_zero_conv_kernel_degenerates_to_norm_scan(self):
        # With the residual conv kernel zeroed and identity up/down
        # projections, the branch is exactly LN applied after the scan.
        dim = 8
        torch.manual_seed(3)
        branch = TemporalBranch(dim=dim, inner_dim=dim, state_dim=4)
        with torch.no_grad():
            branch.conv.weight.zero_()
            branch.down.weight.copy_(torch.eye(dim))
            branch.up.weight.copy_(torch.eye(dim))
        h = torch.randn(1, 9, dim)
        assert torch.equal(branch(h), branch.norm(branch.ssm(h)))

    def test_zero_conv_kernel_skips_conv_only(self):
        # Same degeneration without touching the projections: the branch
        # becomes up(LN(scan(down(h)))).
        torch.manual_seed(4)
        branch = TemporalBranch(dim=16, inner_dim=8, state_dim=4)
        with torch.no_grad():
            branch.conv.weight.zero_()
        h = torch.randn(2, 9, 16)
        want = branch.up(branch.norm(branch.ssm(branch.down(h))))
        assert torch.equal(branch(h), want)


class TestSpatialBranch:
    def make(self, dim=32, stride=16, num_tokens=16):
        torch.manual_seed(0)
        return SpatialBranch(in_channels=2, dim=dim, num_heads=2,
                             num_tokens=num_tokens, stride=stride)

    def test_tokenizes_to_grid(self):
        branch = self.make()
        out = branch(torch.randn(1, 2, 64, 64))
        assert out.shape == (1, 16, 32)

    def test_full_resolution_shape(self):
        torch.manual_seed(0)
        branch = SpatialBranch(in_channels=2, dim=32, num_heads=2,
                               num_tokens=256, stride=16)
        out = branch(torch.randn(1, 2, 256, 256))
        assert out.shape == (1, 256, 32)

    def test_rejects_indivisible_masks(self):
        branch = self.make()
        with pytest.raises(ShapeError, match="divisible"):
            branch(torch.randn(1, 2, 60, 64))

    def test_batch_equivariance(self):
        branch = self.make()
        torch.manual_seed(1)
        m = torch.randn(2, 2, 64, 64)
        out = branch(m)
        flipped = branch(m.flip(0))
        assert torch.allclose(flipped.flip(0), out, atol=1e-6)

    def test_attention_rows_are_convex_weights(self):
        branch = self.make()
        torch.manual_seed(2)
        branch(torch.randn(2, 2, 64, 64), keep_weights=True)
        weights = branch.attn.last_weights
        assert weights.shape == (2, 2, 16, 16)
        assert (weights >= 0).all()
        sums = weights.sum(-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


class TestFusion:
    def make_encoder(self):
        torch.manual_seed(0)
        return PromptEncoder(TINY)

    def test_constant_value_sequence_collapses(self):
        # All key/value tokens equal -> every query receives the same
        # attention-weighted value, whatever the weights are.
        pe = self.make_encoder()
        torch.manual_seed(1)
        s = torch.randn(1, TINY.num_tokens, TINY.embed_dim)
        t = torch.randn(1, 1, TINY.embed_dim).expand(1, TINY.num_tokens, -1)
        attended = pe.fuse_attn(s, t, t, q_pos=pe.spatial.pos, k_pos=pe.pos_t)
        assert torch.allclose(attended, attended[:, :1].expand_as(attended),
                              atol=1e-6)

    def test_output_shape_matches_tokens(self):
        pe = self.make_encoder()
        torch.manual_seed(2)
        s = torch.randn(2, TINY.num_tokens, TINY.embed_dim)
        t = torch.randn(2, TINY.num_tokens, TINY.embed_dim)
        assert pe.fuse(s, t).shape == s.shape


class TestEncodePrompts:
    def make_encoder(self):
        torch.manual_seed(0)
        return PromptEncoder(TINY)

    def random_inputs(self, seed=1, quarter=False):
        torch.manual_seed(seed)
        h = torch.randn(1, TINY.num_tokens, TINY.embed_dim)
        size = TINY.image_size // 4 if quarter else TINY.image_size
        m_sem = torch.randn(1, 2, size, size)
        m_ins = torch.randn(1, 2, size, size)
        return h, m_sem, m_ins

    def test_disabled_returns_zero_constraints(self):
        pe = self.make_encoder()
        h, m_sem, m_ins = self.random_inputs()
        c_sem, c_ins = pe.encode_prompts(h, m_sem, m_ins, enabled=False)
        assert c_sem.shape == h.shape and c_ins.shape == h.shape
        assert torch.equal(c_sem, torch.zeros_like(h))
        assert torch.equal(c_ins, torch.zeros_like(h))

    def test_identical_masks_give_identical_constraints(self):
        pe = self.make_encoder()
        h, m_sem, _ = self.random_inputs()
        c_sem, c_ins = pe.encode_prompts(h, m_sem, m_sem.clone())
        assert torch.equal(c_sem, c_ins)

    def test_swapping_masks_swaps_constraints(self):
        pe = self.make_encoder()
        h, m_sem, m_ins = self.random_inputs()
        c_sem, c_ins = pe.encode_prompts(h, m_sem, m_ins)
        c_sem2, c_ins2 = pe.encode_prompts(h, m_ins, m_sem)
        assert torch.equal(c_sem2, c_ins)
        assert torch.equal(c_ins2, c_sem)

    def test_quarter_resolution_masks_accepted(self):
        pe = self.make_encoder()
        h, m_sem, m_ins = self.random_inputs(quarter=True)
        c_sem, c_ins = pe.encode_prompts(h, m_sem, m_ins)
        assert c_sem.shape == h.shape and c_ins.shape == h.shape

    def test_outputs_finite(self):
        pe = self.make_encoder()
        for seed in range(4):
            h, m_sem, m_ins = self.random_inputs(seed=seed)
            c_sem, c_ins = pe.encode_prompts(h, m_sem, m_ins)
            assert torch.isfinite(c_sem).all() and torch.isfinite(c_ins).all()

    def test_constraint_gradients_reach_only_own_mask(self):
        pe = self.make_encoder()
        h, m_sem, m_ins = self.random_inputs()
        m_sem.requires_grad_(True)
        m_ins.requires_grad_(True)
        c_sem, _ = pe.encode_prompts(h, m_sem, m_ins)
        c_sem.square().sum().backward()
        assert m_sem.grad.abs().max() > 0
        assert m_ins.grad is None

    def test_constraint_gradient_matches_finite_differences(self):
        pe = self.make_encoder().double()
        torch.manual_seed(5)
        h = torch.randn(1, TINY.num_tokens, TINY.embed_dim, dtype=torch.float64)
        size = TINY.image_size // 4
        m_sem = torch.randn(1, 2, size, size, dtype=torch.float64)
        m_ins = torch.randn(1, 2, size, size, dtype=torch.float64)

        def loss_at(mask):
            c_sem, c_ins = pe.encode_prompts(h, mask, m_ins)
            return c_sem.square().sum() + c_ins.square().sum()

        probe = m_sem.clone().requires_grad_(True)
        loss_at(probe).backward()
        grad = probe.grad
        assert grad.abs().max() > 0

        flat = grad.abs().flatten()
        eps = 1e-5
        for idx in flat.argsort(descending=True)[:4]:
            co = np.unravel_index(int(idx), m_sem.shape)
            plus, minus = m_sem.clone(), m_sem.clone()
            plus[co] += eps
            minus[co] -= eps
            with torch.no_grad():
                fd = (loss_at(plus) - loss_at(minus)) / (2 * eps)
            rel = abs(float(fd) - float(grad[co])) / max(abs(float(fd)), 1e-12)
            assert rel < 1e-3
