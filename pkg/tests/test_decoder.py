"""Dual-head decoder tests: output shapes and routing, mode discipline,
linearity of mask prediction, guidance wiring, and parameter sharing."""

from __future__ import annotations

from dataclasses import replace

import pytest
import torch

from conftest import TINY
from dualseg.decoder import (DualDecoder, INSTANCE, SEMANTIC, TaskHead,
                             instance_roles, semantic_roles)
from dualseg.errors import ModeError, RoleMismatchError, ShapeError

GRID = (TINY.token_grid, TINY.token_grid)
N = TINY.num_tokens
DIM = TINY.embed_dim


def make_decoder(config=TINY, seed=0):
    torch.manual_seed(seed)
    return DualDecoder(config)


def random_inputs(bsz=2, seed=1):
    torch.manual_seed(seed)
    h = torch.randn(bsz, N, DIM)
    c_sem = torch.randn(bsz, N, DIM) * 0.1
    c_ins = torch.randn(bsz, N, DIM) * 0.1
    return h, c_sem, c_ins


class TestForwardModes:
    def test_forward1_shapes(self):
        dec = make_decoder()
        h, _, _ = random_inputs()
        out = dec.decoder_forward(h, None, None, "forward1", GRID)
        quarter = TINY.image_size // 4
        gh, gw = GRID
        for tag in (SEMANTIC, INSTANCE):
            assert out.y_bin[tag].shape == (2, 2, quarter, quarter)
            assert out.y_prob[tag].shape == (2, TINY.align_classes, gh, gw)
        assert out.final_sem is None and out.final_ins is None

    def test_forward2_shapes(self):
        dec = make_decoder()
        h, c_sem, c_ins = random_inputs()
        out = dec.decoder_forward(h, c_sem, c_ins, "forward2", GRID)
        size = TINY.image_size
        assert out.final_sem.shape == (2, TINY.num_semantic_classes, size, size)
        assert out.final_ins["binary"].shape == (2, 2, size, size)
        assert out.final_ins["hv"].shape == (2, 2, size, size)
        assert out.final_ins["type"].shape == (2, TINY.num_instance_classes + 1, size, size)
        assert not out.y_bin and not out.y_prob

    def test_forward1_rejects_nonzero_constraints(self):
        dec = make_decoder()
        h, c_sem, c_ins = random_inputs()
        with pytest.raises(ModeError, match="without prompts"):
            dec.decoder_forward(h, c_sem, c_ins, "forward1", GRID)

    def test_forward1_accepts_explicit_zero_constraints(self):
        dec = make_decoder()
        h, _, _ = random_inputs()
        zeros = torch.zeros_like(h)
        out = dec.decoder_forward(h, zeros, zeros, "forward1", GRID)
        assert set(out.y_bin) == {SEMANTIC, INSTANCE}

    def test_unknown_mode_rejected(self):
        dec = make_decoder()
        h, _, _ = random_inputs()
        with pytest.raises(ModeError, match="unknown decoder mode"):
            dec.decoder_forward(h, None, None, "forward3", GRID)

    def test_constraint_token_mismatch(self):
        dec = make_decoder()
        h, c_sem, c_ins = random_inputs()
        with pytest.raises(ShapeError, match="does not match"):
            dec.decoder_forward(h, c_sem[:, :-1], c_ins, "forward2", GRID)

    def test_repeat_forward_is_deterministic(self):
        dec = make_decoder()
        h, _, _ = random_inputs()
        a = dec.decoder_forward(h, None, None, "forward1", GRID)
        b = dec.decoder_forward(h, None, None, "forward1", GRID)
        for tag in (SEMANTIC, INSTANCE):
            assert torch.equal(a.y_bin[tag], b.y_bin[tag])
            assert torch.equal(a.y_prob[tag], b.y_prob[tag])

    def test_both_forwards_use_identical_parameters(self):
        dec = make_decoder()
        h, c_sem, c_ins = random_inputs()
        dec.decoder_forward(h, None, None, "forward1", GRID)
        dec.decoder_forward(h, c_sem, c_ins, "forward2", GRID)
        assert dec.invocations == 2
        first, second = dec.call_log
        assert first.param_ids == second.param_ids
        assert first.mode == "forward1" and second.mode == "forward2"
        assert first.constraint_absmax == 0.0 and second.constraint_absmax > 0.0


class TestGuidanceWiring:
    def test_swapped_constraints_change_semantic_output(self):
        dec = make_decoder()
        h, c_sem, c_ins = random_inputs()
        out = dec.decoder_forward(h, c_sem, c_ins, "forward2", GRID)
        swapped = dec.decoder_forward(h, c_ins, c_sem, "forward2", GRID)
        assert not torch.allclose(out.final_sem, swapped.final_sem)

    def test_semantic_head_reads_instance_constraint(self):
        dec = make_decoder()
        h, c_sem, c_ins = random_inputs()
        c_sem.requires_grad_(True)
        c_ins.requires_grad_(True)
        out = dec.decoder_forward(h, c_sem, c_ins, "forward2", GRID)
        out.final_sem.square().sum().backward()
        assert c_ins.grad is not None and c_ins.grad.abs().max() > 0
        assert c_sem.grad is None

    def test_disabled_guidance_ignores_constraints(self):
        dec = make_decoder(replace(TINY, enable_guidance=False))
        h, c_sem, c_ins = random_inputs()
        guided = dec.decoder_forward(h, c_sem, c_ins, "forward2", GRID)
        plain = dec.decoder_forward(h, None, None, "forward2", GRID)
        assert torch.equal(guided.final_sem, plain.final_sem)
        assert torch.equal(guided.final_ins["hv"], plain.final_ins["hv"])

    def test_enabled_guidance_uses_constraints(self):
        dec = make_decoder()
        h, c_sem, c_ins = random_inputs()
        guided = dec.decoder_forward(h, c_sem, c_ins, "forward2", GRID)
        plain = dec.decoder_forward(h, None, None, "forward2", GRID)
        assert not torch.allclose(guided.final_sem, plain.final_sem)


class TestTaskHead:
    def make_head(self, tag=SEMANTIC, roles=None, seed=0):
        torch.manual_seed(seed)
        return TaskHead(TINY, tag, roles=roles)

    def test_role_lists(self):
        assert semantic_roles(3) == ["sem_class_0", "sem_class_1", "sem_class_2"]
        assert instance_roles(2) == ["ins_bin_bg", "ins_bin_fg", "ins_hv_h",
                                     "ins_hv_v", "ins_type_0", "ins_type_1",
                                     "ins_type_2"]

    def test_query_counts_match_config(self):
        assert self.make_head(SEMANTIC).queries.shape[0] == TINY.num_queries_sem
        assert self.make_head(INSTANCE).queries.shape[0] == TINY.num_queries_ins

    def test_duplicate_roles_rejected(self):
        roles = semantic_roles(TINY.num_semantic_classes)
        roles[1] = roles[0]
        with pytest.raises(RoleMismatchError, match="duplicate"):
            self.make_head(SEMANTIC, roles=roles)

    def test_wrong_role_count_rejected(self):
        with pytest.raises(RoleMismatchError, match="do not match config"):
            self.make_head(SEMANTIC, roles=semantic_roles(5))

    def test_zero_queries_give_zero_logits(self):
        head = self.make_head()
        features = torch.randn(2, TINY.pixel_dim, 16, 16)
        q = torch.zeros(2, len(head.roles), DIM)
        logits = head.predict_masks(features, q)
        assert torch.equal(logits, torch.zeros_like(logits))

    def test_doubling_slot_query_doubles_its_channel(self):
        head = self.make_head()
        torch.manual_seed(1)
        features = torch.randn(1, TINY.pixel_dim, 16, 16)
        q = torch.randn(1, len(head.roles), DIM)
        q2 = q.clone()
        q2[:, 1] *= 2
        base = head.predict_masks(features, q)
        bumped = head.predict_masks(features, q2)
        assert torch.allclose(bumped[:, 1], base[:, 1] * 2, atol=1e-6)
        mask = torch.ones(len(head.roles), dtype=torch.bool)
        mask[1] = False
        assert torch.equal(bumped[:, mask], base[:, mask])

    def test_probability_channels_sum_to_one(self):
        head = self.make_head()
        torch.manual_seed(2)
        prob = head.to_probability(torch.randn(2, N, DIM), GRID)
        sums = prob.sum(1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_zero_embedding_gives_uniform_probability(self):
        head = self.make_head()
        prob = head.to_probability(torch.zeros(1, N, DIM), GRID)
        want = torch.full_like(prob, 1.0 / TINY.align_classes)
        assert torch.allclose(prob, want, atol=1e-7)

    def test_pixel_decoder_shapes(self):
        head = self.make_head()
        torch.manual_seed(3)
        quarter, full = head.pixel(torch.randn(1, N, DIM), GRID)
        assert quarter.shape == (1, TINY.pixel_dim, 16, 16)
        assert full.shape == (1, TINY.pixel_dim, 64, 64)

    def test_pixel_decoder_preserves_constants_at_init(self):
        head = self.make_head()
        g = torch.full((1, N, DIM), 0.37)
        quarter, full = head.pixel(g, GRID)
        for fmap in (quarter, full):
            flat = fmap.flatten(2)
            assert torch.allclose(flat, flat[:, :, :1].expand_as(flat), atol=1e-6)

    def test_decode_shapes(self):
        head = self.make_head()
        torch.manual_seed(4)
        q_ref, g = head.decode(torch.randn(2, N, DIM))
        assert q_ref.shape == (2, len(head.roles), DIM)
        assert g.shape == (2, N, DIM)

    def test_block_attention_rows_sum_to_one(self):
        head = self.make_head()
        torch.manual_seed(5)
        block = head.blocks[0]
        q = torch.randn(1, len(head.roles), DIM)
        tokens = torch.randn(1, N, DIM)
        block.cross_attn(q, tokens, tokens, k_pos=head.pos, keep_weights=True)
        sums = block.cross_attn.last_weights.sum(-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


class TestNumericalHealth:
    def test_many_random_passes_stay_finite(self):
        dec = make_decoder()
        torch.manual_seed(6)
        for i in range(50):
            h = torch.randn(1, N, DIM) * (1 + i % 5)
            if i % 2:
                c_sem = torch.randn(1, N, DIM)
                c_ins = torch.randn(1, N, DIM)
                out = dec.decoder_forward(h, c_sem, c_ins, "forward2", GRID)
                assert torch.isfinite(out.final_sem).all()
                for part in out.final_ins.values():
                    assert torch.isfinite(part).all()
            else:
                out = dec.decoder_forward(h, None, None, "forward1", GRID)
                for tag in (SEMANTIC, INSTANCE):
                    assert torch.isfinite(out.y_bin[tag]).all()
                    assert torch.isfinite(out.y_prob[tag]).all()
