import math

import pytest
import torch
from gradutil import assert_grads_match_fd

from diffspan.condition import (
    FusionEncoder,
    ResidualAttention,
    SimilarityHead,
    default_pair_count,
    sample_score_pairs,
    similarity_loss,
    similarity_scores,
)
from diffspan.model import init_parameters


def make_encoder(d_video=6, d_text=5, dim=8, heads=2, seed=0, positions=True):
    enc = FusionEncoder(d_video, d_text, dim, heads, use_frame_positions=positions).double()
    init_parameters(enc, torch.Generator().manual_seed(seed))
    return enc


def rand_inputs(b=2, n_v=7, n_t=4, d_video=6, d_text=5, seed=1, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    video = torch.randn(b, n_v, d_video, generator=gen, dtype=dtype)
    query = torch.randn(b, n_t, d_text, generator=gen, dtype=dtype)
    vmask = torch.ones(b, n_v, dtype=torch.bool)
    qmask = torch.ones(b, n_t, dtype=torch.bool)
    return video, vmask, query, qmask


class TestResidualAttention:
    def test_single_key_identity(self):
        # one text token and identity value projection: out = V_t + Q_v exactly
        dim = 8
        layer = ResidualAttention(dim, n_heads=2).double()
        init_parameters(layer, torch.Generator().manual_seed(0))
        with torch.no_grad():
            layer.v_proj.weight.copy_(torch.eye(dim))
            layer.v_proj.bias.zero_()
        gen = torch.Generator().manual_seed(4)
        x_q = torch.randn(1, 5, dim, generator=gen, dtype=torch.float64)
        x_kv = torch.randn(1, 1, dim, generator=gen, dtype=torch.float64)
        mask = torch.ones(1, 1, dtype=torch.bool)
        out = layer(x_q, x_kv, mask)
        expect = x_kv.expand(1, 5, dim) + layer.q_proj(x_q)
        assert torch.allclose(out, expect, atol=1e-12)

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ValueError):
            ResidualAttention(6, n_heads=4)


class TestFusionEncoder:
    def test_shape_contract(self):
        enc = make_encoder()
        video, vmask, query, qmask = rand_inputs(b=1, n_v=1, n_t=1)
        out = enc(video, vmask, query, qmask)
        assert out.shape == (1, 1, 8)

    def test_masked_text_permutation_invariant(self):
        enc = make_encoder()
        video, vmask, query, qmask = rand_inputs(n_t=5)
        qmask[:, 3:] = False
        base = enc(video, vmask, query, qmask)
        permuted = query.clone()
        permuted[:, [3, 4]] = permuted[:, [4, 3]]
        again = enc(video, vmask, permuted, qmask)
        assert torch.equal(base, again)

    def test_masked_frames_isolated(self):
        enc = make_encoder()
        video, vmask, query, qmask = rand_inputs(n_v=6)
        vmask[:, 4:] = False
        base = enc(video, vmask, query, qmask)
        tampered = video.clone()
        tampered[:, 4:] += 3.0
        again = enc(tampered, vmask, query, qmask)
        assert torch.equal(base[:, :4], again[:, :4])

    def test_frame_permutation_equivariance_without_positions(self):
        enc = make_encoder(positions=False)
        video, vmask, query, qmask = rand_inputs(n_v=7)
        perm = torch.randperm(7, generator=torch.Generator().manual_seed(9))
        base = enc(video, vmask, query, qmask)
        permuted = enc(video[:, perm], vmask, query, qmask)
        assert torch.allclose(base[:, perm], permuted, atol=1e-12)

    def test_with_positions_not_equivariant(self):
        enc = make_encoder(positions=True)
        video, vmask, query, qmask = rand_inputs(n_v=7)
        perm = torch.tensor([1, 0, 2, 3, 4, 5, 6])
        base = enc(video, vmask, query, qmask)
        permuted = enc(video[:, perm], vmask, query, qmask)
        assert not torch.allclose(base[:, perm], permuted)

    def test_rejects_all_masked_query(self):
        enc = make_encoder()
        video, vmask, query, qmask = rand_inputs()
        qmask[0] = False
        with pytest.raises(ValueError):
            enc(video, vmask, query, qmask)

    def test_rejects_dimension_mismatch(self):
        enc = make_encoder()
        video, vmask, query, qmask = rand_inputs()
        with pytest.raises((ValueError, RuntimeError)):
            enc(video[..., :3], vmask, query, qmask)
        with pytest.raises(ValueError):
            enc(video, vmask[:, :3], query, qmask)


class TestSimilarityScores:
    def test_range_and_masking(self):
        logits = torch.tensor([[0.3, -2.0, 5.0]])
        mask = torch.tensor([[True, True, False]])
        scores = similarity_scores(logits, mask)
        assert ((scores[0, :2] > 0) & (scores[0, :2] < 1)).all()
        assert scores[0, 2].item() == 0.0

    def test_zero_logits_give_half(self):
        scores = similarity_scores(torch.zeros(1, 4), torch.ones(1, 4, dtype=torch.bool))
        assert torch.allclose(scores, torch.full((1, 4), 0.5))

    def test_deterministic(self):
        head = SimilarityHead(8).double()
        init_parameters(head, torch.Generator().manual_seed(0))
        x = torch.randn(2, 5, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        assert torch.equal(head(x), head(x))


class TestSimilarityLoss:
    def test_perfect_scores_near_zero(self):
        labels = torch.tensor([1.0, 1.0, 0.0, 0.0])
        mask = torch.ones(4, dtype=torch.bool)
        loss = similarity_loss(labels.clone(), labels, mask, torch.Generator().manual_seed(0))
        assert 0.0 <= loss.item() <= 2 * abs(math.log(1 - 1e-7)) + 1e-12

    def test_margin_arithmetic(self):
        # one pair with s_p = 0.6, s_n = 0.5, margin 0.2 -> hinge = 0.1
        scores = torch.tensor([0.6, 0.5])
        labels = torch.tensor([1.0, 0.0])
        mask = torch.ones(2, dtype=torch.bool)
        loss = similarity_loss(scores, labels, mask, torch.Generator().manual_seed(0), n_pairs=1)
        bce = -(math.log(0.6) + math.log(0.5)) / 2
        assert loss.item() == pytest.approx(bce + 0.1, abs=1e-6)

    def test_default_margin_is_02(self):
        import inspect

        assert inspect.signature(similarity_loss).parameters["margin"].default == 0.2

    def test_nonnegative_and_monotone_bce(self):
        gen = torch.Generator().manual_seed(2)
        labels = torch.tensor([1.0, 0.0, 1.0, 0.0, 0.0])
        mask = torch.ones(5, dtype=torch.bool)
        worse = torch.tensor([0.4, 0.6, 0.5, 0.5, 0.5])
        better = torch.tensor([0.6, 0.4, 0.7, 0.3, 0.3])
        l_worse = similarity_loss(worse, labels, mask, gen, n_pairs=0)
        l_better = similarity_loss(better, labels, mask, gen, n_pairs=0)
        assert l_worse.item() >= l_better.item() >= 0.0

    def test_signals_missing_class(self):
        mask = torch.ones(3, dtype=torch.bool)
        with pytest.raises(ValueError):
            sample_score_pairs(torch.tensor([1.0, 1.0, 1.0]), mask, 2, torch.Generator())
        all_pos = torch.tensor([1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            similarity_loss(torch.rand(3), all_pos, mask, torch.Generator().manual_seed(0), n_pairs=2)

    def test_default_pair_count_caps_at_16(self):
        mask = torch.ones(40, dtype=torch.bool)
        labels = torch.ones(40)
        labels[30:] = 0
        assert default_pair_count(labels, mask) == 16
        labels2 = torch.zeros(40)
        labels2[:3] = 1
        assert default_pair_count(labels2, mask) == 3


class TestGradients:
    def test_similarity_loss_matches_finite_differences(self):
        torch.manual_seed(0)
        enc = make_encoder(d_video=5, d_text=4, dim=8, heads=2, seed=3)
        head = SimilarityHead(8).double()
        init_parameters(head, torch.Generator().manual_seed(5))
        video, vmask, query, qmask = rand_inputs(b=1, n_v=6, n_t=3, d_video=5, d_text=4, seed=7)
        labels = torch.tensor([[1.0, 1.0, 0.0, 0.0, 1.0, 0.0]], dtype=torch.float64)

        params = list(enc.parameters()) + list(head.parameters())

        def objective() -> torch.Tensor:
            fusion = enc(video, vmask, query, qmask)
            scores = similarity_scores(head(fusion), vmask)
            return similarity_loss(
                scores[0], labels[0], vmask[0], torch.Generator().manual_seed(11), n_pairs=4
            )

        checked = assert_grads_match_fd(objective, params)
        assert checked >= 40
