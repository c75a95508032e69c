import pytest
import torch
from gradutil import assert_grads_match_fd

from diffspan.denoiser import SpanDenoiser, sinusoidal_embed
from diffspan.model import init_parameters


def make_denoiser(dim=8, heads=2, max_m=100, seed=0, **kw):
    net = SpanDenoiser(dim, heads, max_m, **kw).double()
    init_parameters(net, torch.Generator().manual_seed(seed))
    return net


def rand_inputs(b=2, n_r=3, n_v=6, dim=8, seed=1):
    gen = torch.Generator().manual_seed(seed)
    spans = torch.rand(b, n_r, 2, generator=gen, dtype=torch.float64)
    fusion = torch.randn(b, n_v, dim, generator=gen, dtype=torch.float64)
    mask = torch.ones(b, n_v, dtype=torch.bool)
    return spans, fusion, mask


class TestSinusoidalEmbed:
    def test_zero_value(self):
        out = sinusoidal_embed(torch.tensor(0.0), 8)
        assert torch.equal(out[:4], torch.zeros(4))
        assert torch.equal(out[4:], torch.ones(4))

    def test_bounded(self):
        vals = torch.linspace(0, 5000, 100)
        out = sinusoidal_embed(vals, 64)
        assert out.abs().max().item() <= 1.0

    def test_distinct_integers_distinct_embeddings(self):
        vals = torch.arange(1, 1001, dtype=torch.float64)
        emb = sinusoidal_embed(vals, 256)
        dist = torch.cdist(emb, emb)
        dist.fill_diagonal_(float("inf"))
        assert dist.min().item() > 0.0

    def test_rejects_odd_dim(self):
        with pytest.raises(ValueError):
            sinusoidal_embed(torch.tensor(1.0), 7)

    def test_shape(self):
        out = sinusoidal_embed(torch.zeros(3, 5), 16)
        assert out.shape == (3, 5, 16)


class TestDenoiseForward:
    def test_output_contract(self):
        net = make_denoiser()
        spans, fusion, mask = rand_inputs()
        pred, conf = net(spans, 10, fusion, mask)
        assert pred.shape == (2, 3, 2) and conf.shape == (2, 3)
        assert ((pred >= 0) & (pred <= 1)).all()

    def test_deterministic(self):
        net = make_denoiser()
        spans, fusion, mask = rand_inputs()
        a = net(spans, 10, fusion, mask)
        b = net(spans, 10, fusion, mask)
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])

    def test_rejects_empty_span_set(self):
        net = make_denoiser()
        _, fusion, mask = rand_inputs()
        with pytest.raises(ValueError):
            net(torch.zeros(2, 0, 2, dtype=torch.float64), 10, fusion, mask)

    def test_rejects_out_of_range_intensity(self):
        net = make_denoiser(max_m=50)
        spans, fusion, mask = rand_inputs()
        for bad in (0, 51):
            with pytest.raises(ValueError):
                net(spans, bad, fusion, mask)

    def test_intensity_embedding_is_live(self):
        net = make_denoiser()
        spans, fusion, mask = rand_inputs()
        with_m = net(spans, 10, fusion, mask)
        net.use_intensity = False
        without_m = net(spans, 10, fusion, mask)
        assert not torch.allclose(with_m[0], without_m[0])
        # and different intensities produce different outputs when enabled
        net.use_intensity = True
        other_m = net(spans, 90, fusion, mask)
        assert not torch.allclose(with_m[0], other_m[0])

    def test_masked_frames_ignored(self):
        net = make_denoiser()
        spans, fusion, mask = rand_inputs(n_v=7)
        mask = mask.clone()
        mask[:, 5:] = False
        base = net(spans, 10, fusion, mask)
        tampered = fusion.clone()
        tampered[:, 5:] = 99.0
        again = net(spans, 10, tampered, mask)
        assert torch.equal(base[0], again[0]) and torch.equal(base[1], again[1])

    def test_per_sample_intensities(self):
        net = make_denoiser()
        spans, fusion, mask = rand_inputs(b=3)
        m = torch.tensor([1, 50, 100])
        pred, conf = net(spans, m, fusion, mask)
        assert pred.shape == (3, 3, 2)

    def test_roi_embedding_variant(self):
        fc = make_denoiser(embed_type="fc")
        roi = make_denoiser(embed_type="roi")
        roi.load_state_dict(fc.state_dict())
        spans, fusion, mask = rand_inputs()
        a = fc(spans, 10, fusion, mask)
        b = roi(spans, 10, fusion, mask)
        assert a[0].shape == b[0].shape
        assert not torch.allclose(a[0], b[0])

    def test_roi_tiny_span_fallback(self):
        roi = make_denoiser(embed_type="roi")
        spans, fusion, mask = rand_inputs()
        spans = spans.clone()
        spans[0, 0] = torch.tensor([0.51, 1e-6])  # no frame center inside
        pred, conf = roi(spans, 10, fusion, mask)
        assert torch.isfinite(pred).all() and torch.isfinite(conf).all()

    def test_rejects_unknown_embed_type(self):
        with pytest.raises(ValueError):
            SpanDenoiser(8, 2, 10, embed_type="conv")


class TestGradients:
    def test_forward_matches_finite_differences(self):
        net = make_denoiser(dim=8, heads=2, seed=4)
        spans, fusion, mask = rand_inputs(b=1, n_r=2, n_v=4, seed=6)
        gen = torch.Generator().manual_seed(8)
        probe_s = torch.randn(1, 2, 2, generator=gen, dtype=torch.float64)
        probe_c = torch.randn(1, 2, generator=gen, dtype=torch.float64)
        spans_param = spans.clone().requires_grad_(True)
        fusion_param = fusion.clone().requires_grad_(True)

        def objective():
            pred, conf = net(spans_param, 7, fusion_param, mask)
            return (pred * probe_s).sum() + (conf * probe_c).sum()

        params = [spans_param, fusion_param] + list(net.parameters())
        checked = assert_grads_match_fd(objective, params)
        assert checked >= 60
