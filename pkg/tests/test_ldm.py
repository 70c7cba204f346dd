import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from condaudio.config import ToyConfig
from condaudio.core.conditions import TimestampGrid
from condaudio.core.dsp import QuantizedContour
from condaudio.errors import ConfigMismatchError, FormatError, ParameterError
from condaudio.ldm import (
    ControlCondition,
    FusionLayer,
    ToyModel,
    Trainer,
    cfg_combine,
    downsample_control,
    encode_control,
    forward_diffuse,
    fusion_forward,
    linear_schedule,
    load_checkpoint,
    save_checkpoint,
)
from condaudio.ldm.encoder import fourier_features, sinusoidal_embedding
from condaudio.ldm.fusion import locality_bias
from condaudio.ldm.probe import probe_batches


def _controls(config, rng):
    n = config.latent_frames
    grid = np.zeros((len(config.event_classes), n), dtype=np.uint8)
    grid[0, : n // 2] = 1
    return [
        ControlCondition("timestamp", TimestampGrid(grid, 1.0)),
        ControlCondition("pitch", QuantizedContour(rng.integers(0, config.n_bins, n), config.n_bins, 40.0, 1600.0)),
        ControlCondition("energy", QuantizedContour(rng.integers(0, config.n_bins, n), config.n_bins, 1e-4, 1.0)),
    ]


def test_schedule_shape_and_monotone():
    sched = linear_schedule(200, 1e-4, 2e-2)
    assert sched.T == 200
    assert torch.all(sched.betas > 0) and torch.all(torch.diff(sched.betas) >= 0)
    assert sched.alpha_bars[0] < 1 and torch.all(torch.diff(sched.alpha_bars) < 0)
    with pytest.raises(ParameterError):
        linear_schedule(10, 0.02, 0.01)


def test_forward_diffuse_closed_form():
    sched = linear_schedule(200)
    g = torch.Generator().manual_seed(0)
    x0 = torch.randn(3, 5, generator=g, dtype=torch.float64)
    noise = torch.randn(3, 5, generator=g, dtype=torch.float64)
    x_t = forward_diffuse(x0, 100, noise, sched)
    a = float(torch.prod(1 - torch.linspace(1e-4, 2e-2, 200, dtype=torch.float64)[:100]))
    for i in range(3):
        for j in range(5):
            want = math.sqrt(a) * float(x0[i, j]) + math.sqrt(1 - a) * float(noise[i, j])
            assert abs(float(x_t[i, j]) - want) < 1e-6
    assert torch.allclose(forward_diffuse(x0, 100, torch.zeros_like(x0), sched), math.sqrt(a) * x0, atol=1e-12)


def test_forward_diffuse_first_step_and_range():
    sched = linear_schedule(200)
    x0 = torch.ones(4, 4, dtype=torch.float64)
    noise = torch.full((4, 4), 0.5, dtype=torch.float64)
    x1 = forward_diffuse(x0, 1, noise, sched)
    # beta_1 = 1e-4: one step barely moves the signal
    assert torch.all((x1 - x0).abs() < 0.01)
    for bad in (0, 201):
        with pytest.raises(ParameterError):
            forward_diffuse(x0, bad, noise, sched)


def test_forward_diffuse_mean_monte_carlo():
    sched = linear_schedule(200)
    g = torch.Generator().manual_seed(5)
    x0 = torch.tensor([0.7, -1.2], dtype=torch.float64)
    noise = torch.randn(1000, 2, generator=g, dtype=torch.float64)
    x_t = forward_diffuse(x0.expand(1000, 2), torch.full((1000,), 50), noise, sched)
    a = sched.alpha_bar(50)
    band = 3 * torch.sqrt(1 - a) / math.sqrt(1000)
    assert torch.all((x_t.mean(0) - torch.sqrt(a) * x0).abs() <= band)


def test_cfg_combine_algebra():
    g = torch.Generator().manual_seed(1)
    c, u = torch.randn(2, 6, 4, generator=g)
    assert torch.equal(cfg_combine(c, u, 1.0), c)
    assert torch.equal(cfg_combine(c, u, 0.0), u)
    assert torch.allclose(cfg_combine(c, c, 7.5), c, atol=1e-6)
    for omega in (0.5, 3.0, 5.0):
        assert torch.allclose(cfg_combine(c, u, omega), u + omega * (c - u), atol=1e-6)
    with pytest.raises(ParameterError):
        cfg_combine(c, u[:, :3], 2.0)


def test_encode_control_linearity_and_cls(tiny_config, rng):
    model = ToyModel(tiny_config, dtype=torch.float64)
    enc = model.encoder
    with torch.no_grad():
        enc.position.zero_()
        enc.cls.zero_()
        for layer in enc.mlp:
            if isinstance(layer, torch.nn.Linear):
                layer.bias.zero_()
    zeros = torch.zeros(tiny_config.latent_frames, tiny_config.hidden, dtype=torch.float64)
    assert not encode_control(zeros, "pitch", model).any()

    model = ToyModel(tiny_config, dtype=torch.float64)
    x = torch.as_tensor(rng.normal(size=(tiny_config.latent_frames, tiny_config.hidden)))
    a = encode_control(x, "pitch", model)
    b = encode_control(x, "energy", model)
    diff = model.encoder.cls[1] - model.encoder.cls[2]
    assert torch.allclose(a - b, diff.expand_as(a), atol=1e-12)
    with pytest.raises(ParameterError):
        encode_control(x, "loudness", model)


def test_encode_control_matches_affine_oracle(tiny_config, rng):
    model = ToyModel(tiny_config, dtype=torch.float64)
    enc = model.encoder
    x = torch.as_tensor(rng.normal(size=(tiny_config.latent_frames, tiny_config.hidden)))
    got = encode_control(x, 0, model)
    l1, l2 = enc.mlp[0], enc.mlp[2]
    for l in range(x.shape[0]):
        z = x[l] + enc.position[l]
        pre = l1.weight @ z + l1.bias
        act = 0.5 * pre * (1 + torch.erf(pre / math.sqrt(2)))
        want = l2.weight @ act + l2.bias + enc.cls[0]
        assert torch.allclose(got[l], want, atol=1e-6)


def test_downsample_shapes_and_oracle(tiny_config, rng):
    model = ToyModel(tiny_config.model_copy(update={"strides": [2, 8]}), dtype=torch.float64)
    emb = torch.as_tensor(rng.normal(size=(8, tiny_config.hidden)))
    groups = downsample_control(emb, model)
    assert [g.shape[0] for g in groups] == [4, 1]
    conv = model.encoder.downsamplers[0]
    for m in range(4):
        window = emb[2 * m:2 * m + 2]  # (k, H)
        want = torch.einsum("oik,ki->o", conv.weight, window) + conv.bias
        assert torch.allclose(groups[0][m], want, atol=1e-6)


def test_downsample_ceil_count(tiny_config):
    config = tiny_config.model_copy(update={"latent_frames": 7})
    model = ToyModel(config)
    groups = downsample_control(torch.zeros(7, config.hidden), model)
    assert [g.shape[0] for g in groups] == [4, 2]


def test_downsample_averaging_kernel_constant(tiny_config):
    model = ToyModel(tiny_config, dtype=torch.float64)
    H = tiny_config.hidden
    with torch.no_grad():
        for conv, s in zip(model.encoder.downsamplers, tiny_config.strides):
            conv.weight.zero_()
            conv.bias.zero_()
            for h in range(H):
                conv.weight[h, h, :] = 1.0 / s
    emb = torch.full((8, H), 2.5, dtype=torch.float64)
    for g in downsample_control(emb, model):
        assert torch.allclose(g, torch.full_like(g, 2.5))


def _attention_oracle(mel, control, layer):
    tokens = torch.cat([control, mel])
    mu = tokens.mean(-1, keepdim=True)
    var = tokens.var(-1, unbiased=False, keepdim=True)
    z = (tokens - mu) / torch.sqrt(var + layer.norm.eps) * layer.norm.weight + layer.norm.bias
    q, k, v = z @ layer.q.weight.T, z @ layer.k.weight.T, z @ layer.v.weight.T
    heads = []
    hd = z.shape[1] // layer.n_heads
    for h in range(layer.n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        logits = q[:, sl] @ k[:, sl].T / math.sqrt(hd)
        if layer.locality > 0:
            logits = logits + locality_bias(control.shape[0], mel.shape[0], layer.stride, layer.locality, z.dtype)
        w = torch.exp(logits - logits.max(dim=1, keepdim=True).values)
        w = w / w.sum(dim=1, keepdim=True)
        heads.append(w @ v[:, sl])
    attended = z + torch.cat(heads, dim=1) @ layer.o.weight.T
    sel = attended[control.shape[0]:]
    hidden = F.gelu(sel @ layer.ffn[0].weight.T + layer.ffn[0].bias)
    return mel + layer.gate * (hidden @ layer.ffn[2].weight.T + layer.ffn[2].bias)


@pytest.mark.parametrize("locality", [0.0, 0.5])
def test_fusion_matches_attention_oracle(locality):
    torch.manual_seed(0)
    layer = FusionLayer(4, 2, 2, stride=2, locality=locality).double()
    with torch.no_grad():
        layer.gate.fill_(0.7)
    mel = torch.randn(3, 4, dtype=torch.float64)
    control = torch.randn(2, 4, dtype=torch.float64)
    assert torch.allclose(fusion_forward(mel, control, layer), _attention_oracle(mel, control, layer), atol=1e-5)


def test_fusion_without_locality_is_plain_self_attention():
    torch.manual_seed(4)
    plain = FusionLayer(4, 2, 2, stride=2, locality=0.0).double()
    biased = FusionLayer(4, 2, 2, stride=2, locality=0.5).double()
    biased.load_state_dict(plain.state_dict())
    with torch.no_grad():
        plain.gate.fill_(0.9)
        biased.gate.fill_(0.9)
    mel = torch.randn(6, 4, dtype=torch.float64)
    control = torch.randn(3, 4, dtype=torch.float64)
    perm = torch.tensor([5, 3, 0, 1, 4, 2])

    tokens = plain.norm(torch.cat([control, mel]))
    attention = F.scaled_dot_product_attention(
        plain.q(tokens).reshape(9, 2, 2).transpose(0, 1),
        plain.k(tokens).reshape(9, 2, 2).transpose(0, 1),
        plain.v(tokens).reshape(9, 2, 2).transpose(0, 1),
    ).transpose(0, 1).reshape(9, 4)
    expected = mel + plain.gate * plain.ffn((tokens + plain.o(attention))[3:])
    assert torch.allclose(fusion_forward(mel, control, plain), expected, atol=1e-10)

    assert torch.allclose(fusion_forward(mel[perm], control, plain), fusion_forward(mel, control, plain)[perm],
                          atol=1e-10)
    assert not torch.allclose(fusion_forward(mel[perm], control, biased), fusion_forward(mel, control, biased)[perm],
                              atol=1e-6)


def test_fusion_zero_gate_identity_and_empty_group():
    torch.manual_seed(1)
    layer = FusionLayer(4, 1, 2, stride=4, locality=0.5)
    mel = torch.randn(5, 4)
    assert torch.equal(fusion_forward(mel, torch.randn(2, 4), layer), mel)
    with torch.no_grad():
        layer.gate.fill_(1.0)
    out = fusion_forward(mel, torch.zeros(0, 4), layer)
    assert out.shape == mel.shape and torch.isfinite(out).all()
    with pytest.raises(ParameterError):
        fusion_forward(mel, torch.randn(2, 3), layer)


def test_fusion_add_mode():
    torch.manual_seed(2)
    layer = FusionLayer(4, 1, 1, stride=2, mode="add")
    with torch.no_grad():
        layer.gate.fill_(1.0)
    mel = torch.randn(2, 6, 4)
    control = torch.randn(2, 3, 4)
    up = control.repeat_interleave(2, dim=1)
    assert torch.allclose(fusion_forward(mel, control, layer), mel + layer.ffn(layer.norm(up)))


def test_zero_gate_identity_over_random_inputs(tiny_config, rng):
    model = ToyModel(tiny_config)
    for _ in range(50):
        x = torch.as_tensor(rng.normal(size=(3, 8, 4)), dtype=torch.float32)
        text = torch.as_tensor(rng.normal(size=(3, 2, 4)), dtype=torch.float32)
        control = torch.as_tensor(rng.normal(size=(3, 8, 8)), dtype=torch.float32)
        t = torch.as_tensor(rng.integers(1, 21, 3))
        with torch.no_grad():
            plain = model.predict_noise(x, t, text, None)
            fused = model.predict_noise(x, t, text, control)
        assert torch.max((plain - fused).abs()) <= 1e-6


def test_predict_noise_deterministic_and_shape_errors(tiny_config, rng):
    a, b = ToyModel(tiny_config), ToyModel(tiny_config)
    x = torch.as_tensor(rng.normal(size=(2, 8, 4)), dtype=torch.float32)
    text = torch.zeros(2, 2, 4)
    with torch.no_grad():
        assert torch.equal(a.predict_noise(x, 3, text), b.predict_noise(x, 3, text))
    with pytest.raises(ParameterError):
        a.predict_noise(x[:, :5], 3, text)
    with pytest.raises(ParameterError):
        a.predict_noise(x, 3, text, torch.zeros(2, 8, 5))


def test_predict_noise_hand_computed_single_layer():
    config = ToyConfig(latent_frames=2, latent_dim=2, mel_bins=2, hidden=2, n_heads=1, ff_mult=1, n_layers=1,
                       strides=[2], text_dim=2, text_tokens=1, label_dim=2, n_bins=4, timesteps=10,
                       sample_steps=2, sweep_steps=[1, 2])
    model = ToyModel(config, dtype=torch.float64)
    bb = model.backbone
    with torch.no_grad():
        for p in bb.parameters():
            p.zero_()
        bb.w_in.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 2.0]]))
        bb.text_proj.weight.copy_(torch.eye(2))
        layer = bb.layers[0]
        layer.v.weight.copy_(torch.eye(2))
        layer.o.weight.copy_(torch.tensor([[0.5, 0.0], [0.0, 0.5]]))
        bb.w_out.weight.copy_(torch.tensor([[1.0, 1.0], [0.0, 1.0]]))
        bb.w_out.bias.copy_(torch.tensor([0.1, -0.1]))
    x = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]], dtype=torch.float64)
    text = torch.tensor([[[2.0, -2.0]]], dtype=torch.float64)
    pos = sinusoidal_embedding(torch.arange(2), 2)
    # w_in: (x1, 2 x2); the one text token gets all attention: + 0.5 * (2, -2); ffn and time mlp are zero.
    h = torch.tensor([[1.0, 4.0], [3.0, 8.0]], dtype=torch.float64) + pos + torch.tensor([1.0, -1.0])
    want = torch.stack([h[:, 0] + h[:, 1] + 0.1, h[:, 1] - 0.1], dim=1)
    with torch.no_grad():
        got = model.predict_noise(x, 4, text)
    assert torch.allclose(got[0], want, atol=1e-5)


def test_parameter_partition(tiny_config):
    model = ToyModel(tiny_config)
    frozen = {id(p) for p in model.frozen_parameters()}
    trainable = {id(p) for p in model.trainable_parameters()}
    assert frozen and trainable and not frozen & trainable
    assert all(not p.requires_grad for p in model.backbone.parameters())
    assert all(float(layer.gate) == 0.0 for layer in model.fusion)
    assert sum(p.numel() for p in model.trainable_parameters()) <= 2000


def test_latent_projection_orthonormal(tiny_config):
    model = ToyModel(tiny_config, dtype=torch.float64)
    basis = model.backbone.latent_basis
    assert torch.allclose(basis.T @ basis, torch.eye(tiny_config.latent_dim, dtype=torch.float64), atol=1e-10)
    latent = torch.randn(3, tiny_config.latent_frames, tiny_config.latent_dim, dtype=torch.float64)
    assert torch.allclose(model.encode_mel(model.decode_latent(latent)), latent, atol=1e-10)
    assert torch.equal(ToyModel(tiny_config).backbone.latent_basis, basis.float())


def test_control_condition_with_dropped_sample(tiny_config, rng):
    model = ToyModel(tiny_config)
    controls = _controls(tiny_config, rng)
    drop = torch.tensor([False, True, False])
    emb = model.control_condition(controls, drop)
    assert emb.shape == (3, tiny_config.latent_frames, tiny_config.hidden)
    assert torch.equal(emb[1], model.encoder.null_control.expand(tiny_config.latent_frames, -1))
    with pytest.raises(ParameterError):
        ControlCondition("loudness", controls[1].value)
    with pytest.raises(ParameterError):
        ControlCondition("timestamp", controls[1].value)


def test_checkpoint_round_trip(tmp_path, tiny_config):
    model = ToyModel(tiny_config)
    with torch.no_grad():
        model.fusion[0].gate.fill_(0.25)
        model.encoder.cls.add_(1.0)
    path = tmp_path / "toy.catk"
    save_checkpoint(path, model)
    assert path.read_bytes()[:4] == b"CATK"
    loaded = load_checkpoint(path, tiny_config)
    for (name, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(a, b), name


def test_checkpoint_errors(tmp_path, tiny_config):
    path = tmp_path / "toy.catk"
    save_checkpoint(path, ToyModel(tiny_config))
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(path, tiny_config.model_copy(update={"seed": 99}))
    data = path.read_bytes()
    (tmp_path / "bad.catk").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.catk")
    (tmp_path / "short.catk").write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short.catk")


@pytest.fixture
def box_config(tiny_config):
    return tiny_config.model_copy(update={"timestamp_encoder": "box", "condition_types": ["timestamp"], "max_boxes": 3})


def _box_grid(config):
    grid = np.zeros((len(config.event_classes), config.latent_frames), dtype=np.uint8)
    grid[0, 1:4] = 1
    grid[1, 5:8] = 1
    return TimestampGrid(grid, 1.0)


def test_fourier_features():
    out = fourier_features(torch.tensor([[0.0, 0.5]], dtype=torch.float64), n_freqs=2)
    assert out.shape == (1, 8)
    assert torch.allclose(out[0, :4], torch.tensor([0.0, 0.0, 1.0, 1.0], dtype=torch.float64))
    assert torch.allclose(out[0, 4:], torch.tensor([1.0, 0.0, 0.0, -1.0], dtype=torch.float64), atol=1e-12)


def test_box_encoder_tokens(box_config):
    model = ToyModel(box_config, dtype=torch.float64)
    enc = model.encoder
    assert enc.n_tokens == 3 and all(layer.locality == 0.0 for layer in model.fusion)
    tokens = model.control_condition([ControlCondition("timestamp", _box_grid(box_config))])
    assert tokens.shape == (1, 3, box_config.hidden)

    label = enc.label_embedding()
    cls = enc.cls[0]
    for row, (d, onset, offset) in enumerate([(0, 1.0, 4.0), (1, 5.0, 8.0)]):
        coords = torch.tensor([onset / 8.0, offset / 8.0], dtype=torch.float64)
        expected = enc.box_encoder.mlp(torch.cat([label[d], fourier_features(coords)])) + cls
        assert torch.allclose(tokens[0, row], expected, atol=1e-12)
    assert torch.allclose(tokens[0, 2], enc.box_encoder.null_box + cls)

    groups = enc.downsample(tokens)
    assert len(groups) == box_config.n_layers and all(g is tokens for g in groups)
    assert model.encoder.null_embedding(2).shape == (2, 3, box_config.hidden)


def test_box_encoder_keeps_first_events(box_config):
    model = ToyModel(box_config.model_copy(update={"max_boxes": 1}), dtype=torch.float64)
    classes, spans = model.encoder.box_encoder.boxes(_box_grid(box_config), model.encoder.event_set)
    assert classes == [0] and spans == [(1.0 / 8.0, 4.0 / 8.0)]


def test_box_tokens_drive_the_fusion_net(box_config):
    model = ToyModel(box_config, dtype=torch.float64)
    x_t = torch.randn(1, box_config.latent_frames, box_config.latent_dim, dtype=torch.float64)
    text = model.embed_captions(["a dog"])
    tokens = model.control_condition([ControlCondition("timestamp", _box_grid(box_config))])
    assert torch.equal(model.predict_noise(x_t, 3, text, tokens), model.predict_noise(x_t, 3, text))
    with torch.no_grad():
        for layer in model.fusion:
            layer.gate.fill_(1.0)
    moved = np.roll(_box_grid(box_config).grid, 1, axis=1)
    other = model.control_condition([ControlCondition("timestamp", TimestampGrid(moved, 1.0))])
    assert not torch.allclose(model.predict_noise(x_t, 3, text, tokens), model.predict_noise(x_t, 3, text, other))
    with pytest.raises(ParameterError):
        model.predict_noise(x_t, 3, text, torch.zeros(1, box_config.latent_frames, box_config.hidden,
                                                        dtype=torch.float64))
    with pytest.raises(ParameterError):
        model.control_condition(_controls(box_config, np.random.default_rng(0))[1:2])


def test_box_encoder_config_rules(tiny_config):
    with pytest.raises(ValueError):
        ToyConfig.model_validate({**tiny_config.model_dump(), "timestamp_encoder": "box"})
    with pytest.raises(ValueError):
        ToyConfig.model_validate({**tiny_config.model_dump(), "timestamp_encoder": "box",
                                  "condition_types": ["timestamp"], "fusion_mode": "add"})


def test_box_model_trains_and_round_trips(tmp_path, box_config):
    model = ToyModel(box_config)
    history = Trainer(model).fit(probe_batches(model, box_config.seed, box_config.batch_size), steps=3, log_every=1)
    assert len(history) == 3 and all(math.isfinite(row["loss"]) for row in history)
    save_checkpoint(tmp_path / "box.catk", model)
    again = load_checkpoint(tmp_path / "box.catk", box_config)
    assert torch.equal(again.encoder.box_encoder.null_box, model.encoder.box_encoder.null_box)
