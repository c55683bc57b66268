import numpy as np
import pytest

from stmfa import tensor as T
from stmfa.config import ModelConfig, RunConfig
from stmfa.data import render_clip, sample_scene
from stmfa.errors import ContractError, NumericalError
from stmfa.gradcheck import check_micro_model, micro_model_config
from stmfa.losses import generator_total_loss
from stmfa.model import (
    LOG_COLUMNS,
    Discriminator,
    EpochSampler,
    Generator,
    build_models,
    evaluate,
    load_state,
    model_state,
    train,
)

SMALL = dict(input_frames=4, predict_frames=2, base_channels=4, rrdb_units=2, swam_levels=2, lstm_hidden=4)


def small(**kw):
    return ModelConfig(**dict(SMALL, **kw))


def frames(rng, n=4, batch=2, hw=8):
    return [rng.uniform(size=(batch, hw, hw, 1)) for _ in range(n)]


def test_rrdb_zero_weights_zero_input():
    gen = Generator(small())
    for p in gen.params.values():
        p.value[...] = 0.0
    out = gen.rrdb_unit(T.constant(np.zeros((1, 8, 8, 1))), 0)
    assert out.shape == (1, 4, 4, 4)
    np.testing.assert_array_equal(out.value, 0.0)


def test_rrdb_dense_path_gets_gradient(rng):
    gen = Generator(small())
    out = gen.rrdb_unit(T.constant(rng.uniform(size=(1, 8, 8, 1))), 0)
    T.backward(T.sum_(T.square(out)))
    for name in ("gen.rrdb0.conv1.w", "gen.rrdb0.conv2.w", "gen.rrdb0.proj.w"):
        assert np.linalg.norm(gen.params[name].grad) > 0


def test_swam_shapes_and_constant_detail():
    gen = Generator(ModelConfig(base_channels=4, lstm_hidden=4))
    ll = T.constant(np.full((1, 32, 32, 1), 0.4))
    chain = []
    x = T.constant(np.full((1, 32, 32, 1), 0.4))
    for u in range(3):
        x = gen.rrdb_unit(x, u)
        feats, ll = gen.swam(ll, u)
        assert feats.shape == x.shape
        chain.append(ll.shape[1])
    assert chain == [16, 8, 4]
    from stmfa.wavelet import wavelet_spatial

    bands = wavelet_spatial(np.full((1, 8, 8, 1), 0.4)).value
    np.testing.assert_allclose(bands[..., 1:], 0.0, atol=1e-15)


def test_twam_static_clip_zero_highs_and_alignment(rng):
    gen = Generator(small())
    frame = rng.uniform(size=(1, 8, 8, 1))
    out = gen.twam([T.constant(frame)] * 4)
    assert out.shape == (1, 2, 2, gen.twam_width)
    from stmfa.wavelet import multilevel_temporal

    tb = multilevel_temporal(np.repeat(frame[0][None], 4, axis=0))
    assert all(np.all(np.abs(lvl["high"]) < 1e-15) for lvl in tb.levels)


def test_twam_sensitive_to_motion():
    gen = Generator(ModelConfig(base_channels=4, lstm_hidden=4, input_frames=8))
    moving = render_clip(sample_scene("two-speed", 2, frames=8))
    static = render_clip(sample_scene("static", 2, frames=8))
    a = gen.twam([T.constant(f[None]) for f in moving]).value
    b = gen.twam([T.constant(f[None]) for f in static]).value
    assert not np.allclose(a, b)


def test_fuse_shapes_and_zero_substitute(rng):
    gen = Generator(small(ablation="no_twam"))
    h = T.constant(rng.normal(size=(1, 2, 2, 4)))
    out = gen.fuse(h, None)
    assert out.shape == (1, 2, 2, gen.decoder_width)
    explicit = gen.fuse(h, T.constant(np.zeros((1, 2, 2, gen.twam_width))))
    np.testing.assert_array_equal(out.value, explicit.value)
    with pytest.raises(ContractError):
        gen.fuse(h, T.constant(np.zeros((1, 4, 4, gen.twam_width))))


def test_fuse_gradient_reaches_both_branches(rng):
    gen = Generator(small())
    h = T.Node(rng.normal(size=(1, 2, 2, 4)), requires_grad=True)
    tw = T.Node(rng.normal(size=(1, 2, 2, gen.twam_width)), requires_grad=True)
    T.backward(T.sum_(T.square(gen.fuse(h, tw))))
    assert np.linalg.norm(h.grad) > 0 and np.linalg.norm(tw.grad) > 0


def test_encode_step_determinism_and_state_shape(rng):
    gen = Generator(small())
    f = T.constant(rng.uniform(size=(2, 8, 8, 1)))
    s0 = gen.init_state(f.shape)
    a = gen.encode_step(f, gen.encode_step(f, s0))
    b = gen.encode_step(f, gen.encode_step(f, s0))
    assert a.h.value.tobytes() == b.h.value.tobytes()
    assert a.h.shape == s0.h.shape == (2, 2, 2, 4) and a.step == 2


def test_no_swam_changes_output(rng):
    inputs = frames(rng)
    full = Generator(small()).predict_sequence(inputs, 1)[0].value
    ablated = Generator(small(ablation="no_swam")).predict_sequence(inputs, 1)[0].value
    assert not np.allclose(full, ablated)


def test_frame_divisibility(rng):
    gen = Generator(small())
    with pytest.raises(ContractError):
        gen.predict_sequence([rng.uniform(size=(1, 6, 6, 1))] * 4, 1)
    with pytest.raises(ContractError):
        gen.predict_sequence([rng.uniform(size=(1, 8, 8, 1))] * 3, 1)


def test_decode_range_and_shape(rng):
    gen = Generator(small())
    preds = gen.predict_sequence(frames(rng), 3)
    assert len(preds) == 3
    for p in preds:
        assert p.shape == (2, 8, 8, 1)
        assert np.all((p.value >= 0) & (p.value <= 1))


def test_predict_n1_is_single_decode(rng):
    gen = Generator(small())
    inputs = [T.constant(f) for f in frames(rng)]
    state = gen.init_state(inputs[0].shape)
    for f in inputs:
        state = gen.encode_step(f, state)
    manual = gen.decode(gen.fuse(state.h, gen.twam(inputs)))
    np.testing.assert_array_equal(gen.predict_sequence(inputs, 1)[0].value, manual.value)


def test_predict_deterministic_and_unbatched(rng):
    gen = Generator(small())
    clip = rng.uniform(size=(4, 8, 8, 1))
    a, b = gen.predict(clip, 2), gen.predict(clip.copy(), 2)
    assert a.shape == (2, 8, 8, 1) and a.tobytes() == b.tobytes()


def test_discriminator_range_and_zero_weights(rng):
    cfg = small()
    disc = Discriminator(cfg)
    inputs = frames(rng)
    seq = frames(rng, 2)
    p = disc(inputs, seq).value
    assert p.shape == (2, 1) and np.all((p > 0) & (p < 1))
    for q in disc.params.values():
        q.value[...] = 0.0
    np.testing.assert_array_equal(disc(inputs, seq).value, 0.5)


def test_discriminator_accepts_stacked_sequence(rng):
    disc = Discriminator(small())
    inputs, seq = frames(rng), frames(rng, 2)
    a = disc(inputs, seq).value
    b = disc(inputs, T.stack([T.constant(s) for s in seq], 1)).value
    np.testing.assert_array_equal(a, b)


def test_ablation_parameter_sets():
    names = {a: set(build_models(small(ablation=a))[0].params) for a in ("full", "no_swam", "no_twam", "no_wam")}
    swam = {n for n in names["full"] if n.startswith("gen.swam")}
    twam = {n for n in names["full"] if n.startswith("gen.twam")}
    assert swam and twam
    assert names["no_swam"] == names["full"] - swam
    assert names["no_twam"] == names["full"] - twam
    assert names["no_wam"] == names["full"] - swam - twam


def test_no_wam_fewer_flops(rng):
    inputs = frames(rng)
    counts = {}
    for a in ("full", "no_wam"):
        gen = Generator(small(ablation=a))
        with T.count_flops() as fc:
            gen.predict_sequence(inputs, 2)
        counts[a] = fc.total
    assert counts["no_wam"] < counts["full"]


def test_every_parameter_receives_gradient(rng):
    cfg = small()
    gen, disc = build_models(cfg)
    clip = rng.uniform(size=(2, 6, 8, 8, 1))
    inputs = [clip[:, t] for t in range(4)]
    preds = gen.predict_sequence(inputs, 2)
    loss = generator_total_loss(clip[:, 4:], T.stack(preds, 1), disc(inputs, preds), cfg.weights)
    T.backward(loss)
    dead = [n for n, p in gen.params.items() if p.grad is None or np.linalg.norm(p.grad) == 0]
    assert dead == []


def test_micro_model_gradcheck():
    cfg = micro_model_config()
    gen, _ = build_models(cfg)
    assert sum(p.value.size for p in gen.params.values()) <= 500
    result, count = check_micro_model(0)
    assert count <= 500
    assert result.max_rel_error <= 1e-3


def test_state_roundtrip_and_mismatch(rng):
    gen, disc = build_models(small())
    state = {k: v.copy() for k, v in model_state(gen, disc).items()}
    other, other_d = build_models(small(seed=9))
    load_state(other, other_d, state)
    for k in gen.params:
        np.testing.assert_array_equal(other.params[k].value, gen.params[k].value)
    wrong, _ = build_models(small(base_channels=6))
    with pytest.raises(ContractError, match="gen.rrdb0"):
        load_state(wrong, None, state)


def test_epoch_sampler_covers_every_clip():
    data = np.arange(10)[:, None]
    s = EpochSampler(data, 3, np.random.default_rng(0))
    seen = np.concatenate([s.next()[:, 0] for _ in range(3)])
    assert len(set(seen.tolist())) == 9


def tiny_run(rng, **changes):
    clips = [rng.uniform(size=(6, 8, 8, 1)) for _ in range(4)]
    cfg = RunConfig(small(), RunConfig().train).replace(iterations=6, batch_size=2, **changes)
    return clips, cfg


def test_train_writes_outputs_and_is_reproducible(tmp_path, rng):
    clips, cfg = tiny_run(rng)
    a = train(clips, cfg, tmp_path / "a")
    b = train(clips, cfg, tmp_path / "b")
    for name in ("train_log.csv", "checkpoint.stmc", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a/train_log.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == LOG_COLUMNS
    assert len(a.log) == 6


def test_train_lambda2_zero_regression_decreases():
    cfg = RunConfig(small(lstm_hidden=4, base_channels=4), RunConfig().train).replace(
        iterations=200, batch_size=4, lambda2=0.0, lr_decay="none"
    )
    clips = [render_clip(sample_scene("two-speed", s, canvas=(8, 8), frames=6)) for s in range(8)]
    res = train(clips, cfg)
    img = np.array([r["loss_l2"] + r["loss_gdl"] for r in res.log])
    windows = img.reshape(-1, 20).mean(axis=1)
    assert windows[-1] < windows[0]


def test_train_non_finite_dumps_diagnostics(tmp_path, rng, monkeypatch):
    clips, cfg = tiny_run(rng)
    import stmfa.model as M

    real = M._train_step

    def bad_step(*args):
        row = real(*args)
        if row["iter"] == 3:
            row["loss_g"] = float("nan")
        return row

    monkeypatch.setattr(M, "_train_step", bad_step)
    with pytest.raises(NumericalError, match="iteration 3"):
        train(clips, cfg, tmp_path)
    assert (tmp_path / "diagnostic_batch.stmf").exists()
    assert "iteration=3" in (tmp_path / "diagnostic.txt").read_text()


def test_evaluate_reports_baseline(rng):
    gen = Generator(small())
    clips = [rng.uniform(size=(6, 16, 16, 1)) for _ in range(2)]
    m = evaluate(gen, clips)
    assert set(m) == {"psnr", "ssim", "baseline_psnr", "baseline_ssim"}
    assert np.isfinite(m["psnr"]) and np.isfinite(m["baseline_psnr"])
