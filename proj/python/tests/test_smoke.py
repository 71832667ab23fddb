import json
import math

import numpy as np
import pytest

import exdiff


def test_schedule_values():
    assert exdiff.kernel_var(0.0) == 0.0
    assert exdiff.kernel_var(1.0) == pytest.approx(0.15131, abs=1e-4)
    assert exdiff.diffusion_coeff(0.0) == pytest.approx(0.10729, abs=1e-5)
    with pytest.raises(exdiff.InvalidArgument):
        exdiff.Schedule(sigma_min=0.6, sigma_max=0.5)


def test_kernel_mean_interpolates():
    x0 = np.ones((3, 4), dtype=complex)
    y = np.zeros((3, 4), dtype=complex)
    mu = exdiff.kernel_mean(x0, y, 0.5)
    assert np.allclose(mu, math.exp(-0.75))


def test_pc_sample_with_python_score():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    y = x0 + 0.5 * (rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)))
    out = exdiff.pc_sample(lambda x, yy, t: exdiff.kernel_score(x, x0, yy, t), y, n_steps=40, seed=3)
    assert np.linalg.norm(out - x0) / np.linalg.norm(x0) < 0.2
    with pytest.raises(exdiff.ShapeError):
        exdiff.pc_sample(lambda x, yy, t: np.zeros((2, 2), dtype=complex), y, n_steps=2)


def test_metrics_and_remix():
    pair = exdiff.synth_pair(1, 0)
    remixed = exdiff.remix_to_snr(pair["clean"], pair["interference"], 3.0)
    assert exdiff.si_sdr(remixed["mixture"], remixed["clean"]) == pytest.approx(3.0, abs=0.05)
    d = exdiff.si_decompose(remixed["mixture"], remixed["clean"], remixed["interference"])
    total = sum(float(np.dot(d[k], d[k])) for k in ("e_target", "e_inter", "e_artif"))
    assert total == pytest.approx(float(np.dot(remixed["mixture"], remixed["mixture"])), rel=1e-6)


def test_stft_round_trip():
    rng = np.random.default_rng(1)
    x = rng.normal(size=4000)
    p = exdiff.StftParams.desk()
    spec = exdiff.stft(x, p)
    assert spec.shape[0] == p.n_freq == 64
    back = exdiff.istft(spec, p)
    n = min(len(back), len(x))
    assert np.max(np.abs(back[200 : n - 200] - x[200 : n - 200])) < 1e-9
    c = exdiff.compress(spec)
    assert np.allclose(exdiff.decompress(c), spec)


def test_config_parsing():
    resolved = json.loads(exdiff.parse_config('{"task": "speech"}'))
    assert resolved["sampler"]["n_steps"] == 40
    with pytest.raises(exdiff.ParseError):
        exdiff.parse_config('{"nope": 1}')
    assert "schedule.gamma" in exdiff.config_reference()


def test_oracle_rows():
    rows = exdiff.run_oracle([0.5], n_paths=500, dt=0.01, seed=2)
    assert rows[0]["kernel_var"] == pytest.approx(exdiff.kernel_var(0.5))


def test_train_and_enhance(tmp_path):
    config = {
        "task": "speech",
        "stft": {"window_length": 126, "hop_length": 42, "fft_size": 126},
        "net": {"n_levels": 2, "base_channels": 4, "channel_multipliers": [1, 2], "attn_dim": 8, "time_embed_dim": 8},
        "latent": {"H": 16},
        "sampler": {"n_steps": 2},
        "data": {"chunk_frames": 16, "synth": {"n_pairs": 2, "min_seconds": 0.5, "max_seconds": 0.5}},
        "train": {"batch_size": 2},
    }
    losses = exdiff.train(json.dumps(config), str(tmp_path), steps=2)
    assert len(losses) == 2 and np.all(np.isfinite(losses))
    model = exdiff.load_model(str(tmp_path / "final.exdf"))
    assert model.parameter_count > 0
    noisy = exdiff.synth_pair(5, 0)["mixture"][:8000]
    out = exdiff.enhance(model, noisy, seed=1)
    assert out.shape == noisy.shape and np.all(np.isfinite(out))
