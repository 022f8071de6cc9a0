"""UNN-FWI final SSIM is insensitive to the noise-input and weight-init seeds."""

import warnings

import pytest

from unnfwi.config import apply_seed_overrides, preset
from unnfwi.experiment import build_setup, field_metrics
from unnfwi.inversion import run_method

pytestmark = pytest.mark.slow


def test_unn_fwi_seed_spread_desk_500k(monkeypatch, tmp_path):
    monkeypatch.setenv("UNNFWI_CACHE", str(tmp_path))
    base = preset("desk-500k")
    setup = build_setup(base)
    scores = []
    for seed in (0, 1, 2):
        cfg = apply_seed_overrides(base, [f"noise={seed}", f"init={seed}"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_method("unn-fwi", setup.problem, cfg.options())
        scores.append(field_metrics(res.field, setup.truth, cfg)["image"].ssim)
    spread = max(scores) - min(scores)
    print(f"\nunn-fwi desk-500k SSIM over seeds 0-2: {[round(s, 4) for s in scores]}, spread {spread:.4f}")
    assert spread < 0.05
