"""End-to-end acceptance checks, one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary.
The desk-scale checks (criteria 5 and 7) train real models and take minutes.
"""
import json
import shutil
import time

import numpy as np
import pytest

from _toys import ae_toy_windows, lstm_toy_windows, overfit_ae, overfit_lstm
from conftest import make_series, record_acceptance
from smcforge.cli import main
from smcforge.eval.ablation import ablation_experiment, forecast_lstm, train_lstm
from smcforge.eval.baseline import baseline_invert
from smcforge.eval.render import NAN_RGB, heatmap_rgb, render_heatmap
from smcforge.models.ae import AeModel
from smcforge.models.config import AeConfig, LstmConfig
from smcforge.models.lstm import LstmModel
from smcforge.models.train import masked_mse_value
from smcforge.nn import autograd as ag
from smcforge.nn.autograd import Tensor
from smcforge.nn.cells import ConvLstmCellParams, LstmCellParams, convlstm_step, lstm_step
from smcforge.nn.gradcheck import check_gradients
from smcforge.pipeline import bundled_config, cmd_simulate, load_config, load_prepared
from smcforge.raster import ChannelId, cube_read, cube_write
from smcforge.simworld import generate_world

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """The bundled desk config, simulated to disk and loaded back through the pipeline."""
    root = tmp_path_factory.mktemp("desk")
    cfg, _ = load_config(bundled_config("desk"), workdir=root)
    cmd_simulate(cfg, root)
    prepared, _ = load_prepared(cfg, root)
    return cfg, prepared


# -- 1 ------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    start = time.process_time()
    rng = np.random.default_rng(0)
    worst = {}

    ae_cfg = AeConfig(stem_channels=(2, 2), layers=2, hidden=2, T=2, K=1)
    ae = AeModel(ae_cfg, seed=1).astype(np.float64)
    for p in ae.params.values():          # make the zero-initialized head non-trivial
        if not p.data.any():
            p.data[:] = rng.normal(0, 0.5, p.shape)
    frames = rng.normal(size=(2, 2, 14, 4, 4))
    target = rng.uniform(0.1, 0.4, size=(2, 1, 1, 4, 4))
    mask = (rng.random(target.shape) > 0.25).astype(float)
    for r in check_gradients(lambda: ag.masked_mse(ae.forward(frames), target, mask), ae.params):
        worst[f"ae/{r.name}"] = r.rel_error

    lstm = LstmModel(LstmConfig(hidden=4, T=3), seed=2).astype(np.float64)
    lstm.params["head.W"].data[:] = rng.normal(0, 0.5, lstm.params["head.W"].shape)
    x = rng.normal(size=(3, 3, 14))
    y = rng.uniform(0.1, 0.4, size=(3, 3))
    for r in check_gradients(lambda: ag.masked_mse(lstm.forward(x), y), lstm.params):
        worst[f"lstm/{r.name}"] = r.rel_error

    elapsed = time.process_time() - start
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-4 and elapsed < 60
    record_acceptance(1, "gradient correctness", ok,
                      f"{len(worst)} parameter tensors, worst relative error {err:.2e} ({name}), {elapsed:.1f}s CPU")
    assert err < 1e-4, (name, err)
    assert elapsed < 60


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_cell_equivalence():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        cin, hid, k = int(r.integers(1, 6)), int(r.integers(1, 6)), int(r.choice([1, 3, 5]))
        p = ConvLstmCellParams.init(r, cin, hid, k, dtype=np.float32)
        p.b.data[:] = r.normal(size=p.b.shape).astype(np.float32)
        q = LstmCellParams.from_conv(p)
        N = int(r.integers(1, 5))
        x, h, c = (r.normal(size=(N, n)).astype(np.float32) for n in (cin, hid, hid))
        hc, cc = convlstm_step(p, Tensor(x[:, :, None, None]), Tensor(h[:, :, None, None]), Tensor(c[:, :, None, None]))
        hd, cd = lstm_step(q, Tensor(x), Tensor(h), Tensor(c))
        worst = max(worst, float(np.abs(hc.data[:, :, 0, 0] - hd.data).max()),
                    float(np.abs(cc.data[:, :, 0, 0] - cd.data).max()))
    record_acceptance(2, "cell equivalence", worst <= 1e-6, f"100 cases, max |difference| {worst:.2e}")
    assert worst <= 1e-6


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_format_round_trip(tmp_path):
    channel_pool = [c for c in ChannelId]
    failures = 0
    for i in range(50):
        r = np.random.default_rng(100 + i)
        chans = tuple(r.choice(channel_pool, size=int(r.integers(1, 6)), replace=False))
        series = make_series(T=int(r.integers(1, 6)), channels=chans, H=int(r.integers(1, 9)),
                             W=int(r.integers(1, 9)), seed=i, nan_frac=float(r.choice([0.0, 0.2, 1.0])))
        path = tmp_path / f"s{i}.smc1"
        cube_write(series, path)
        back = cube_read(path)
        same = (back.timestamps.tolist() == series.timestamps.tolist()
                and back.geo == series.geo and back.cadence == series.cadence
                and all(a.channel_ids == b.channel_ids for a, b in zip(back.stacks, series.stacks))
                and back.array().tobytes() == series.array().tobytes())
        failures += not same
    record_acceptance(3, "format round-trip", failures == 0, f"{50 - failures}/50 series bitwise identical")
    assert failures == 0


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_water_conservation(desk):
    cfg, _ = desk
    assert cfg.sim.days == 730
    f = generate_world(cfg.sim).fluxes
    th = f["theta64"]
    resid = (th[1:] - th[:-1]) - (f["infiltration"][1:] - f["et"][1:] - f["drainage"][1:])
    ok = ~f["clamped"][1:]
    worst = float(np.abs(resid[ok]).max())
    record_acceptance(4, "water conservation", worst <= 1e-6,
                      f"730 days, {ok.sum()} unclamped pixel-steps, max residual {worst:.2e}")
    assert worst <= 1e-6


# -- 5 ------------------------------------------------------------------------

def test_criterion_5a_noiseless_inversion(desk):
    from dataclasses import replace
    cfg, _ = desk
    world = generate_world(replace(cfg.sim, noise_db=0.0))
    worst = 0.0
    for day in world.s1_days:
        stack = world.scenes.stacks[[s.timestamp for s in world.scenes.stacks].index(day)]
        i = world.day_index(day)
        est = baseline_invert(stack.get(ChannelId.VV_DB).values, world.ndvi_truth[i],
                              stack.get(ChannelId.INC_DEG).values)
        worst = max(worst, float(np.abs(est - world.theta[i]).max()))
    record_acceptance("5a", "noiseless baseline inversion", worst < 1e-5,
                      f"{len(world.s1_days)} radar acquisitions, max error {worst:.2e}")
    assert worst < 1e-5


def test_criterion_5b_lstm_held_out_rmse(desk):
    cfg, prepared = desk
    start = time.process_time()
    model, _ = train_lstm(prepared, cfg.lstm, cfg.train.lstm, cfg.train.seed)
    rows = dict(forecast_lstm(model, prepared).rows())
    elapsed = time.process_time() - start
    rmse = rows["all"].rmse
    per_h = ", ".join(f"h{h} {r.rmse:.4f}" for h, r in rows.items() if h != "all")
    ok = rmse <= 0.03 and elapsed < 15 * 60
    record_acceptance("5b", "LSTM held-out RMSE", ok,
                      f"RMSE {rmse:.4f} (limit 0.03) over {rows['all'].n} held-out points [{per_h}], "
                      f"{elapsed:.0f}s CPU")
    assert rmse <= 0.03
    assert elapsed < 15 * 60


# -- 6 ------------------------------------------------------------------------

def test_criterion_6_overfit_capability():
    ae, ae_res = overfit_ae(epochs=500)
    ae_mse = masked_mse_value(ae, ae_toy_windows(ae.cfg))
    lstm, lstm_res = overfit_lstm(epochs=300)
    lstm_mse = masked_mse_value(lstm, lstm_toy_windows(lstm.cfg))
    ok = ae_mse < 1e-3 and lstm_mse < 1e-4
    record_acceptance(6, "overfit capability", ok,
                      f"AE 4 windows 8x8 MSE {ae_mse:.2e} after 500 epochs (limit 1e-3); "
                      f"LSTM 2 sites x 50 days MSE {lstm_mse:.2e} after 300 epochs (limit 1e-4)")
    assert ae_mse < 1e-3
    assert lstm_mse < 1e-4


# -- 7 ------------------------------------------------------------------------

def test_criterion_7_ablation_claims(desk):
    cfg, prepared = desk
    assert len(cfg.eval.seeds) >= 3
    start = time.process_time()
    report = ablation_experiment(prepared, (0.05, 0.25, 1.0), cfg.eval.seeds, cfg.ablation_settings())
    elapsed = time.process_time() - start
    m = {(k, f): float(report.rmse(k, f).mean()) for k in ("ae", "lstm", "constant") for f in (0.05, 0.25, 1.0)}
    ratio = max(m["ae", 1.0], m["lstm", 1.0]) / min(m["ae", 1.0], m["lstm", 1.0])
    small_ok = m["lstm", 0.05] < m["ae", 0.05]
    band_ok = ratio <= 1.5
    ok = small_ok and band_ok and elapsed < 45 * 60
    table = "; ".join(f"{f:g}: AE {m['ae', f]:.4f} LSTM {m['lstm', f]:.4f} const {m['constant', f]:.4f}"
                      for f in (0.05, 0.25, 1.0))
    record_acceptance(7, "ablation orderings", ok,
                      f"mean RMSE over {len(cfg.eval.seeds)} seeds [{table}]; LSTM<AE at 0.05: {small_ok}; "
                      f"ratio at 1.0 {ratio:.2f} (limit 1.5); {elapsed / 60:.1f} min CPU")
    assert small_ok
    assert band_ok
    assert elapsed < 45 * 60


# -- 8 ------------------------------------------------------------------------

MINI = {
    "sim": {"grid": {"width": 8, "height": 8}, "n_sites": 8, "n_regions": 3, "days": 200, "seed": 5},
    "ae": {"stem_channels": [8, 8], "hidden": 8, "T": 6, "K": 3},
    "lstm": {"hidden": 16, "T": 6, "K": 3, "residual": True},
    "train": {"seed": 1, "ae": {"epochs": 2, "batch_size": 8},
              "lstm": {"epochs": 2, "batch_size": 32, "channel_mask": 0.25}},
    "eval": {"fractions": [0.05, 0.25, 1.0], "seeds": [0, 1, 2]},
    "predict": {"start": "2015-07-10", "end": "2015-07-12"},
    "paths": {"workdir": "run"},
}


def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "mini.json"
    cfg.write_text(json.dumps(MINI))
    commands = ("simulate", "train", "predict", "evaluate", "compare", "ndvi-map")

    def run_all(workdir):
        hashes = {}
        for c in commands:
            assert main([c, "--config", str(cfg), "--workdir", str(workdir)]) == 0, c
            hashes[c] = json.loads((workdir / "manifests" / f"{c}.json").read_text())["outputs"]
        return hashes

    first = run_all(tmp_path / "a")
    second = run_all(tmp_path / "b")                    # fresh directory
    shutil.rmtree(tmp_path / "a" / "models")
    third = run_all(tmp_path / "a")                     # rerun over existing outputs
    n_files = sum(len(v) for v in first.values())
    ok = first == second == third and n_files > 0
    differing = [c for c in commands if not first[c] == second[c] == third[c]]
    record_acceptance(8, "determinism", ok,
                      f"{len(commands)} commands x 3 runs, {n_files} output files; differing: {differing or 'none'}")
    assert ok, differing


# -- 9 ------------------------------------------------------------------------

def test_criterion_9_rendering(tmp_path):
    rgb = heatmap_rgb(np.array([[0.45, 0.05, np.nan]]), 0.05, 0.45)
    wet, dry, nan = (tuple(int(v) for v in rgb[0, i]) for i in range(3))
    vals = np.random.default_rng(3).uniform(0.0, 0.5, (16, 16))
    vals[::5, ::3] = np.nan
    a = render_heatmap(vals, 0.05, 0.45, tmp_path / "a.png").read_bytes()
    b = render_heatmap(vals.copy(), 0.05, 0.45, tmp_path / "b.png").read_bytes()
    ok = wet == (30, 60, 255) and dry == (220, 40, 30) and nan == NAN_RGB == (128, 128, 128) and a == b
    record_acceptance(9, "rendering", ok, f"wet {wet}, dry {dry}, NaN {nan}, PNG bytes identical: {a == b}")
    assert ok
