"""Experiment orchestration tests: config round-trips, seed streams, the
sweep result table, and a micro end-to-end pipeline."""

import dataclasses
import json

import numpy as np
import pytest

from koopcontrol import experiments


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = experiments.desk_preset()
    path = tmp_path / "cfg.json"
    experiments.save_config(cfg, path)
    back = experiments.load_config(path)
    assert back == cfg


def test_config_dict_roundtrip_all_fields():
    cfg = experiments.paper_preset()
    d = experiments.config_to_dict(cfg)
    assert d["format"] == experiments.CONFIG_FORMAT
    back = experiments.config_from_dict(json.loads(json.dumps(d)))
    assert back == cfg


def test_config_rejects_unknown_keys():
    d = experiments.config_to_dict(experiments.desk_preset())
    d["data"]["n_trajectories"] = 3
    with pytest.raises(experiments.ConfigError):
        experiments.config_from_dict(d)
    d2 = experiments.config_to_dict(experiments.desk_preset())
    d2["format"] = "other"
    with pytest.raises(experiments.ConfigError):
        experiments.config_from_dict(d2)


def test_presets_differ_where_expected():
    desk = experiments.desk_preset()
    paper = experiments.paper_preset()
    assert desk.data.n_train < paper.data.n_train
    assert desk.data.duration_s < paper.data.duration_s
    assert desk.train.max_epochs < paper.train.max_epochs
    assert paper.model.latent_dim == desk.model.latent_dim == 4
    assert set(experiments.PRESETS) == {"desk", "paper"}


def test_apply_overrides_copies():
    cfg = experiments.desk_preset()
    out = experiments.apply_overrides(cfg, seed=9, snr_db=10.0, latent_dim=6,
                                      name="sweep-cell")
    assert out.seed == 9
    assert out.link.snr_db == 10.0
    assert out.link.ideal is False
    assert out.model.latent_dim == 6
    assert out.name == "sweep-cell"
    # original untouched
    assert cfg.seed != 9 or cfg.model.latent_dim == 4
    assert cfg.link.snr_db is None


def test_control_settings_q_x():
    cfg = experiments.desk_preset()
    q = cfg.control.q_x()
    assert q.shape == (4, 4)
    assert np.array_equal(q, np.diag(cfg.control.q_x_diag))


# ---------------------------------------------------------------------------
# seed streams
# ---------------------------------------------------------------------------

def test_seed_streams_names_and_determinism():
    a = experiments.seed_streams(123)
    b = experiments.seed_streams(123)
    c = experiments.seed_streams(124)
    assert set(a) == set(experiments.STREAM_NAMES)
    assert a == b
    assert a != c
    assert all(isinstance(v, int) for v in a.values())
    # streams are mutually distinct within a seed
    assert len(set(a.values())) == len(a)


# ---------------------------------------------------------------------------
# result rows
# ---------------------------------------------------------------------------

def _row(**kw):
    base = dict(experiment="unit", seed=1, snr_db=0.0, latent_dim=4,
                n_train=2, state_nrmse=12.5, action_nrmse=8.0, msce=0.01,
                m_lost=3, epochs=7, train_s=1.25)
    base.update(kw)
    return experiments.ResultRow(**base)


def test_result_rows_csv_roundtrip(tmp_path):
    rows = [_row(seed=1), _row(seed=2, snr_db=None, state_nrmse=float("nan"))]
    path = tmp_path / "rows.csv"
    experiments.write_rows(rows, path)
    back = experiments.read_rows(path)
    assert len(back) == 2
    assert back[0] == rows[0]
    assert back[1].snr_db is None
    assert np.isnan(back[1].state_nrmse)
    assert back[1].seed == 2 and back[1].m_lost == 3


def test_read_rows_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        experiments.read_rows(path)


def test_report_groups_by_latent_dim():
    rows = [
        _row(seed=1, snr_db=-10.0, state_nrmse=30.0),
        _row(seed=2, snr_db=-10.0, state_nrmse=34.0),
        _row(seed=1, snr_db=10.0, state_nrmse=10.0),
        _row(seed=2, snr_db=10.0, state_nrmse=14.0),
        _row(seed=1, snr_db=10.0, latent_dim=8, state_nrmse=9.0),
    ]
    rep = experiments.report(rows, metric="state_nrmse")
    assert rep["format"] == experiments.REPORT_FORMAT
    assert rep["metric"] == "state_nrmse"
    series = {s["latent_dim"]: s for s in rep["series"]}
    assert series[4]["snr_db"] == [-10.0, 10.0]
    assert series[4]["mean"] == [32.0, 12.0]
    assert series[4]["n"] == [2, 2]
    assert series[8]["snr_db"] == [10.0]


# ---------------------------------------------------------------------------
# micro pipeline
# ---------------------------------------------------------------------------

def micro_cfg(seed=0, ideal=True, snr_db=None):
    cfg = experiments.desk_preset()
    cfg = dataclasses.replace(
        cfg,
        name="micro",
        seed=seed,
        data=dataclasses.replace(cfg.data, n_train=3, n_val=1, n_test=1,
                                 duration_s=4.0),
        train=dataclasses.replace(cfg.train, max_epochs=2, lr=1e-3,
                                  max_batches_per_epoch=20),
        link=dataclasses.replace(cfg.link, ideal=ideal, snr_db=snr_db),
        control=dataclasses.replace(cfg.control, n_loops=100),
    )
    return cfg


@pytest.fixture(scope="module")
def micro_run():
    cfg = micro_cfg()
    return cfg, experiments.run_experiment(cfg)


def test_run_experiment_summary_fields(micro_run):
    _, summary = micro_run
    for key in ("experiment", "seed", "state_nrmse", "action_nrmse", "msce",
                "m_lost", "epochs", "train_s"):
        assert key in summary
    assert summary["experiment"] == "micro"
    assert np.isfinite(summary["state_nrmse"])
    assert np.isfinite(summary["msce"])
    assert summary["m_lost"] == 0   # ideal link loses nothing
    assert summary["epochs"] >= 1


def test_run_experiment_bit_reproducible(micro_run):
    cfg, first = micro_run
    again = experiments.run_experiment(cfg)
    for key in ("state_nrmse", "action_nrmse", "msce"):
        assert again[key] == first[key], key
    assert again["m_lost"] == first["m_lost"]


def test_run_experiment_seed_changes_results(micro_run):
    cfg, first = micro_run
    other = experiments.run_experiment(micro_cfg(seed=1))
    assert other["state_nrmse"] != first["state_nrmse"]


def test_training_steps_reduce_validation_loss():
    cfg = micro_cfg()
    cfg = dataclasses.replace(cfg,
                              train=dataclasses.replace(cfg.train,
                                                        max_epochs=6))
    streams = experiments.seed_streams(cfg.seed)
    dataset = experiments.make_dataset(cfg, streams)
    model, result, gain, gains = experiments.train_sensing(cfg, dataset,
                                                           streams)
    assert result.epochs == 6
    vals = [s.val_loss for s in result.history]
    assert vals[-1] < vals[0]
    assert result.best_val == min(vals)
    assert gain.shape == (1, cfg.model.latent_dim)
    assert len(gains) == result.epochs


def test_sweep_writes_table_and_errors_sidecar(tmp_path):
    cfg = micro_cfg(ideal=False)
    out = tmp_path / "sweep.csv"
    rows = experiments.run_sweep(cfg, snr_values=[0.0, 20.0], seeds=[0],
                                 out_csv=out)
    assert out.exists()
    back = experiments.read_rows(out)
    assert len(back) == len(rows) == 2
    assert sorted(r.snr_db for r in back) == [0.0, 20.0]
    assert all(np.isfinite(r.state_nrmse) for r in back)
    assert not (tmp_path / "sweep.csv.errors.csv").exists()
