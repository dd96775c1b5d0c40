import json

import numpy as np
import pytest

from multimark import io
from multimark.cli import main
from multimark.diagnostics import score_study, summarize
from multimark.histories import ObservedData
from multimark.sampler import Chain, SamplerConfig, run_chain

from conftest import TOY_RECORDS

FAST = ["--chains", "2", "--burnin", "100", "--iters", "300"]


# ---------------------------------------------------------------- file formats

def test_history_file_round_trip(tmp_path, toy):
    p = tmp_path / "d.hist"
    io.write_histories(p, toy, "toy data\nsecond line")
    assert io.read_histories(p) == toy
    assert p.read_text().startswith("# toy data\n# second line\n")


def test_history_file_default_count_and_comments(tmp_path):
    p = tmp_path / "d.hist"
    p.write_text("# header\nL0\n\n0R,3\nL0\n")
    d = io.read_histories(p)
    assert [str(h) for h in d.histories] == ["L0", "0R"] and d.counts == (2, 3)


@pytest.mark.parametrize("text", ["L0\nL00\n", "L0,1,2\n", "LX\n", "# nothing\n", "L0,abc\n"])
def test_history_file_errors(tmp_path, text):
    p = tmp_path / "bad.hist"
    p.write_text(text)
    with pytest.raises(ValueError):
        io.read_histories(p)


def test_toy_data_file():
    assert io.read_histories("data/toy.hist") == ObservedData.from_records(TOY_RECORDS)


def test_chain_csv_round_trip_is_exact(tmp_path, toy):
    ch = run_chain(toy, SamplerConfig(n_chains=1, burn_in=10, n_iterations=40))
    p = tmp_path / "c.csv"
    io.write_chain_csv(p, ch)
    back = io.read_chain_csv(p)
    assert back.columns == ch.columns
    assert np.array_equal(back.values, ch.values) and np.array_equal(back.sweeps, ch.sweeps)


def test_summary_and_truth_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    chains = [Chain(["sweep", "phi_1", "gamma_1"], np.arange(1, 101), rng.random((100, 2)), {}) for _ in range(2)]
    s = summarize(chains)
    io.write_summary_csv(tmp_path / "s.csv", s)
    assert io.read_summary_csv(tmp_path / "s.csv").params == s.params
    truth = {"phi_1": 0.1 + 0.2, "gamma_1": 1 / 3}
    io.write_truth_csv(tmp_path / "t.csv", truth)
    assert io.read_truth_csv(tmp_path / "t.csv") == truth


def test_study_csv_layout(tmp_path):
    rng = np.random.default_rng(1)
    chains = [Chain(["sweep", "phi_1"], np.arange(1, 51), rng.random((50, 1)), {}) for _ in range(2)]
    score = score_study([({"phi_1": 0.5}, summarize(chains))], "m")
    io.write_study_csv(tmp_path / "st.csv", {"m": score})
    table = io.read_study_csv(tmp_path / "st.csv")
    assert table[("phi", "Cover")]["m"] == score.coverage["phi"]
    assert np.isnan(table[("f", "MSE")]["m"])


def test_manifest(tmp_path):
    import datetime as dt

    inp = tmp_path / "in.txt"
    inp.write_text("x")
    m = io.write_manifest(tmp_path / "m.json", "fit", {"a": 1}, 5, [inp], dt.datetime(2020, 1, 1), [])
    on_disk = json.loads((tmp_path / "m.json").read_text())
    assert on_disk == m and m["seed"] == 5
    assert m["inputs"][str(inp)] == io.file_digest(inp)


# ---------------------------------------------------------------- CLI

def test_fit_writes_chains_summary_and_manifest(tmp_path):
    out = tmp_path / "fit"
    assert main(["fit", "--data", "data/toy.hist", "--model", "two-sided", "--seed", "7", *FAST,
                 "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["chain_two-sided_0.csv", "chain_two-sided_1.csv", "manifest.json", "summary_two-sided.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["config"]["n_chains"] == 2


def test_fit_is_byte_reproducible(tmp_path):
    for run in ("a", "b"):
        assert main(["fit", "--data", "data/toy.hist", "--seed", "3", *FAST, "--out", str(tmp_path / run)]) == 0
    for name in ("chain_two-sided_0.csv", "chain_two-sided_1.csv", "summary_two-sided.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fit_one_sided_and_combined(tmp_path):
    assert main(["fit", "--data", "data/toy.hist", "--model", "one-sided-left", *FAST,
                 "--out", str(tmp_path / "l")]) == 0
    head = (tmp_path / "l" / "chain_one-sided-left_0.csv").read_text().splitlines()[0]
    assert "rho_L" not in head
    assert main(["fit", "--data", "data/toy.hist", "--model", "combined", *FAST,
                 "--out", str(tmp_path / "c")]) == 0
    for label in ("one-sided-left", "one-sided-right", "combined"):
        assert (tmp_path / "c" / f"summary_{label}.csv").exists()


def test_fit_with_config_file(tmp_path):
    cfg = tmp_path / "fit.cfg"
    cfg.write_text("chains = 1\nburnin = 20\niters = 30\nkernel = nullspace\nT = 8\n")
    assert main(["fit", "--data", "data/toy.hist", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "chain_two-sided_0.csv").read_text().splitlines()
    assert len(rows) == 31


@pytest.mark.parametrize("args", [
    ["--model", "three-sided"],
    ["--config", "CFG_T"],
    ["--config", "CFG_BAD"],
])
def test_fit_errors(tmp_path, capsys, args):
    (tmp_path / "t.cfg").write_text("T = 5\n")
    (tmp_path / "bad.cfg").write_text("speed = 9\n")
    args = [{"CFG_T": str(tmp_path / "t.cfg"), "CFG_BAD": str(tmp_path / "bad.cfg")}.get(a, a) for a in args]
    assert main(["fit", "--data", "data/toy.hist", *args, "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


def test_fit_missing_data_file(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "none.hist"), "--out", str(tmp_path / "o")]) == 2


def test_simulate(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", "scenarios/sim2.cfg", "--replicates", "2", "--seed", "1",
                 "--out", str(out)]) == 0
    truth = io.read_truth_csv(out / "rep_000_truth.csv")
    assert truth["rho_S"] == 1.0
    d = io.read_histories(out / "rep_001.hist")
    assert d.total == 200 and d.n_left == 0
    # replicate 0 is reproduced by the seed recorded in the manifest
    seed = json.loads((out / "manifest.json").read_text())["seed"]
    assert main(["simulate", "--scenario", "sim2", "--replicates", "1", "--seed", str(seed),
                 "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "rep_000.hist").read_bytes() == (out / "rep_000.hist").read_bytes()


def test_simulate_bad_scenario(tmp_path):
    assert main(["simulate", "--scenario", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def _simulate_and_fit(tmp_path, n=1):
    sim, fit = tmp_path / "sim", tmp_path / "fit"
    cfg = tmp_path / "small.cfg"
    cfg.write_text("T = 4\ntarget_observed = 30\nname = small\n")
    assert main(["simulate", "--scenario", str(cfg), "--replicates", str(n), "--seed", "2", "--out", str(sim)]) == 0
    for r in range(n):
        for model in ("combined", "two-sided"):
            assert main(["fit", "--data", str(sim / f"rep_{r:03d}.hist"), "--model", model, *FAST,
                         "--out", str(fit / f"rep_{r:03d}")]) == 0
    return sim, fit


def test_score_single_replicate(tmp_path):
    sim, fit = _simulate_and_fit(tmp_path)
    out = tmp_path / "score.csv"
    assert main(["score", "--sim-dir", str(sim), "--fit-dir", str(fit), "--out", str(out)]) == 0
    table = io.read_study_csv(out)
    assert table[("phi", "MSE")]["one-sided-left"] == 1.0
    assert 0.0 <= table[("lambda", "Cover")]["combined"] <= 1.0


def test_score_mismatched_replicates(tmp_path, capsys):
    sim, fit = _simulate_and_fit(tmp_path)
    (fit / "rep_007").mkdir()
    assert main(["score", "--sim-dir", str(sim), "--fit-dir", str(fit), "--out", str(tmp_path / "s.csv")]) == 2
    assert "replicate mismatch" in capsys.readouterr().err


def _write_chains(tmp_path, shifts):
    rng = np.random.default_rng(0)
    paths = []
    for i, s in enumerate(shifts):
        ch = Chain(["sweep", "a", "b"], np.arange(1, 2001), rng.standard_normal((2000, 2)) + s, {})
        p = tmp_path / f"c{i}.csv"
        io.write_chain_csv(p, ch)
        paths.append(str(p))
    return paths


def test_diagnose_clean(tmp_path, capsys):
    assert main(["diagnose", *_write_chains(tmp_path, [0, 0, 0])]) == 0
    assert "psrf" in capsys.readouterr().out


def test_diagnose_flags_unconverged(tmp_path, capsys):
    assert main(["diagnose", *_write_chains(tmp_path, [0, 0, 2]), "--psrf-max", "1.02"]) == 1
    assert "PSRF above 1.02" in capsys.readouterr().err


def test_diagnose_single_chain_warns(tmp_path, capsys):
    assert main(["diagnose", *_write_chains(tmp_path, [0]), "--out", str(tmp_path / "s.csv")]) == 0
    assert "warning" in capsys.readouterr().err
    assert (tmp_path / "s.csv").exists()
