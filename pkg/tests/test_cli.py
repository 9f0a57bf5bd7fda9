import json
from pathlib import Path

import numpy as np
import pytest

from tforge.cli import DEFAULTS, CliError, main, merge_config
from tforge.cohortgen import reference_spec, save_cohort, save_spec
from tforge.store import cohort_sha256

from _util import cohort, patient

TINY_MODEL = ["--epochs", "20", "--embed-dim", "4", "--hidden-dim", "8"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def gen_cohort(tmp_path, capsys):
    path = tmp_path / "cohort.jsonl"
    code, _, _ = run(capsys, "gen", "--out", path, "--n-patients", 60, "--seed", 3)
    assert code == 0
    return path


@pytest.fixture
def store(tmp_path, gen_cohort, capsys):
    d = tmp_path / "store"
    code, out, _ = run(capsys, "ensemble", "--cohort", gen_cohort, "--store", d, "--k", 2, *TINY_MODEL)
    assert code == 0, out
    return d


# -- gen --


def test_gen_writes_cohort_and_manifest(tmp_path, capsys):
    out = tmp_path / "c.jsonl"
    code, text, _ = run(capsys, "gen", "--out", out, "--n-patients", 40)
    assert code == 0 and "40 patients" in text
    assert len(out.read_text().splitlines()) == 40
    assert len((tmp_path / "c.manifest.jsonl").read_text().splitlines()) == 40
    meta = json.loads((tmp_path / "c.meta.json").read_text())
    assert meta["command"] == "gen" and len(meta["cohort_sha256"]) == 64
    assert meta["effective_config"]["gen"]["n_patients"] == 40


def test_gen_is_byte_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "gen", "--out", tmp_path / f"{name}.jsonl", "--n-patients", 30)[0] == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.manifest.jsonl").read_bytes() == (tmp_path / "b.manifest.jsonl").read_bytes()


def test_gen_rejects_bad_prevalence(tmp_path, capsys):
    spec = reference_spec(n_patients=20)
    t0 = spec.templates[0]
    bad = type(spec)(**{**spec.__dict__, "templates": (type(t0)(t0.steps, 0.30, t0.skip_prob),) + spec.templates[1:]})
    save_spec(bad, tmp_path / "spec.json")
    code, _, err = run(capsys, "gen", "--spec", tmp_path / "spec.json", "--out", tmp_path / "c.jsonl")
    assert code == 2 and "prevalence" in err and "sum" in err
    assert not (tmp_path / "c.jsonl").exists()


def test_gen_unreadable_spec(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--spec", tmp_path / "missing.json", "--out", tmp_path / "c.jsonl")
    assert code == 2 and "cannot read spec" in err


# -- ensemble --


def test_single_run_store(tmp_path, gen_cohort, capsys):
    d = tmp_path / "s1"
    code, out, _ = run(capsys, "ensemble", "--cohort", gen_cohort, "--store", d, "--k", 1, *TINY_MODEL)
    assert code == 0 and "run 0 (seed 42): final loss" in out
    assert sorted(p.name for p in d.glob("run_*.json")) == ["run_0.json"]
    assert (d / "cohort.jsonl").read_bytes() == gen_cohort.read_bytes()
    prov = json.loads((d / "ensemble.json").read_text())
    assert prov["effective_config"]["model"]["epochs"] == 20


def test_resume_reports_no_new_runs(store, gen_cohort, capsys):
    code, out, _ = run(capsys, "ensemble", "--cohort", gen_cohort, "--store", store, "--k", 2, *TINY_MODEL)
    assert code == 0 and "0 new runs" in out


def test_config_mismatch_exits_4(store, gen_cohort, capsys):
    code, _, err = run(capsys, "ensemble", "--cohort", gen_cohort, "--store", store, "--k", 2, "--epochs", "21",
                       "--embed-dim", "4", "--hidden-dim", "8")
    assert code == 4 and "config_sha256" in err


def test_divergence_exits_3(tmp_path, gen_cohort, capsys):
    code, _, err = run(capsys, "ensemble", "--cohort", gen_cohort, "--store", tmp_path / "bad", "--k", 2,
                       "--learning-rate", "1e200", *TINY_MODEL)
    assert code == 3 and "diverged runs: [0, 1]" in err


def test_missing_cohort_file(tmp_path, capsys):
    code, _, err = run(capsys, "ensemble", "--cohort", tmp_path / "none.jsonl", "--store", tmp_path / "s")
    assert code == 2 and "cannot read cohort" in err


# -- analysis commands --


def test_missing_run_lists_available(store, capsys):
    code, _, err = run(capsys, "attn", "--store", store, "--run", 7)
    assert code == 2 and "available runs: [0, 1]" in err


def test_tampered_cohort_exits_4(store, capsys):
    path = store / "cohort.jsonl"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    code, _, err = run(capsys, "attn", "--store", store)
    assert code == 4 and "does not match" in err


def test_attn_ranking_json(store, tmp_path, capsys):
    out = tmp_path / "attn.json"
    code, text, _ = run(capsys, "attn", "--store", store, "--run", 1, "--out", out, "--mad-c", 2.5)
    assert code == 0
    doc = json.loads(out.read_text())
    kappas = [s["kappa"] for s in doc["stats"]]
    assert kappas == sorted(kappas, reverse=True) and doc["run_id"] == 1 and doc["seed"] == 43
    assert doc["effective_config"]["attention"]["c_mad"] == 2.5
    assert text.splitlines()[0].lstrip().startswith("1")


def test_attn_restricted_to_three_patients(store, tmp_path, capsys):
    ids = [json.loads(ln)["id"] for ln in (store / "cohort.jsonl").read_text().splitlines()[:3]]
    rfile = tmp_path / "ids.txt"
    rfile.write_text("\n".join(ids) + "\n")
    out = tmp_path / "attn.json"
    code, text, _ = run(capsys, "attn", "--store", store, "--restrict", rfile, "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    # kurtosis needs four samples, so every symbol lands in the degenerate report
    assert doc["stats"] == [] and doc["omitted"] and doc["restrict"] == sorted(ids)
    assert all("at least 4" in o["reason"] for o in doc["omitted"])
    assert "omitted" in text


def test_attn_restrict_unknown_id(store, tmp_path, capsys):
    rfile = tmp_path / "ids.json"
    rfile.write_text('["nobody"]')
    code, _, err = run(capsys, "attn", "--store", store, "--restrict", rfile)
    assert code == 2 and "nobody" in err


def test_traj_on_single_symbol_store(tmp_path, capsys):
    pats = [patient(f"p{i}", [("A_1", 3 * i)], label=i % 2) for i in range(8)]
    cpath = tmp_path / "one.jsonl"
    save_cohort(cohort(*pats), cpath)
    assert run(capsys, "ensemble", "--cohort", cpath, "--store", tmp_path / "s", "--k", 1, *TINY_MODEL)[0] == 0
    out, dot = tmp_path / "traj.json", tmp_path / "traj.dot"
    code, _, _ = run(capsys, "traj", "--store", tmp_path / "s", "--out", out, "--dot", dot,
                     "--kappa-min", 1.0, "--min-support", 1)
    assert code == 0
    doc = json.loads(out.read_text())
    assert sum(len(c["pathways"]) for c in doc["clusters"]) <= 1
    assert doc["effective_config"]["miner"]["min_support"] == 1
    assert dot.exists()


def test_cf_filter_is_an_ordered_list(tmp_path, capsys):
    pats = []
    for i in range(12):
        order = [("Dx_DB_2", 10), ("Dx_HT_3", 20), ("Chemo_3", 30)] if i % 3 else [("Dx_DB_2", 30), ("Dx_HT_3", 20), ("Chemo_3", 10)]
        pats.append(patient(f"p{i:02d}", order, label=1 if i % 2 else 0))
    cpath = tmp_path / "fig.jsonl"
    save_cohort(cohort(*pats), cpath)
    assert run(capsys, "ensemble", "--cohort", cpath, "--store", tmp_path / "s", "--k", 1, *TINY_MODEL)[0] == 0
    out = tmp_path / "cf.json"
    code, text, _ = run(capsys, "cf", "--store", tmp_path / "s", "--filter", "Dx_DB_2,Dx_HT_3,Chemo_3",
                        "--free-symbols", "Chemo_3", "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["filter"] == ["Dx_DB_2", "Dx_HT_3", "Chemo_3"]
    # positives p01, p05, p07, p11 follow the order; p03 and p09 have it reversed
    assert [p["patient_id"] for p in doc["patients"]] == ["p01", "p05", "p07", "p11"]
    assert doc["config"]["symbols_free"] == ["Chemo_3"]
    assert list(doc["patients"][0]["dispositions"]) == ["Chemo_3"]
    assert len(list((tmp_path / "s" / "cf").glob("cf_run0_*.json"))) == 1
    assert text.startswith("selected 4 positive patients")


def test_cf_unknown_filter_symbol(store, capsys):
    code, _, err = run(capsys, "cf", "--store", store, "--filter", "Dx_DB_2")
    assert code == 2 and "Dx_DB_2" in err


def test_cf_bad_target(store, capsys):
    code, _, err = run(capsys, "cf", "--store", store, "--target-p", 0.7)
    assert code == 2 and "target_p" in err


# -- report --


def test_report_two_runs(store, tmp_path, capsys):
    assert run(capsys, "cf", "--store", store, "--free-symbols", "Target_3")[0] == 0
    out = tmp_path / "rep"
    code, text, _ = run(capsys, "report", "--store", store, "--out", out, "--decisive", "Target_3")
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    m = np.array(doc["spearman"]["matrix"])
    assert m.shape == (2, 2) and np.all(np.diag(m) == 1.0) and m[0, 1] == m[1, 0]
    assert set(doc["decisive_rank"]) == {"0", "1"}
    assert "rank of Target_3 by kappa per run" in (out / "digest.txt").read_text()
    assert any(f.endswith("Target_3.csv") for f in doc["kde_files"])
    csv = (out / doc["kde_files"][0]).read_text().splitlines()
    assert csv[0] == "grid,density,series"


def test_report_single_run_note(tmp_path, gen_cohort, capsys):
    d = tmp_path / "s1"
    assert run(capsys, "ensemble", "--cohort", gen_cohort, "--store", d, "--k", 1, *TINY_MODEL)[0] == 0
    code, text, _ = run(capsys, "report", "--store", d, "--out", tmp_path / "rep")
    assert code == 0 and "across-possibility statistics require K >= 2" in text
    doc = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert doc["spearman"]["matrix"] == [[1.0]]


def test_report_empty_store(tmp_path, capsys):
    d = tmp_path / "empty"
    d.mkdir()
    c = cohort(patient("a", [("A_1", 1)]))
    save_cohort(c, d / "cohort.jsonl")
    (d / "manifest.json").write_text(json.dumps({"cohort_sha256": cohort_sha256(c), "config_sha256": "x"}))
    code, _, err = run(capsys, "report", "--store", d, "--out", tmp_path / "rep")
    assert code == 2 and "no runs" in err


# -- configuration --


def test_precedence_flag_over_file_over_default(tmp_path, gen_cohort, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"epochs": 5, "embed_dim": 4, "hidden_dim": 8}, "ensemble": {"k": 1}}))
    d = tmp_path / "s"
    assert run(capsys, "ensemble", "--config", cfg, "--cohort", gen_cohort, "--store", d, "--epochs", 3)[0] == 0
    eff = json.loads((d / "ensemble.json").read_text())["effective_config"]
    assert eff["model"]["epochs"] == 3  # flag
    assert eff["model"]["embed_dim"] == 4 and eff["ensemble"]["k"] == 1  # file
    assert eff["model"]["learning_rate"] == DEFAULTS["model"]["learning_rate"]  # default
    assert len(json.loads((d / "run_0.json").read_text())["loss_curve"]) == 3


def test_merge_config_rejects_unknown_keys():
    with pytest.raises(CliError):
        merge_config({"nope": {}}, {})
    with pytest.raises(CliError):
        merge_config({"model": {"depth": 3}}, {})
    assert merge_config(None, {"cf.mu": 2.0})["cf"]["mu"] == 2.0


def test_bad_config_file(tmp_path, gen_cohort, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    code, _, err = run(capsys, "ensemble", "--config", cfg, "--cohort", gen_cohort, "--store", tmp_path / "s")
    assert code == 2 and "invalid JSON" in err


def test_full_pipeline_is_byte_identical(tmp_path, monkeypatch, capsys):
    def pipeline(root: Path):
        root.mkdir()
        monkeypatch.chdir(root)
        steps = [
            ["gen", "--out", "c.jsonl", "--n-patients", "50"],
            ["ensemble", "--cohort", "c.jsonl", "--store", "s", "--k", "2", *TINY_MODEL],
            ["attn", "--store", "s", "--out", "attn.json"],
            ["traj", "--store", "s", "--out", "traj.json", "--dot", "traj.dot", "--min-support", "5"],
            ["cf", "--store", "s", "--free-symbols", "Target_3", "--out", "cf.json"],
            ["report", "--store", "s", "--out", "rep", "--decisive", "Target_3"],
        ]
        for argv in steps:
            assert main(argv) == 0, argv
        capsys.readouterr()
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) > 10
    assert all(a[k] == b[k] for k in a)
