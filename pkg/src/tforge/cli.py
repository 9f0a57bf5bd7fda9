"""Command-line entry point: ``tforge gen|ensemble|attn|traj|cf|report``.

Settings merge as flags > config file > defaults. The config file is JSON
with the sections of :data:`DEFAULTS`; the merged result is echoed into
every JSON artifact together with the input hashes.

Exit codes: 0 success, 2 bad input, 3 training divergence, 4 store integrity.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import shutil
import sys
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .attention import rank_by_attention
from .cohortgen import (
    CohortFormatError,
    SpecError,
    generate_cohort,
    ground_truth_manifest,
    load_cohort,
    load_spec,
    reference_spec,
    save_cohort,
    save_manifest,
    spec_to_dict,
)
from .counterfactual import CfConfig, DegenerateKDE, run_counterfactual, select_cohort, write_kde_csv
from .model import ModelConfig
from .store import EnsembleDiverged, PossibilityStore, StoreMismatch, cohort_sha256, config_sha256, run_ensemble
from .trajectory import MinerParams, cluster_pathways, mine, to_dot, to_json
from .types import EventSymbol, SymbolError

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_STORE = 0, 2, 3, 4

STORE_COHORT = "cohort.jsonl"
CF_DIR = "cf"
SHOW_PATHWAYS = 10

_model_defaults = ModelConfig().to_dict()
_model_defaults.pop("seed")  # ensemble seeds come from base_seed

DEFAULTS = {
    "model": _model_defaults,
    "ensemble": {"k": 10, "base_seed": 42, "jobs": 1},
    "gen": {"seed": None, "n_patients": 500, "jitter": 1.0},
    "attention": {"c_mad": 3.0},
    "miner": {"kappa_min": 2.0, "min_support": 20, "jaccard_min": 0.5},
    "cf": {
        "step_size": 0.05,
        "max_iters": 200,
        "target_p": 0.45,
        "mu": 0.1,
        "symbols_free": None,
        "filter": [],
        "shift_eps": None,
        "jobs": 1,
    },
    "report": {"top": 10, "decisive": None},
    "paths": {"spec": None, "cohort": None, "manifest": None, "store": None, "out": None, "restrict": None, "dot": None},
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# -- configuration --------------------------------------------------------------


def merge_config(file_cfg: dict | None, flags: dict) -> dict:
    """Defaults, then the config file, then flags given as ``{"section.key": value}``."""
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in (file_cfg or {}).items():
        if section not in cfg:
            raise CliError(f"config file: unknown section {section!r}")
        if not isinstance(values, dict):
            raise CliError(f"config file: section {section!r} must be an object")
        for key, value in values.items():
            if key not in cfg[section]:
                raise CliError(f"config file: unknown key {section}.{key}")
            cfg[section][key] = value
    for dotted, value in flags.items():
        section, key = dotted.split(".", 1)
        cfg[section][key] = value
    return cfg


def _read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
    if not isinstance(doc, dict):
        raise CliError(f"config file {path}: top level must be an object")
    return doc


def _model_config(cfg: dict, seed: int = 0) -> ModelConfig:
    try:
        return ModelConfig.from_dict({**cfg["model"], "seed": seed})
    except (TypeError, ValueError) as exc:
        raise CliError(f"model config: {exc}") from exc


def _miner_params(cfg: dict) -> MinerParams:
    try:
        return MinerParams(c_mad=float(cfg["attention"]["c_mad"]), **cfg["miner"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"miner config: {exc}") from exc


def _symbols(value) -> list[EventSymbol]:
    if value is None:
        return []
    items = value.split(",") if isinstance(value, str) else list(value)
    try:
        return [EventSymbol.parse(s.strip()) for s in items if s.strip()]
    except SymbolError as exc:
        raise CliError(str(exc)) from exc


def _cf_config(cfg: dict) -> CfConfig:
    c = cfg["cf"]
    free = c["symbols_free"]
    try:
        return CfConfig(
            step_size=float(c["step_size"]),
            max_iters=int(c["max_iters"]),
            target_p=float(c["target_p"]),
            mu=float(c["mu"]),
            symbols_free=tuple(_symbols(free)) if free is not None else None,
        )
    except ValueError as exc:
        raise CliError(f"cf config: {exc}") from exc


def _provenance(command: str, cfg: dict, **hashes) -> dict:
    return {"tool": "tforge", "version": __version__, "command": command, "effective_config": cfg, **hashes}


def _short_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:12]


def _write_json(path, doc) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}") from exc


def _need(cfg: dict, key: str, flag: str) -> str:
    value = cfg["paths"][key]
    if not value:
        raise CliError(f"missing {flag} (or paths.{key} in the config file)")
    return value


# -- store access ---------------------------------------------------------------


def _load_cohort(path):
    try:
        return load_cohort(path)
    except OSError as exc:
        raise CliError(f"cannot read cohort {path}: {exc.strerror}") from exc
    except CohortFormatError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _open_store(cfg: dict):
    directory = Path(_need(cfg, "store", "--store"))
    try:
        store = PossibilityStore.load(directory)
    except FileNotFoundError as exc:
        raise CliError(f"not a store: {exc}") from exc
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"store {directory} is unreadable: {exc}", EXIT_STORE) from exc
    cohort_path = cfg["paths"]["cohort"] or directory / STORE_COHORT
    cohort = _load_cohort(cohort_path)
    digest = cohort_sha256(cohort)
    if digest != store.manifest.get("cohort_sha256"):
        raise CliError(
            f"cohort hash {digest} does not match store manifest {store.manifest.get('cohort_sha256')}", EXIT_STORE
        )
    for r in store.ordered_runs():
        if r.config is None or config_sha256(r.model_config()) != store.manifest.get("config_sha256"):
            raise CliError(f"run {r.run_id} was trained with a different config than the store manifest", EXIT_STORE)
    return store, cohort


def _pick_run(store, run_id: int):
    if run_id not in store.runs:
        raise CliError(f"run {run_id} not in store; available runs: {store.run_ids}")
    return store.runs[run_id]


def _hashes(store, run=None) -> dict:
    out = {"cohort_sha256": store.manifest.get("cohort_sha256"), "config_sha256": store.manifest.get("config_sha256")}
    if run is not None:
        out.update(run_id=run.run_id, seed=run.seed)
    return out


# -- commands ---------------------------------------------------------------------


def cmd_gen(cfg: dict) -> int:
    out = Path(_need(cfg, "out", "--out"))
    g = cfg["gen"]
    try:
        if cfg["paths"]["spec"]:
            spec = load_spec(cfg["paths"]["spec"])
        else:
            spec = reference_spec(n_patients=int(g["n_patients"]), jitter=float(g["jitter"]))
    except OSError as exc:
        raise CliError(f"cannot read spec {cfg['paths']['spec']}: {exc.strerror}") from exc
    except (json.JSONDecodeError, SymbolError, TypeError, ValueError) as exc:
        raise CliError(f"spec: {exc}") from exc
    if g["seed"] is not None:
        spec = dataclasses.replace(spec, seed=int(g["seed"]))
    try:
        cohort = generate_cohort(spec)
    except SpecError as exc:
        raise CliError(f"invalid spec: {exc}") from exc
    manifest_path = Path(cfg["paths"]["manifest"] or out.with_name(out.stem + ".manifest.jsonl"))
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_cohort(cohort, out)
        save_manifest(ground_truth_manifest(spec, cohort), manifest_path)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}") from exc
    meta = _provenance("gen", cfg, cohort_sha256=cohort_sha256(cohort))
    meta["spec"] = spec_to_dict(spec)
    _write_json(out.with_name(out.stem + ".meta.json"), meta)
    n_pos = sum(p.label for p in cohort.patients)
    print(f"wrote {len(cohort)} patients ({n_pos} positive) to {out}; manifest {manifest_path}")
    return EXIT_OK


def cmd_ensemble(cfg: dict) -> int:
    cohort_path = _need(cfg, "cohort", "--cohort")
    directory = Path(_need(cfg, "store", "--store"))
    cohort = _load_cohort(cohort_path)
    if not cohort.patients:
        raise CliError("cohort is empty")
    e = cfg["ensemble"]
    model_cfg = _model_config(cfg)
    try:
        store = run_ensemble(model_cfg, cohort, int(e["k"]), int(e["base_seed"]), directory, jobs=int(e["jobs"]))
    except StoreMismatch as exc:
        print(f"error: store integrity: {exc}", file=sys.stderr)
        return EXIT_STORE
    except EnsembleDiverged as exc:
        for rid, err in sorted(exc.diverged.items()):
            print(f"run {rid} diverged: {err}", file=sys.stderr)
        print(f"error: diverged runs: {sorted(exc.diverged)} (lower the learning rate)", file=sys.stderr)
        _copy_cohort(cohort_path, directory)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    _copy_cohort(cohort_path, directory)
    _write_json(directory / "ensemble.json", _provenance("ensemble", cfg, **_hashes(store)))
    if not store.new_runs:
        print(f"0 new runs: store {directory} already holds runs {store.run_ids}")
    for rid in store.new_runs:
        r = store.runs[rid]
        print(f"run {rid} (seed {r.seed}): final loss {r.final_loss:.6f}")
    print(f"store {directory}: {len(store)} runs")
    return EXIT_OK


def _copy_cohort(src, directory: Path) -> None:
    dst = directory / STORE_COHORT
    if Path(src).resolve() != dst.resolve():
        shutil.copyfile(src, dst)


def _restrict_ids(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read restriction file {path}: {exc.strerror}") from exc
    if text.lstrip().startswith("["):
        try:
            ids = [str(x) for x in json.loads(text)]
        except json.JSONDecodeError as exc:
            raise CliError(f"restriction file {path}: invalid JSON ({exc.msg})") from exc
    else:
        ids = [line.strip() for line in text.splitlines() if line.strip()]
    if not ids:
        raise CliError(f"restriction file {path} lists no patients")
    return ids


def cmd_attn(cfg: dict, run_id: int) -> int:
    store, cohort = _open_store(cfg)
    run = _pick_run(store, run_id)
    restrict = None
    if cfg["paths"]["restrict"]:
        restrict = _restrict_ids(cfg["paths"]["restrict"])
        unknown = sorted(set(restrict) - set(run.patient_ids))
        if unknown:
            raise CliError(f"unknown patient ids in restriction: {unknown[:5]}")
    ranking = rank_by_attention(run, cohort, restrict=restrict, c_mad=float(cfg["attention"]["c_mad"]))
    doc = _provenance("attn", cfg, **_hashes(store, run))
    doc["restrict"] = sorted(set(restrict)) if restrict is not None else None
    doc.update(ranking.to_dict())
    if cfg["paths"]["out"]:
        _write_json(cfg["paths"]["out"], doc)
    for i, s in enumerate(ranking.stats[:10], start=1):
        print(f"{i:3d}  {str(s.symbol):16s} kappa={s.kappa:8.3f}  C_M={s.c_m:5d}  C_T={s.c_t:5d}  P+={s.p_pos:.2f}")
    for sym, reason in ranking.omitted:
        print(f"omitted {sym}: {reason}")
    return EXIT_OK


def cmd_traj(cfg: dict, run_id: int) -> int:
    store, cohort = _open_store(cfg)
    run = _pick_run(store, run_id)
    result = mine(run, cohort, _miner_params(cfg))
    clusters = cluster_pathways(result.pathways)
    text = to_json(result, clusters, extra=_provenance("traj", cfg, **_hashes(store, run)))
    if cfg["paths"]["out"]:
        out = Path(cfg["paths"]["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    if cfg["paths"]["dot"]:
        Path(cfg["paths"]["dot"]).write_text(to_dot(clusters), encoding="utf-8")
    print(f"{len(result.nodes)} qualifying symbols, {len(result.pathways)} pathways in {len(clusters)} clusters")
    if result.truncated:
        print("warning: path enumeration truncated")
    for cl in clusters:
        print(f"cluster {cl.terminal} (size {cl.size})")
        for p in cl.pathways[:SHOW_PATHWAYS]:
            print("  " + " -> ".join(str(s) for s in p.symbols))
        if len(cl.pathways) > SHOW_PATHWAYS:
            print(f"  ... {len(cl.pathways) - SHOW_PATHWAYS} more in the JSON output")
    return EXIT_OK


def cmd_cf(cfg: dict, run_id: int) -> int:
    store, cohort = _open_store(cfg)
    run = _pick_run(store, run_id)
    cf_cfg = _cf_config(cfg)
    vocab = set(run.vocabulary)
    filt = _symbols(cfg["cf"]["filter"])
    for s in list(filt) + list(cf_cfg.symbols_free or ()):
        if s not in vocab:
            raise CliError(f"symbol {s} is not in the run vocabulary")
    shift_eps = cfg["cf"]["shift_eps"]
    ids = select_cohort(run, cohort, filt)
    result = run_counterfactual(
        run.model_params(), cohort, ids, cf_cfg,
        shift_eps=None if shift_eps is None else float(shift_eps),
        jobs=int(cfg["cf"]["jobs"]),
    )
    extra = _provenance("cf", cfg, **_hashes(store, run))
    extra["filter"] = [str(s) for s in filt]
    doc = result.to_dict(extra)
    name = f"cf_run{run.run_id}_{_short_hash({'cf': cfg['cf'], 'run': run.run_id})}.json"
    _write_json(store.directory / CF_DIR / name, doc)
    if cfg["paths"]["out"]:
        _write_json(cfg["paths"]["out"], doc)
    conv = [e for e in result.entries if e.converged]
    print(f"selected {len(ids)} positive patients; {len(conv)} converged within {cf_cfg.max_iters} iterations")
    free = cf_cfg.symbols_free or run.vocabulary
    for s in sorted(free):
        if not conv:
            break
        shifts = np.array([e.shift(s) for e in conv])
        disp = [result.dispositions[e.patient_id].get(s) for e in conv]
        counts = {d: disp.count(d) for d in ("postponed", "canceled", "advanced", "unchanged")}
        print(f"  {str(s):16s} median shift {np.median(shifts):+.4f}  " + "  ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def _spearman_matrix(store) -> np.ndarray:
    _, means = store.mean_tau_matrix()
    k = means.shape[0]
    m = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            m[i, j] = m[j, i] = spearmanr(means[i], means[j])[0]
    return m


def cmd_report(cfg: dict) -> int:
    store, cohort = _open_store(cfg)
    if not store.runs:
        raise CliError("store holds no runs")
    out = Path(_need(cfg, "out", "--out"))
    top = int(cfg["report"]["top"])
    decisive = _symbols(cfg["report"]["decisive"])
    decisive = decisive[0] if decisive else None
    runs = store.ordered_runs()
    lines = [f"store {store.directory}: {len(runs)} runs, cohort of {len(cohort)} patients", ""]

    losses = [{"run_id": r.run_id, "seed": r.seed, "final_loss": r.final_loss} for r in runs]
    lines.append("run  seed                  final_loss")
    lines += [f"{x['run_id']:3d}  {x['seed']:<20d}  {x['final_loss']:.6f}" for x in losses]
    lines.append("")

    corr = _spearman_matrix(store)
    notes = []
    if len(runs) < 2:
        notes.append("across-possibility statistics require K >= 2")
    else:
        off = corr[np.triu_indices(len(runs), 1)]
        lines.append(f"Spearman of per-symbol mean tau across runs: min {np.nanmin(off):.3f}, median {np.nanmedian(off):.3f}")
    lines += [f"note: {n}" for n in notes]

    top_k, ranks = {}, {}
    for r in runs:
        ranking = rank_by_attention(r, cohort, c_mad=float(cfg["attention"]["c_mad"]))
        top_k[r.run_id] = [{"symbol": str(s.symbol), "kappa": s.kappa} for s in ranking.stats[:top]]
        lines.append(f"run {r.run_id} top kappa: " + ", ".join(f"{d['symbol']} ({d['kappa']:.2f})" for d in top_k[r.run_id]))
        if decisive is not None:
            ranks[r.run_id] = ranking.rank_of(decisive)
    if decisive is not None:
        lines.append(f"rank of {decisive} by kappa per run: " + ", ".join(f"{k}:{v}" for k, v in ranks.items()))

    kde_files = []
    cf_dir = store.directory / CF_DIR
    for path in sorted(cf_dir.glob("cf_*.json")) if cf_dir.is_dir() else []:
        doc = json.loads(path.read_text(encoding="utf-8"))
        free = doc["config"].get("symbols_free") or doc["vocabulary"]
        for sym in free:
            pair = doc["per_symbol"][sym]
            target = out / "kde" / path.stem / f"{sym}.csv"
            target.parent.mkdir(parents=True, exist_ok=True)
            try:
                write_kde_csv(target, np.array(pair["tau"]), np.array(pair["tau_cf"]))
            except (DegenerateKDE, ValueError) as exc:
                target.unlink(missing_ok=True)
                lines.append(f"kde skipped for {path.stem}/{sym}: {exc}")
                continue
            kde_files.append(str(target.relative_to(out)))
    if kde_files:
        lines.append(f"{len(kde_files)} KDE files written under {out / 'kde'}")

    doc = _provenance("report", cfg, **_hashes(store))
    doc.update(
        runs=losses,
        spearman={"run_ids": store.run_ids, "matrix": corr.tolist()},
        top_kappa={str(k): v for k, v in top_k.items()},
        decisive_symbol=str(decisive) if decisive is not None else None,
        decisive_rank={str(k): v for k, v in ranks.items()},
        kde_files=kde_files,
        notes=notes,
    )
    _write_json(out / "report.json", doc)
    (out / "digest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def _flag(p, name, dest, **kw):
    p.add_argument(name, dest=dest, default=argparse.SUPPRESS, **kw)


def _store_flags(p, run=True):
    _flag(p, "--store", "paths.store", metavar="DIR", help="possibility store directory")
    _flag(p, "--cohort", "paths.cohort", metavar="PATH", help="cohort JSONL (default: the copy inside the store)")
    if run:
        p.add_argument("--run", dest="run_id", type=int, default=0, help="run id (default 0)")
    _flag(p, "--mad-c", "attention.c_mad", type=float, help="MAD multiple for core candidates (default 3.0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tforge", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"tforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        return p

    p = add("gen", "generate a synthetic cohort and its ground-truth manifest")
    _flag(p, "--spec", "paths.spec", metavar="PATH", help="GenSpec JSON (default: built-in reference spec)")
    _flag(p, "--out", "paths.out", metavar="PATH", help="cohort JSONL to write")
    _flag(p, "--manifest", "paths.manifest", metavar="PATH", help="manifest JSONL (default: <out>.manifest.jsonl)")
    _flag(p, "--seed", "gen.seed", type=int, help="override the spec seed")
    _flag(p, "--n-patients", "gen.n_patients", type=int, help="reference spec only (default 500)")
    _flag(p, "--jitter", "gen.jitter", type=float, help="reference spec gap-jitter scale (default 1.0)")

    p = add("ensemble", "train or resume K seeded runs")
    _store_flags(p, run=False)
    _flag(p, "--k", "ensemble.k", type=int, help="number of runs (default 10)")
    _flag(p, "--base-seed", "ensemble.base_seed", type=int, help="seed of run 0 (default 42)")
    _flag(p, "--jobs", "ensemble.jobs", type=int, help="worker processes (default 1)")
    for name, typ in (("epochs", int), ("learning_rate", float), ("embed_dim", int), ("hidden_dim", int),
                      ("attn_decay", float), ("order_margin", float), ("beta_order", float), ("gamma_time", float)):
        _flag(p, "--" + name.replace("_", "-"), "model." + name, type=typ)

    p = add("attn", "rank symbols by timing attention")
    _store_flags(p)
    _flag(p, "--restrict", "paths.restrict", metavar="PATH", help="patient ids, one per line or a JSON list")
    _flag(p, "--out", "paths.out", metavar="PATH", help="attention report JSON")

    p = add("traj", "discover pathways and clusters")
    _store_flags(p)
    _flag(p, "--kappa-min", "miner.kappa_min", type=float, help="default 2.0")
    _flag(p, "--min-support", "miner.min_support", type=int, help="default 20")
    _flag(p, "--jaccard-min", "miner.jaccard_min", type=float, help="default 0.5")
    _flag(p, "--out", "paths.out", metavar="PATH", help="pathway JSON")
    _flag(p, "--dot", "paths.dot", metavar="PATH", help="Graphviz DOT export")

    p = add("cf", "counterfactual timing for selected positive patients")
    _store_flags(p)
    _flag(p, "--mu", "cf.mu", type=float, help="proximity weight (default 0.1)")
    _flag(p, "--target-p", "cf.target_p", type=float, help="stop once p_positive <= this (default 0.45)")
    _flag(p, "--step-size", "cf.step_size", type=float, help="default 0.05")
    _flag(p, "--max-iters", "cf.max_iters", type=int, help="default 200")
    _flag(p, "--free-symbols", "cf.symbols_free", metavar="A,B", help="symbols allowed to move (default all)")
    _flag(p, "--filter", "cf.filter", metavar="A,B,C", help="ordered trajectory the patients must follow")
    _flag(p, "--shift-eps", "cf.shift_eps", type=float, help="unchanged threshold (default 0.05 * IQR of the row)")
    _flag(p, "--jobs", "cf.jobs", type=int, help="worker processes (default 1)")
    _flag(p, "--out", "paths.out", metavar="PATH", help="counterfactual result JSON")

    p = add("report", "summarise a store")
    _store_flags(p, run=False)
    _flag(p, "--out", "paths.out", metavar="DIR", help="output directory")
    _flag(p, "--top", "report.top", type=int, help="symbols listed per run (default 10)")
    _flag(p, "--decisive", "report.decisive", metavar="SYMBOL", help="report this symbol's kappa rank per run")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ns = vars(args)
    flags = {k: v for k, v in ns.items() if "." in k}
    try:
        file_cfg = _read_config_file(args.config) if args.config else None
        cfg = merge_config(file_cfg, flags)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "ensemble":
            return cmd_ensemble(cfg)
        if args.command == "attn":
            return cmd_attn(cfg, args.run_id)
        if args.command == "traj":
            return cmd_traj(cfg, args.run_id)
        if args.command == "cf":
            return cmd_cf(cfg, args.run_id)
        return cmd_report(cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
