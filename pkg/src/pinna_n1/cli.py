"""``pinna-n1`` command line.

Subcommands: extract, synth, run, table1, overlap, plot-data.

Configuration is layered: built-in defaults, then ``--config FILE`` (JSON),
then flags given on the command line. Nested ``extraction``, ``model`` and
``synth`` objects in the config file are merged key by key.

Exit status: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import experiments as ex
from . import reports
from ._backend import BACKEND
from .anthro import AnthroError
from .dataset import DataError, Dataset, filter_records, label_records, load_manifest, merge_ears, save_manifest
from .notch import ExtractionError, ExtractionParams
from .predictors import ModelSpec, NumericError
from .synth import GenerativeSpec, SynthError, synth_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PROTOCOLS = ("single", "repeated", "sweep", "loo", "mix", "overlap")

DEFAULTS: dict = {
    "datasets": [],
    "source": None,
    "mix_sources": [],
    "protocol": "repeated",
    "out_dir": ".",
    "base_seed": 0,
    "n_runs": 9,
    "sizes": [50, 200, 700],
    "test_size": 25,
    "jobs": 1,
    "min_n1_hz": 5000.0,
    "require_prominent": True,
    "runs_csv": None,
    "no_hrirs": False,
    "extraction": ExtractionParams().to_dict(),
    "model": ModelSpec().to_dict(),
    "synth": {k: v for k, v in GenerativeSpec().to_dict().items() if k != "feature_ranges"},
}
NESTED = ("extraction", "model", "synth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_ints(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pinna-n1", description="N1 notch extraction and anthropometric N1 prediction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, datasets=True):
        sp.add_argument("--config", help="JSON config file (overrides defaults; flags override it)")
        sp.add_argument("--out-dir", dest="out_dir")
        if datasets:
            sp.add_argument("--dataset", dest="datasets", action="append", metavar="MANIFEST")

    def extraction(sp):
        g = sp.add_argument_group("extraction")
        g.add_argument("--window-ms", dest="x.window_length_ms", type=float)
        g.add_argument("--fft-size", dest="x.fft_size", type=int)
        g.add_argument("--prominence-db", dest="x.prominence_db", type=float)
        g.add_argument("--search-max-hz", dest="x.search_max_hz", type=float)
        g.add_argument("--p1-tie-db", dest="x.p1_tie_db", type=float)

    def protocol(sp):
        sp.add_argument("--base-seed", dest="base_seed", type=int)
        sp.add_argument("--n-runs", dest="n_runs", type=int)
        sp.add_argument("--jobs", type=int)
        g = sp.add_argument_group("model")
        g.add_argument("--model", dest="m.kind", choices=("naive", "linear", "mlp"))
        g.add_argument("--hidden-units", dest="m.hidden_units", type=int)
        g.add_argument("--activation", dest="m.activation", choices=("relu", "tanh"))
        g.add_argument("--learning-rate", dest="m.learning_rate", type=float)
        g.add_argument("--batch-size", dest="m.batch_size", type=int)
        g.add_argument("--max-epochs", dest="m.max_epochs", type=int)
        g.add_argument("--patience", dest="m.patience", type=int)
        g.add_argument("--ridge", dest="m.ridge", type=float)

    sp = sub.add_parser("extract", help="label HRIRs with N1 and write a filtered manifest")
    common(sp)
    extraction(sp)
    sp.add_argument("--min-n1-hz", dest="min_n1_hz", type=float)
    sp.add_argument("--keep-weak", dest="require_prominent", action="store_const", const=False,
                    help="do not drop records whose notch is below the prominence threshold")

    sp = sub.add_parser("synth", help="write a synthetic dataset manifest")
    common(sp, datasets=False)
    sp.add_argument("--n-examples", dest="s.n_examples", type=int)
    sp.add_argument("--mapping", dest="s.mapping", choices=("linear", "nonlinear"))
    sp.add_argument("--noise-std-hz", dest="s.noise_std_hz", type=float)
    sp.add_argument("--seed", dest="s.seed", type=int)
    sp.add_argument("--mapping-seed", dest="s.mapping_seed", type=int)
    sp.add_argument("--name", dest="s.name")
    sp.add_argument("--gain", dest="s.reflection_gain", type=float)
    sp.add_argument("--no-hrirs", dest="no_hrirs", action="store_const", const=True)

    sp = sub.add_parser("run", help="run one evaluation protocol")
    common(sp)
    protocol(sp)
    sp.add_argument("--protocol", choices=PROTOCOLS)
    sp.add_argument("--source", metavar="MANIFEST", help="source dataset for --protocol mix")
    sp.add_argument("--sizes", type=_csv_ints, help="train sizes for --protocol sweep, e.g. 50,200,700")
    sp.add_argument("--test-size", dest="test_size", type=int)

    sp = sub.add_parser("table1", help="naive, linear and neural errors per dataset in one table")
    common(sp)
    protocol(sp)
    sp.add_argument("--mix-source", dest="mix_sources", action="append", metavar="MANIFEST",
                    help="add a domain-mixing row trained with this source (repeatable)")

    sp = sub.add_parser("overlap", help="per-feature distribution overlap of two datasets")
    common(sp)

    sp = sub.add_parser("plot-data", help="(size, mean RMS) curves from a runs CSV")
    sp.add_argument("--config")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--runs", dest="runs_csv", metavar="CSV")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in that order."""
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        for k, v in doc.items():
            if k in NESTED:
                if not isinstance(v, dict):
                    raise UsageError(f"config key {k!r} must be an object")
                cfg[k].update(v)
            else:
                cfg[k] = v
    prefixes = {"x.": "extraction", "m.": "model", "s.": "synth"}
    for key, val in vars(args).items():
        if val is None or key in ("command", "config"):
            continue
        if key[:2] in prefixes:
            cfg[prefixes[key[:2]]][key[2:]] = val
        elif key in cfg:
            cfg[key] = val
    return cfg


def _extraction(cfg) -> ExtractionParams:
    try:
        return ExtractionParams.from_dict(cfg["extraction"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad extraction parameters: {exc}") from None


def _model(cfg, **override) -> ModelSpec:
    try:
        return ModelSpec.from_dict({**cfg["model"], **override})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad model spec: {exc}") from None


def _require_datasets(cfg, n_min: int, n_max: Optional[int] = None) -> list[str]:
    paths = list(cfg["datasets"] or [])
    if len(paths) < n_min or (n_max is not None and len(paths) > n_max):
        want = f"exactly {n_min}" if n_min == n_max else f"at least {n_min}"
        raise UsageError(f"need {want} --dataset manifest(s), got {len(paths)}")
    return paths


def _load_labelled(path: str) -> Dataset:
    d = merge_ears(load_manifest(path))
    unlabelled = [r.key for r in d.records if r.n1_label_hz is None]
    if unlabelled:
        raise DataError(f"{path}: {len(unlabelled)} records have no N1 label (e.g. {unlabelled[0]}); run 'extract' first")
    return d


def _echo(cfg, *keys) -> dict:
    out = {k: cfg[k] for k in ("extraction",) + keys}
    out["version"] = __version__
    out["backend"] = BACKEND
    return out


def _out(cfg) -> Path:
    return Path(cfg["out_dir"])


def cmd_extract(cfg) -> int:
    paths = _require_datasets(cfg, 1)
    params = _extraction(cfg)
    for path in paths:
        d = load_manifest(path)
        if not any(r.hrir is not None for r in d.records):
            raise DataError(f"{path}: dataset has no HRIRs to extract from")
        rows = []
        n_failed = 0
        records = []
        for r in d.records:
            if r.hrir is None:
                records.append(r)
                rows.append((r.subject_id, r.ear, None, None, r.n1_label_hz, None, None, r.prominent, None, "precomputed"))
                continue
            try:
                one, feats = label_records(replace(d, records=(r,)), params)
                f = feats[0]
                records.append(one.records[0])
                rows.append((r.subject_id, r.ear, f.p1_hz, f.p1_db, f.n1_hz, f.n1_db, f.n1_depth_db, f.prominent, None, "ok"))
            except ExtractionError as exc:
                n_failed += 1
                records.append(replace(r, n1_label_hz=None, prominent=False))
                rows.append((r.subject_id, r.ear, None, None, None, None, None, False, None, f"error: {exc}"))
        labelled = replace(d, records=tuple(records))
        kept = filter_records(labelled, cfg["min_n1_hz"], cfg["require_prominent"])
        kept_keys = {r.key for r in kept.records}
        rows = [row[:8] + ((row[0], row[1]) in kept_keys,) + row[9:] for row in rows]

        out = _out(cfg)
        out.mkdir(parents=True, exist_ok=True)
        echo = _echo(cfg, "min_n1_hz", "require_prominent")
        echo["dataset"] = path
        reports.write_csv(out / f"{d.name}_extraction.csv", "extraction", reports.EXTRACTION_COLUMNS, rows, echo)
        manifest = save_manifest(kept, out / f"{d.name}_labeled.json")
        removed = len(d) - len(kept)
        print(f"{d.name}: retained {len(kept)}, removed {removed} of {len(d)}" +
              (f" ({n_failed} extraction errors)" if n_failed else ""))
        print(f"wrote {manifest}")
        if n_failed:
            print(f"warning: {n_failed} HRIRs could not be analysed; see the status column", file=sys.stderr)
    return EXIT_OK


def cmd_synth(cfg) -> int:
    s = dict(cfg["synth"])
    try:
        spec = GenerativeSpec(**s)
    except TypeError as exc:
        raise UsageError(f"bad synth parameters: {exc}") from None
    d = synth_dataset(spec, with_hrirs=not cfg.get("no_hrirs", False))
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = save_manifest(d, out / f"{spec.name}.json")
    print(f"wrote {path} ({len(d)} records, seed {spec.seed})")
    return EXIT_OK


def _write_reports(cfg, reps: Sequence[ex.ErrorReport], echo: dict, stem: str = "") -> None:
    out = _out(cfg)
    reports.write_csv(out / f"{stem}runs.csv", "runs", reports.RUN_COLUMNS, reports.run_rows(reps), echo)
    reports.write_csv(out / f"{stem}summary.csv", "summary", reports.SUMMARY_COLUMNS, reports.summary_rows(reps), echo)


def cmd_run(cfg) -> int:
    protocol = cfg["protocol"]
    if protocol not in PROTOCOLS:
        raise UsageError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if protocol == "overlap":
        return cmd_overlap(cfg)
    paths = _require_datasets(cfg, 1, 1)
    if protocol == "mix" and not cfg["source"]:
        raise UsageError("protocol 'mix' needs --source")
    spec = _model(cfg)
    seed, n_runs, jobs = int(cfg["base_seed"]), int(cfg["n_runs"]), int(cfg["jobs"])
    if n_runs < 1 or jobs < 1:
        raise UsageError("n_runs and jobs must be positive")
    d = _load_labelled(paths[0])
    print(f"base_seed {seed}")

    if protocol == "single":
        run = ex.run_single(d, spec, seed)
        reps = [ex.aggregate(d.name, "single", spec.summary(), [run])]
    elif protocol == "repeated":
        reps = [ex.run_repeated(d, spec, n_runs, seed, jobs=jobs)]
    elif protocol == "sweep":
        sizes = [int(s) for s in cfg["sizes"]]
        reps = [r for _, r in ex.size_sweep(d, sizes, spec, int(cfg["test_size"]), n_runs, seed, jobs=jobs)]
    elif protocol == "loo":
        reps = [ex.leave_one_out(d, spec, seed, jobs=jobs)]
    else:
        src = _load_labelled(cfg["source"])
        reps = [ex.domain_mix(src, d, spec, n_runs, seed, jobs=jobs)]

    echo = _echo(cfg, "datasets", "protocol", "base_seed", "n_runs", "model")
    if protocol == "sweep":
        echo.update(sizes=cfg["sizes"], test_size=cfg["test_size"])
    if protocol == "mix":
        echo["source"] = cfg["source"]
    _write_reports(cfg, reps, echo)
    for r in reps:
        size = f" size {r.size}" if r.size is not None else ""
        print(f"{r.dataset} {r.protocol} {r.model}{size}: {r.rms_hz:.2f} Hz, {r.rms_octave:.4f} oct ({r.jnd})")
    return EXIT_OK


def cmd_table1(cfg) -> int:
    paths = _require_datasets(cfg, 1)
    seed, n_runs, jobs = int(cfg["base_seed"]), int(cfg["n_runs"]), int(cfg["jobs"])
    neural = _model(cfg, kind="mlp")
    linear = _model(cfg, kind="linear")
    naive = _model(cfg, kind="naive")
    methods = {
        "Naive": naive,
        "Linear": linear,
        f"Neural ({neural.hidden_units})": neural,
    }
    datasets = [_load_labelled(p) for p in paths]
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise DataError(f"dataset names must be distinct, got {names}")
    sources = [_load_labelled(p) for p in cfg["mix_sources"] or []]
    print(f"base_seed {seed}")

    cells: dict = {}
    all_reps = []
    for d in datasets:
        for label, spec in methods.items():
            rep = ex.run_repeated(d, spec, n_runs, seed, jobs=jobs)
            cells[(label, d.name)] = rep
            all_reps.append(rep)
    order = list(methods)
    for src in sources:
        label = f"Domain mixing ({src.name})"
        order.append(label)
        for d in datasets:
            if d.name == src.name:
                continue
            rep = ex.domain_mix(src, d, neural, n_runs, seed, jobs=jobs)
            cells[(label, d.name)] = rep
            all_reps.append(rep)

    columns, rows = reports.table1_rows(order, names, cells)
    echo = _echo(cfg, "datasets", "mix_sources", "base_seed", "n_runs", "model")
    out = _out(cfg)
    reports.write_csv(out / "table1.csv", "table1", columns, rows, echo)
    _write_reports(cfg, all_reps, echo, stem="table1_")
    for row in rows:
        print(", ".join(reports._fmt(v) if not isinstance(v, float) else f"{v:.4g}" for v in row))
    return EXIT_OK


def cmd_overlap(cfg) -> int:
    a_path, b_path = _require_datasets(cfg, 2, 2)
    a, b = merge_ears(load_manifest(a_path)), merge_ears(load_manifest(b_path))
    rows = ex.feature_overlap_report(a, b)
    echo = _echo(cfg, "datasets")
    reports.write_csv(_out(cfg) / "overlap.csv", "overlap", reports.OVERLAP_COLUMNS, reports.overlap_rows(rows), echo)
    for r in rows:
        print(f"{r.feature}: overlap {r.overlap:.3f}")
    return EXIT_OK


def cmd_plot_data(cfg) -> int:
    if not cfg["runs_csv"]:
        raise UsageError("plot-data needs --runs CSV")
    try:
        schema, src_cfg, rows = reports.read_csv(cfg["runs_csv"])
    except OSError as exc:
        raise DataError(f"cannot read {cfg['runs_csv']}: {exc}") from None
    if not schema.startswith("pinna-n1/runs"):
        raise DataError(f"{cfg['runs_csv']}: expected a runs CSV, got schema {schema!r}")
    curves = reports.curves_from_runs(rows)
    echo = {"runs_csv_config": src_cfg, "version": __version__}
    path = reports.write_csv(_out(cfg) / "curves.csv", "curves", reports.CURVE_COLUMNS, curves, echo)
    print(f"wrote {path} ({len(curves)} points)")
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "synth": cmd_synth,
    "run": cmd_run,
    "table1": cmd_table1,
    "overlap": cmd_overlap,
    "plot-data": cmd_plot_data,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ex.RunFailure):
        return _exit_code(exc.cause)
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("pinna-n1: a subcommand is required (extract, synth, run, table1, overlap, plot-data)")
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ex.RunFailure, NumericError, DataError, AnthroError, ExtractionError, SynthError,
            reports.ReportError, OSError, ValueError) as exc:
        code = _exit_code(exc)
        kind = {EXIT_USAGE: "usage error", EXIT_NUMERIC: "numeric failure"}.get(code, "data error")
        print(f"{kind}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
