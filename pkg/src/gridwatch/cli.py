"""Command-line entry point: the pipeline as reproducible subcommands.

    gridwatch ingest raw.txt --out out/ [--split] [--meter ID]
    gridwatch train --data out/ --out models/
    gridwatch attack --data out/ --attack all --out corpus/
    gridwatch detect --models models/ --corpus corpus/corpus_sh.csv --out alerts/
    gridwatch simulate --config scenario.json --out run/
    gridwatch report --run run/

Exit codes: 0 success, 1 internal error, 2 user/input error. Seed
precedence: config file < --seed flag < GRIDWATCH_SEED environment
variable. All data artifacts are byte-reproducible from identical inputs
and seed; the only exceptions are wall-clock timing fields (train_seconds
columns and the manifest's stage timings).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import attacks as atk
from . import scenario as scn
from .detect import NbhDetectorState, ShDetectorState, nbh_step, sh_step
from .errors import GridwatchError, ScenarioError, UserInputError
from .ingest import (Dataset, build_nbh_dataset, build_sh_dataset, clean_dataset,
                     feature_vector, open_raw, parse_raw, read_dataset_csv,
                     split_train_validation, write_dataset_csv, write_labeled_csv,
                     write_removed_csv)
from .manifest import write_manifest
from .trees import deserialize, serialize, to_text, train_model_tree, train_rep_tree

ENV_SEED = "GRIDWATCH_SEED"


def _resolve_seed(args, config_seed: int | None = None) -> int:
    seed = config_seed if config_seed is not None else 0
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if os.environ.get(ENV_SEED):
        seed = int(os.environ[ENV_SEED])
    return seed


def _write_csv(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow(row)


def _missing(path: Path, what: str) -> None:
    if not path.exists():
        raise UserInputError(f"missing {what}: {path}")


# ---------------------------------------------------------------------------
# ingest

def cmd_ingest(args) -> int:
    seed = _resolve_seed(args)
    raw_path = Path(args.raw)
    _missing(raw_path, "raw input file")
    out = Path(args.out)
    t0 = time.perf_counter()

    parsed = parse_raw(open_raw(raw_path))
    if len(parsed.issues) > args.max_bad_lines:
        for issue in parsed.issues[:20]:
            print(f"line {issue.line_no}: {issue.message}", file=sys.stderr)
        raise UserInputError(
            f"{len(parsed.issues)} malformed line(s) exceed --max-bad-lines={args.max_bad_lines}")

    per_meter: dict[int, list] = {}
    for r in parsed.readings:
        per_meter.setdefault(r.meter_id, []).append(r)
    if args.meter is not None:
        if args.meter not in per_meter:
            raise UserInputError(f"meter {args.meter} not present in {raw_path}")
        per_meter = {args.meter: per_meter[args.meter]}

    datasets_dir = out / "datasets"
    removed_total = 0
    for meter_id in sorted(per_meter):
        ds, _report = build_sh_dataset(per_meter[meter_id], args.include_day_period)
        ds, removed = clean_dataset(ds)
        removed_total += len(removed)
        write_dataset_csv(ds, datasets_dir / f"sh_{meter_id}.csv")
        write_removed_csv("SH", meter_id, removed, datasets_dir / f"removed_sh_{meter_id}.csv")
        if args.split:
            train, valid = split_train_validation(ds, seed)
            write_dataset_csv(train, out / "splits" / f"sh_{meter_id}_train.csv")
            write_dataset_csv(valid, out / "splits" / f"sh_{meter_id}_valid.csv")

    nbh_source = parsed.readings if args.meter is None else per_meter[args.meter]
    nbh, _report = build_nbh_dataset(nbh_source)
    nbh, removed = clean_dataset(nbh)
    removed_total += len(removed)
    write_dataset_csv(nbh, datasets_dir / "nbh.csv")
    write_removed_csv("NBH", None, removed, datasets_dir / "removed_nbh.csv")
    if args.split:
        train, valid = split_train_validation(nbh, seed)
        write_dataset_csv(train, out / "splits" / "nbh_train.csv")
        write_dataset_csv(valid, out / "splits" / "nbh_valid.csv")

    write_manifest(out, "ingest", {
        "raw": str(raw_path), "meter": args.meter, "split": args.split,
        "include_day_period": args.include_day_period,
        "max_bad_lines": args.max_bad_lines,
    }, seed, [str(raw_path)], {"ingest": time.perf_counter() - t0})
    print(f"ingest: {len(parsed.readings)} readings, {len(parsed.issues)} bad line(s), "
          f"{len(per_meter)} meter(s), {removed_total} outlier row(s) removed -> {out}")
    return 0


# ---------------------------------------------------------------------------
# train

def _load_split(splits_dir: Path, stem: str, include_day_period: bool) -> tuple[Dataset, Dataset]:
    train_path = splits_dir / f"{stem}_train.csv"
    valid_path = splits_dir / f"{stem}_valid.csv"
    _missing(train_path, "training dataset")
    _missing(valid_path, "validation dataset")
    return (read_dataset_csv(train_path, include_day_period),
            read_dataset_csv(valid_path, include_day_period))


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    data = Path(args.data)
    splits_dir = data / "splits"
    _missing(splits_dir, "splits directory (run `gridwatch ingest --split` first)")
    out = Path(args.out)
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    params = scn.TreeParams(args.min_instances, args.prune_fraction,
                            args.smoothing, seed=seed)
    t0 = time.perf_counter()

    report_rows = [scn.TRAINING_REPORT_HEADER]
    trained = 0
    if args.level in ("sh", "both"):
        stems = sorted(p.name[:-len("_train.csv")] for p in splits_dir.glob("sh_*_train.csv"))
        if not stems:
            raise UserInputError(f"missing SH split datasets under {splits_dir}")
        for stem in stems:
            train, valid = _load_split(splits_dir, stem, args.include_day_period)
            model = train_model_tree(train, params, valid=valid)
            (models_dir / f"{stem}.amim").write_bytes(serialize(model))
            if args.dump_text:
                (models_dir / f"{stem}.txt").write_text(to_text(model) + "\n")
            row = scn.model_report_row(train.meter_id, model)
            report_rows.append([row[k] for k in scn.TRAINING_REPORT_HEADER])
            trained += 1
    if args.level in ("nbh", "both"):
        train, valid = _load_split(splits_dir, "nbh", args.include_day_period)
        model = train_rep_tree(train, params, valid=valid)
        (models_dir / "nbh.amim").write_bytes(serialize(model))
        if args.dump_text:
            (models_dir / "nbh.txt").write_text(to_text(model) + "\n")
        row = scn.model_report_row("NBH", model)
        report_rows.append([row[k] for k in scn.TRAINING_REPORT_HEADER])
        trained += 1

    _write_csv(out / "training_report.csv", report_rows)
    write_manifest(out, "train", {
        "data": str(data), "level": args.level, "min_instances": args.min_instances,
        "prune_fraction": args.prune_fraction, "smoothing": args.smoothing,
    }, seed, [str(data)], {"train": time.perf_counter() - t0})
    print(f"train: {trained} model(s) -> {models_dir}")
    return 0


# ---------------------------------------------------------------------------
# attack

def cmd_attack(args) -> int:
    seed = _resolve_seed(args)
    data = Path(args.data)
    splits_dir = data / "splits"
    _missing(splits_dir, "splits directory (run `gridwatch ingest --split` first)")
    out = Path(args.out)
    types = list(atk.ATTACK_TYPES) if args.attack == "all" else [args.attack]
    mix = {t: (1.0 if t in types else 0.0) for t in atk.ATTACK_TYPES}
    t0 = time.perf_counter()

    sh_valid = {}
    for path in sorted(splits_dir.glob("sh_*_valid.csv")):
        ds = read_dataset_csv(path)
        sh_valid[ds.meter_id] = ds
    nbh_path = splits_dir / "nbh_valid.csv"
    nbh_valid = read_dataset_csv(nbh_path) if nbh_path.exists() else None
    if not sh_valid and nbh_valid is None:
        raise UserInputError(f"missing validation datasets under {splits_dir}")

    corpus = atk.generate_corpus(sh_valid, nbh_valid, mix, seed)
    sh_rows = [r for r in atk.corpus_csv_rows(
        atk.Corpus([v for v in corpus.variants if v.level == "SH"], seed))]
    nbh_rows = [r for r in atk.corpus_csv_rows(
        atk.Corpus([v for v in corpus.variants if v.level == "NBH"], seed))]
    if sh_valid:
        _write_csv(out / "corpus_sh.csv", sh_rows)
    if nbh_valid is not None:
        _write_csv(out / "corpus_nbh.csv", nbh_rows)

    write_manifest(out, "attack", {"data": str(data), "attack": args.attack},
                   seed, [str(data)], {"attack": time.perf_counter() - t0})
    print(f"attack: {len(corpus.variants)} variant stream(s) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# detect

def _corpus_streams(path: Path):
    """Group corpus CSV rows into (meter_id, attack_type) replay streams."""
    streams: dict[tuple, list] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            meter_id = int(rec["meter_id"]) if rec["meter_id"] else None
            key = (meter_id, rec["attack_type"])
            streams.setdefault(key, []).append(rec)
    return streams


def cmd_detect(args) -> int:
    models_dir = Path(args.models)
    _missing(models_dir, "models directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    alerts = []
    states = []
    if args.corpus:
        corpus_path = Path(args.corpus)
        _missing(corpus_path, "corpus file")
        kind = "hour" if args.level == "sh" else "slot"
        for (meter_id, attack_type), recs in sorted(
                _corpus_streams(corpus_path).items(),
                key=lambda kv: (kv[0][0] or 0, kv[0][1])):
            state = _make_state(models_dir, args.level, meter_id, args.nbr_incr,
                                args.n_window, args.counter_mode)
            states.append((args.level.upper(), meter_id, state))
            step = sh_step if args.level == "sh" else nbh_step
            for rec in recs:
                fv = feature_vector(
                    _date(rec["date"]), int(rec["interval"]), kind, float(rec["attacked_kwh"]))
                event = step(state, fv)
                if event is not None:
                    alerts.append((attack_type, event))
    else:
        dataset_path = Path(args.dataset)
        _missing(dataset_path, "dataset file")
        ds = read_dataset_csv(dataset_path)
        level = "sh" if ds.level == "SH" else "nbh"
        state = _make_state(models_dir, level, ds.meter_id, args.nbr_incr,
                            args.n_window, args.counter_mode)
        states.append((ds.level, ds.meter_id, state))
        step = sh_step if level == "sh" else nbh_step
        for fv in sorted(ds.rows, key=lambda r: (r.date, r.interval)):
            event = step(state, fv)
            if event is not None:
                alerts.append(("none", event))

    log_path = out / "alerts.jsonl"
    with open(log_path, "w") as fh:
        for attack_type, event in alerts:
            obj = event.to_json_obj()
            obj["attack_type"] = attack_type
            fh.write(json.dumps(obj, sort_keys=True) + "\n")

    # routed rows, in the dataset schema plus a label column
    level = states[0][0] if states else "SH"
    suspect_rows = [fv for _, _, st in states for fv in st.suspects]
    benign_rows = [fv for _, _, st in states for fv in st.benign_buffer]
    meter = states[0][1] if len(states) == 1 else None
    write_labeled_csv(level, meter, suspect_rows, "suspect", out / "suspects.csv")
    write_labeled_csv(level, meter, benign_rows, "benign", out / "benign.csv")
    write_manifest(out, "detect", {
        "models": str(models_dir), "corpus": args.corpus, "dataset": args.dataset,
        "level": args.level, "nbr_incr": args.nbr_incr, "n_window": args.n_window,
        "counter_mode": args.counter_mode,
    }, _resolve_seed(args), [str(models_dir)], {"detect": time.perf_counter() - t0})
    print(f"detect: {len(alerts)} alert(s) -> {log_path}")
    return 0


def _date(text: str):
    import datetime as dt
    return dt.date.fromisoformat(text)


def _make_state(models_dir: Path, level: str, meter_id, nbr_incr: int, n_window: int,
                mode: str = "windowed"):
    if level == "sh":
        path = models_dir / f"sh_{meter_id}.amim"
        _missing(path, f"model for meter {meter_id}")
        return ShDetectorState(meter_id, deserialize(path.read_bytes()),
                               nbr_incr=nbr_incr, n_window=n_window, mode=mode)
    path = models_dir / "nbh.amim"
    _missing(path, "neighborhood model")
    return NbhDetectorState(deserialize(path.read_bytes()))


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    if args.config:
        config_path = Path(args.config)
        _missing(config_path, "scenario config")
        with open(config_path) as fh:
            try:
                cfg = scn.ScenarioConfig.from_json_obj(json.load(fh))
            except (TypeError, ValueError, KeyError) as exc:
                raise UserInputError(f"bad scenario config {config_path}: {exc}") from exc
    else:
        cfg = scn.ScenarioConfig()
    seed = _resolve_seed(args, cfg.seed)
    cfg = dataclasses.replace(cfg, seed=seed)
    if args.jobs is not None:
        cfg = dataclasses.replace(cfg, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = scn.run_scenario(cfg)

    with open(out / "report.json", "w") as fh:
        json.dump(result.report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_csv(out / "detection_summary.csv", scn.summary_rows(result.report))
    for (level, attack_type), points in sorted(result.roc.items()):
        rows = [["fpr", "tpr"]] + [[repr(x), repr(y)] for x, y in points]
        _write_csv(out / f"roc_{level.lower()}_{attack_type}.csv", rows)
    with open(out / "alerts.jsonl", "w") as fh:
        for attack_type, event in result.alerts:
            obj = event.to_json_obj()
            obj["attack_type"] = attack_type
            fh.write(json.dumps(obj, sort_keys=True) + "\n")

    sh_corpus = atk.Corpus([v for v in result.corpus.variants if v.level == "SH"], cfg.seed)
    nbh_corpus = atk.Corpus([v for v in result.corpus.variants if v.level == "NBH"], cfg.seed)
    _write_csv(out / "corpus_sh.csv", atk.corpus_csv_rows(sh_corpus))
    _write_csv(out / "corpus_nbh.csv", atk.corpus_csv_rows(nbh_corpus))

    rows = [scn.TRAINING_REPORT_HEADER]
    rows += [[r[k] for k in scn.TRAINING_REPORT_HEADER] for r in result.training_rows]
    _write_csv(out / "training_report.csv", rows)

    t0 = time.perf_counter()
    bench = _run_benchmark(cfg, args.benchmark_meters)
    rows = [scn.BENCHMARK_HEADER] + [[r[k] for k in scn.BENCHMARK_HEADER] for r in bench]
    _write_csv(out / "model_benchmark.csv", rows)
    result.timings["benchmark"] = time.perf_counter() - t0

    write_manifest(out, "simulate", cfg.to_json_obj(), cfg.seed,
                   [args.config or "<defaults>"], result.timings)
    sh_all = result.report["levels"]["SH"]["pooled"].get("all") or \
        next(iter(result.report["levels"]["SH"]["pooled"].values()), {})
    print(f"simulate: seed {cfg.seed}, {cfg.nb_sh} meter(s), {cfg.weeks} week(s); "
          f"SH tpr={sh_all.get('tpr')} fpr={sh_all.get('fpr')} -> {out}")
    return 0


def _run_benchmark(cfg: scn.ScenarioConfig, n_meters: int):
    if n_meters <= 0:
        return []
    from .synth import synth_readings
    readings = list(synth_readings(cfg.profile, min(n_meters, cfg.nb_sh), cfg.weeks, cfg.seed))
    per_meter: dict[int, list] = {}
    for r in readings:
        per_meter.setdefault(r.meter_id, []).append(r)
    splits = {}
    for meter_id in sorted(per_meter):
        ds, _ = build_sh_dataset(per_meter[meter_id], cfg.include_day_period)
        ds, _ = clean_dataset(ds)
        splits[meter_id] = split_train_validation(ds, cfg.seed)
    return scn.benchmark_models(splits, ["rep_tree", "model_tree"], cfg.tree_params())


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    run_dir = Path(args.run)
    report_path = run_dir / "report.json"
    _missing(report_path, "report.json (run `gridwatch simulate` first)")
    with open(report_path) as fh:
        report = json.load(fh)
    _write_csv(run_dir / "detection_summary.csv", scn.summary_rows(report))

    bench_path = run_dir / "model_benchmark.csv"
    if bench_path.exists():
        with open(bench_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        agg_rows = [["algorithm", "mae", "rmse", "train_seconds", "model_kb", "models"]]
        for algorithm in ("rep_tree", "model_tree"):
            sub = [r for r in rows if r["algorithm"] == algorithm]
            if not sub:
                continue
            mean = lambda key: sum(float(r[key]) for r in sub) / len(sub)
            agg_rows.append([algorithm, mean("mae"), mean("rmse"),
                             mean("train_seconds"), mean("model_bytes") / 1024.0, len(sub)])
        _write_csv(run_dir / "model_benchmark_summary.csv", agg_rows)

    for level in ("SH", "NBH"):
        for attack_type, entry in report["levels"][level]["pooled"].items():
            print(f"{level:3s} {attack_type:4s} "
                  f"tpr={_num(entry.get('tpr'))} fpr={_num(entry.get('fpr'))} "
                  f"ac={_num(entry.get('ac'))} rmse={_num(entry.get('rmse_benign'))} "
                  f"rmse_a={_num(entry.get('rmse_attack'))}")
    print(f"report: tables written under {run_dir}")
    return 0


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridwatch",
        description="Consumption-pattern detection of power-overloading attacks on metering data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw readings into SH/NBH datasets")
    p.add_argument("raw", help="raw readings file (.gz accepted)")
    p.add_argument("--out", required=True)
    p.add_argument("--meter", type=int, default=None, help="keep only this meter id")
    p.add_argument("--split", action="store_true", help="also write train/validation splits")
    p.add_argument("--include-day-period", action="store_true",
                   help="add the day/night attribute to SH datasets")
    p.add_argument("--max-bad-lines", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train per-home model trees and the neighborhood rep tree")
    p.add_argument("--data", required=True, help="ingest output directory (with splits/)")
    p.add_argument("--out", required=True)
    p.add_argument("--level", choices=("sh", "nbh", "both"), default="both")
    p.add_argument("--min-instances", type=int, default=10)
    p.add_argument("--prune-fraction", type=float, default=0.25)
    p.add_argument("--smoothing", action="store_true")
    p.add_argument("--include-day-period", action="store_true")
    p.add_argument("--dump-text", action="store_true",
                   help="also write a readable .txt rendering of each tree")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="generate labeled attack corpora from validation data")
    p.add_argument("--data", required=True, help="ingest output directory (with splits/)")
    p.add_argument("--out", required=True)
    p.add_argument("--attack", choices=atk.ATTACK_TYPES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("detect", help="replay a stream through the detectors")
    p.add_argument("--models", required=True, help="directory holding .amim model files")
    p.add_argument("--corpus", default=None, help="corpus CSV to replay")
    p.add_argument("--dataset", default=None, help="dataset CSV to replay (benign stream)")
    p.add_argument("--level", choices=("sh", "nbh"), default="sh")
    p.add_argument("--nbr-incr", type=int, default=2)
    p.add_argument("--n-window", type=int, default=4)
    p.add_argument("--counter-mode", choices=("windowed", "lifetime"), default="windowed")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="run a full synthetic scenario end to end")
    p.add_argument("--config", default=None, help="scenario config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--benchmark-meters", type=int, default=5)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="emit summary tables from a simulate run")
    p.add_argument("--run", required=True, help="simulate output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "detect" and not (args.corpus or args.dataset):
        print("error: detect needs --corpus or --dataset", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, UserInputError) else 1
    except UserInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GridwatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
