"""Command-line entry point: synth -> preprocess -> features -> train -> eval, plus topo.

Every stage reads and writes files, embeds ``{"seed", "config_hash"}`` in
what it writes and drops the resolved ``config.json`` next to its outputs.

Exit codes: 0 success, 2 bad input, 3 failed acceptance assertion.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .core import BANDS, EpochSet, Montage, get_band, map_kss_to_class
from .features import class_mean_band_power, feature_matrix, topo_scan
from .fileio import (FormatError, read_epochs, read_recording, read_schedule, write_epochs,
                     write_features, write_recording, write_schedule, write_topostats)
from .harness import (MODEL_KINDS, CVSettings, SubjectReport, load_table_csv, make_fold_plan,
                      run_cv, run_subject_cv)
from .model import (DegenerateFeaturesError, SingleClassError, build_fatigue_net,
                    train_fatigue_net, train_psd_svm)
from .nn import save_checkpoint
from .pipeline import preprocess
from .synth import PRESETS, SubjectProfile, generate_cohort
from .topomap import render_topomap, significant_channels

log = logging.getLogger("pilotfatigue")

EXIT_OK, EXIT_BAD_INPUT, EXIT_ASSERT = 0, 2, 3


class BadInput(Exception):
    """Raised for missing or malformed inputs; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")


def bundled_table1() -> Path:
    return Path(str(resources.files("pilotfatigue.data") / "table1.csv"))


# --------------------------------------------------------------------------- helpers

def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = cfg.override(_parse_set(args.set))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def provenance(cfg: RunConfig, stage: str, **extra) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.config_hash(), "stage": stage,
            "version": __version__, **extra}


def _files(stage: str, directory, pattern: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise BadInput(stage, f"{d}: input directory not found")
    found = sorted(d.glob(pattern), key=lambda p: _natural_key(p.stem))
    if not found:
        raise BadInput(stage, f"{d}: no {pattern} files")
    return found


def _natural_key(s: str):
    head = s.rstrip("0123456789")
    tail = s[len(head):]
    return head, int(tail) if tail else -1


def _load_epochs(stage: str, directory) -> EpochSet:
    sets = []
    for p in _files(stage, directory, "*.epch"):
        try:
            sets.append(read_epochs(p))
        except FormatError as exc:
            raise BadInput(stage, str(exc)) from exc
        except (OSError, ValueError) as exc:
            raise BadInput(stage, f"{p}: {exc}") from exc
    return EpochSet.concat(sets)


def _cv_settings(cfg: RunConfig) -> CVSettings:
    return CVSettings(train=cfg.train, net=cfg.net, svm_lambda=cfg.svm.lam,
                      svm_epochs=cfg.svm.epochs, welch_seg_len=cfg.welch.seg_len,
                      welch_overlap=cfg.welch.overlap)


def _welch_kw(cfg: RunConfig) -> dict:
    return {"seg_len": cfg.welch.seg_len, "overlap": cfg.welch.overlap}


# --------------------------------------------------------------------------- commands

def cmd_synth(args, cfg: RunConfig) -> int:
    s = cfg.synth
    if s.preset not in PRESETS:
        raise BadInput("synth", f"unknown preset {s.preset!r} (choose from {sorted(PRESETS)})")
    spec = PRESETS[s.preset]
    if s.duration_min:
        spec = replace(spec, duration_min=s.duration_min)
    if s.sample_rate:
        spec = replace(spec, sample_rate=s.sample_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = SubjectProfile(signature_gain=s.signature_gain)
    for sess in generate_cohort(s.subjects, cfg.seed, spec, base):
        prov = provenance(cfg, "synth", subject=sess.subject_id)
        write_recording(out / f"{sess.subject_id}.eegr", sess.recording, prov)
        write_schedule(out / f"{sess.subject_id}_schedule.csv", sess.schedule, prov)
        log.info("wrote %s (%d samples)", sess.subject_id, sess.recording.n_samples)
    cfg.save(out)
    return EXIT_OK


def cmd_preprocess(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for path in _files("preprocess", args.input, "*.eegr"):
        subj = path.stem
        sched_path = path.with_name(f"{subj}_schedule.csv")
        try:
            rec = read_recording(path)
        except FormatError as exc:
            raise BadInput("preprocess", str(exc)) from exc
        except OSError as exc:
            raise BadInput("preprocess", f"{path}: {exc}") from exc
        if not sched_path.exists():
            raise BadInput("preprocess", f"{sched_path}: schedule file missing")
        try:
            schedule = read_schedule(sched_path)
        except FormatError as exc:
            raise BadInput("preprocess", str(exc)) from exc
        except OSError as exc:
            raise BadInput("preprocess", f"{sched_path}: {exc}") from exc
        try:
            epochs, rep = preprocess(rec, [map_kss_to_class(k) for k in schedule], subj,
                                     cfg.preprocess)
        except ValueError as exc:
            raise BadInput("preprocess", f"{path}: {exc}") from exc
        write_epochs(out / f"{subj}.epch", epochs, provenance(cfg, "preprocess", subject=subj))
        reports[subj] = None if rep is None else {
            "rejected_components": rep.rejected_components,
            "component_scores": rep.component_scores,
            "ica_converged": rep.ica_converged, "ica_iterations": rep.ica_iterations}
        log.info("%s: %d epochs", subj, len(epochs))
    doc = {"provenance": provenance(cfg, "preprocess"), "subjects": reports}
    (out / "ica_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    cfg.save(out)
    return EXIT_OK


def cmd_features(args, cfg: RunConfig) -> int:
    epochs = _load_epochs("features", args.input)
    X = feature_matrix(epochs.data, **_welch_kw(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / "features.csv", epochs, X, provenance(cfg, "features"))
    cfg.save(out)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    epochs = _load_epochs("train", args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg, "train", model=args.model)
    try:
        if args.model == "psd_svm":
            X = feature_matrix(epochs.data, **_welch_kw(cfg))
            svm = train_psd_svm(X, epochs.labels, cfg.svm.lam, cfg.svm.epochs, seed=cfg.seed)
            doc = {"provenance": prov, "model": svm.to_dict()}
            (out / "psd_svm.json").write_text(json.dumps(doc, indent=2) + "\n")
        else:
            train_cfg = replace(cfg.train, seed=cfg.seed)
            net = build_fatigue_net(cfg.net, seed=cfg.seed, dtype=np.dtype(train_cfg.dtype))
            model, hist = train_fatigue_net(net, epochs, train_cfg, early_stopping=False)
            save_checkpoint(net, out / "hybrid.fatn", train_cfg.to_dict(), hist.to_dict(),
                            extra={"provenance": prov,
                                   "channel_mean": model.channel_mean.tolist(),
                                   "channel_std": model.channel_std.tolist()})
            cfg.net.save_json(out / "net.json")
    except (SingleClassError, DegenerateFeaturesError) as exc:
        raise BadInput("train", f"{args.input}: {exc}") from exc
    cfg.save(out)
    return EXIT_OK


def _check_fixture(report: SubjectReport, reference: str) -> list[str]:
    problems = []
    pv = report.p_values(reference)
    for model, p in pv.items():
        print(f"{reference} vs {model}: p = {p:.6g}")
        if not p < 0.05:
            problems.append(f"{reference} vs {model}: p = {p:.4g} is not < 0.05")
    return problems


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(args.out) if args.out else None
    if args.fixture is not None:
        path = bundled_table1() if args.fixture == "bundled" else Path(args.fixture)
        try:
            report = load_table_csv(path)
        except (OSError, ValueError, IndexError) as exc:
            raise BadInput("eval", f"{path}: cannot read accuracy table ({exc})") from exc
        reference = args.reference or report.models[-1]
        if reference not in report.models:
            raise BadInput("eval", f"{path}: no column named {reference!r}")
        print(report.to_csv(reference), end="")
        problems = _check_fixture(report, reference)
    else:
        epochs = _load_epochs("eval", args.input)
        models = args.models.split(",")
        bad = [m for m in models if m not in MODEL_KINDS]
        if bad:
            raise BadInput("eval", f"unknown model kinds {bad} (choose from {MODEL_KINDS})")
        settings = _cv_settings(cfg)
        c = cfg.cv
        if c.pooled:
            plan = make_fold_plan(len(epochs), c.k, c.repeats, cfg.seed, epochs.labels,
                                  c.stratified)
            results = {"pooled": {m: run_cv(epochs, m, plan, settings, cfg.seed, jobs=args.jobs)
                                  for m in models}}
            report = SubjectReport.from_results(results)
        else:
            report = run_subject_cv(epochs, models, c.k, c.repeats, cfg.seed, settings,
                                    c.stratified, jobs=args.jobs)
        reference = args.reference or models[0]
        if reference not in models:
            raise BadInput("eval", f"reference {reference!r} is not among the evaluated models")
        use_ref = reference if len(models) > 1 and len(report.subjects) >= 5 else None
        print(report.to_csv(use_ref), end="")
        problems = [f"{s}/{m}: {len(r.failed)} failed folds"
                    for s, per in report.details.items() for m, r in per.items() if r.failed]
    for spec in args.min_accuracy or ():
        model, _, thr = spec.partition("=")
        if model not in report.models:
            raise BadInput("eval", f"--min-accuracy: unknown model {model!r}")
        mean = float(report.mean[report.models.index(model)])
        if mean < float(thr):
            problems.append(f"{model}: mean accuracy {mean:.4f} < {thr}")
    if out is not None:
        ref = reference if len(report.models) > 1 and len(report.subjects) >= 5 else None
        report.save(out, ref, provenance(cfg, "eval"))
        cfg.save(out)
    for p in problems:
        print(f"ASSERTION FAILED: {p}", file=sys.stderr)
    return EXIT_ASSERT if problems else EXIT_OK


def cmd_topo(args, cfg: RunConfig) -> int:
    epochs = _load_epochs("topo", args.input)
    if args.subject:
        if args.subject not in epochs.subject_ids:
            raise BadInput("topo", f"subject {args.subject!r} not found in {args.input}")
        epochs = epochs.for_subject(args.subject)
    try:
        bands = [get_band(b) for b in args.bands.split(",")] if args.bands else list(BANDS)
    except (KeyError, ValueError) as exc:
        raise BadInput("topo", str(exc)) from exc
    montage = Montage.default()
    if [c.name for c in montage.eeg] != list(epochs.channel_names):
        raise BadInput("topo", f"{args.input}: channels do not match the default montage")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg, "topo")
    stats = []
    for band in bands:
        try:
            band_stats = topo_scan(epochs, band, **_welch_kw(cfg))
        except ValueError as exc:
            raise BadInput("topo", f"{args.input}: {exc}") from exc
        stats += band_stats
        powers = class_mean_band_power(epochs, band, **_welch_kw(cfg))
        svg = render_topomap(montage, band, powers, significant_channels(band_stats),
                             provenance=json.dumps(prov, sort_keys=True))
        (out / f"topo_{band.name}.svg").write_text(svg)
        print(f"{band.name}: significant {significant_channels(band_stats)}")
    write_topostats(out / "topostats.csv", stats, prov)
    cfg.save(out)
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flat 'section.key' settings")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable; VALUE parsed as JSON)")
    common.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="pilotfatigue", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--preset", help="session preset: desk or full (synth.preset)")
    s.add_argument("--subjects", type=int, help="number of subjects (synth.subjects)")
    s.add_argument("--gain", type=float, help="signature gain g (synth.signature_gain)")

    s = sub.add_parser("preprocess", parents=[common],
                       help="filter, ICA-clean and epoch every recording in a directory")
    s.add_argument("--in", dest="input", required=True, help="directory of .eegr + schedules")
    s.add_argument("--out", required=True, help="output directory for .epch files")

    s = sub.add_parser("features", parents=[common], help="band-power feature table")
    s.add_argument("--in", dest="input", required=True, help="directory of .epch files")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("train", parents=[common], help="train one model on all epochs")
    s.add_argument("--in", dest="input", required=True, help="directory of .epch files")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--model", choices=MODEL_KINDS, default="hybrid")
    s.add_argument("--jobs", type=int, default=1, help="accepted for symmetry with eval")

    s = sub.add_parser("eval", parents=[common],
                       help="cross-validate models, or check an accuracy table fixture")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--in", dest="input", help="directory of .epch files")
    src.add_argument("--fixture", nargs="?", const="bundled",
                     help="accuracy table CSV (default: the bundled published table)")
    s.add_argument("--out", help="output directory for report.csv/report.json")
    s.add_argument("--models", default=",".join(MODEL_KINDS),
                   help="comma-separated model kinds (default: %(default)s)")
    s.add_argument("--reference", help="column tested against the others (default: first model,"
                                       " or the last column of a fixture)")
    s.add_argument("--min-accuracy", action="append", metavar="MODEL=THRESHOLD",
                   help="exit 3 if the model's mean accuracy is below THRESHOLD (repeatable)")
    s.add_argument("--jobs", type=int, default=1, help="parallel fold workers")

    s = sub.add_parser("topo", parents=[common], help="per-channel band statistics and SVG maps")
    s.add_argument("--in", dest="input", required=True, help="directory of .epch files")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--bands", help="comma-separated band names (default: all four)")
    s.add_argument("--subject", help="restrict to one subject")
    return p


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "features": cmd_features,
            "train": cmd_train, "eval": cmd_eval, "topo": cmd_topo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            flat = {k: v for k, v in (("synth.preset", args.preset),
                                      ("synth.subjects", args.subjects),
                                      ("synth.signature_gain", args.gain)) if v is not None}
            cfg = cfg.override(flat)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, BadInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
