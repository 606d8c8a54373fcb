"""``fatiguenet`` command line: synth -> preprocess -> train / ablate -> report.

Stages talk to each other only through files below ``--out``::

    recordings/   raw CSV streams + manifest.json        (synth)
    images/       samples.f32 + samples.json, segmentation.csv  (preprocess)
    results/      fold_<i>/..., metrics.json, ablation_<grid>.csv, report.csv
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import dataclasses
import datetime as dt
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, parse_config, serialize_config
from .dsp import read_csv, write_csv
from .errors import FatigueNetError, InvalidConfigError
from .fileio import atomic_open, read_image_batch, write_image_batch, write_json
from .pipeline import SampleSet, preprocess_subject
from .segmentation import Trial, write_segmentation_report
from .synthgen import iter_subjects
from .training import ablation_run, grid_configs, make_folds, train_fold

log = logging.getLogger("fatiguenet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="fatiguenet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="JSON pipeline config (defaults if omitted)")
        sp.add_argument("--out", default="run", help="run directory (default: ./run)")
        sp.add_argument("--seed", type=int, help="override the stage's RNG seed")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    common(sub.add_parser("synth", help="generate synthetic recordings"))
    common(sub.add_parser("preprocess", help="recordings -> time-frequency images"))
    tr = common(sub.add_parser("train", help="leave-subjects-out cross-validation"))
    tr.add_argument("--fold", type=int, help="run only this fold index")
    ab = common(sub.add_parser("ablate", help="structural or loss ablation grid"))
    ab.add_argument("--grid", required=True, choices=("structural", "loss"))
    ab.add_argument("--fold", type=int, default=0, help="fold index (default 0)")
    common(sub.add_parser("report", help="aggregate fold metrics into a table"))
    return p


def _threads():
    raw = os.environ.get("FATIGUENET_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfigError(f"FATIGUENET_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


# --- stages ------------------------------------------------------------------------

def stage_synth(cfg: PipelineConfig, out: Path, seed):
    synth = cfg.synth if seed is None else dataclasses.replace(cfg.synth, rng_seed=seed)
    rec = out / cfg.paths.recordings
    produced, entries = [], []
    for subj in iter_subjects(synth):
        for tr in subj.trials:
            stem = f"s{tr.subject_id:02d}/b{tr.borg:02d}_t{tr.trial_id}"
            for kind, sig in (("semg", tr.semg), ("imu", tr.imu)):
                path = rec / f"{stem}_{kind}.csv"
                write_csv(path, sig)
                produced.append(path)
            entries.append({"subject": tr.subject_id, "borg": tr.borg, "trial": tr.trial_id,
                            "semg": f"{stem}_semg.csv", "imu": f"{stem}_imu.csv"})
    write_json(rec / "manifest.json", {"trials": entries})
    produced.append(rec / "manifest.json")
    return produced, synth.rng_seed


def _load_subject(rec: Path, entries):
    return [Trial(read_csv(rec / e["semg"]), read_csv(rec / e["imu"]), e["borg"], e["subject"],
                  e["trial"]) for e in entries]


def _preprocess_one(rec, entries, dsp_cfg):
    report = []
    samples = preprocess_subject(_load_subject(Path(rec), entries), dsp_cfg, report)
    return samples, report


def stage_preprocess(cfg: PipelineConfig, out: Path, seed):
    rec = out / cfg.paths.recordings
    try:
        manifest = json.loads((rec / "manifest.json").read_text())
    except OSError as exc:
        raise InvalidConfigError(f"no recordings at {rec} (run 'synth' first)") from exc
    by_subject = {}
    for e in manifest["trials"]:
        by_subject.setdefault(e["subject"], []).append(e)
    jobs = [(str(rec), by_subject[s], cfg.dsp) for s in sorted(by_subject)]
    n_workers = min(_threads(), len(jobs))
    if n_workers > 1:
        with cf.ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_preprocess_one, *zip(*jobs)))
    else:
        results = [_preprocess_one(*j) for j in jobs]
    samples = SampleSet.concat([r[0] for r in results])
    img_dir = out / cfg.paths.images
    write_image_batch(img_dir / "samples", samples.images, samples.freq_axis, samples.time_axis,
                      samples.labels())
    write_segmentation_report(img_dir / "segmentation.csv", [row for r in results for row in r[1]])
    return [img_dir / "samples.f32", img_dir / "samples.json", img_dir / "segmentation.csv"], seed


def load_samples(img_dir: Path) -> SampleSet:
    try:
        images, meta = read_image_batch(img_dir / "samples")
    except OSError as exc:
        raise InvalidConfigError(f"no images at {img_dir} (run 'preprocess' first)") from exc
    lab = {k: np.asarray(v, dtype=int) for k, v in meta["labels"].items()}
    return SampleSet(images, lab["fatigue"], lab["subject"], lab["borg"], lab["trial"],
                     np.asarray(meta["freq_axis"]), np.asarray(meta["time_axis"]))


def _folds(cfg, samples):
    return make_folds(np.unique(samples.subject), cfg.folds.k, cfg.folds.seed)


def _pick_fold(folds, i):
    if i is None:
        return list(enumerate(folds))
    if not 0 <= i < len(folds):
        raise InvalidConfigError(f"--fold {i} out of range [0, {len(folds) - 1}]")
    return [(i, folds[i])]


def stage_train(cfg: PipelineConfig, out: Path, seed, fold=None):
    tcfg = cfg.train if seed is None else dataclasses.replace(cfg.train, rng_seed=seed)
    samples = load_samples(out / cfg.paths.images)
    res_dir = out / cfg.paths.results
    produced = []
    for i, spec in _pick_fold(_folds(cfg, samples), fold):
        fold_dir = res_dir / f"fold_{i}"
        log.info("fold %d: validating on subjects %s", i, list(spec.val_subjects))
        r = train_fold(samples, spec, tcfg, fold_dir)
        log.info("fold %d: final acc %.2f, best acc %.2f (epoch %d)", i, r.final.accuracy,
                 r.best.accuracy, r.best_epoch)
        produced += [fold_dir / n for n in ("epoch_log.csv", "metrics.json", "final.bin",
                                            "final.json", "best.bin", "best.json")]
    agg = aggregate(res_dir)
    write_json(res_dir / "metrics.json", agg)
    produced.append(res_dir / "metrics.json")
    return produced, tcfg.rng_seed


def stage_ablate(cfg: PipelineConfig, out: Path, seed, grid, fold):
    tcfg = cfg.train if seed is None else dataclasses.replace(cfg.train, rng_seed=seed)
    grid_configs(grid, tcfg)            # validates the grid name early
    samples = load_samples(out / cfg.paths.images)
    (_, spec), = _pick_fold(_folds(cfg, samples), fold)
    path = out / cfg.paths.results / f"ablation_{grid}.csv"
    ablation_run(samples, spec, grid, tcfg, path)
    return [path], tcfg.rng_seed


def aggregate(res_dir: Path):
    folds = sorted(res_dir.glob("fold_*/metrics.json"), key=lambda p: int(p.parent.name[5:]))
    if not folds:
        raise InvalidConfigError(f"no fold metrics under {res_dir} (run 'train' first)")
    rows = []
    for p in folds:
        m = json.loads(p.read_text())
        rows.append({"fold": int(p.parent.name[5:]), "final": m["final"], "best": m["best"]})
    mean = {kind: {k: float(np.mean([r[kind][k] for r in rows]))
                   for k in ("accuracy", "macro_recall", "macro_f1")}
            for kind in ("final", "best")}
    return {"folds": rows, "average": mean}


def report_table(agg) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("fold", "accuracy", "recall", "f1", "best_accuracy", "best_recall", "best_f1"))

    def row(name, f, b):
        w.writerow((name, *(f"{f[k]:.2f}" for k in ("accuracy", "macro_recall", "macro_f1")),
                    *(f"{b[k]:.2f}" for k in ("accuracy", "macro_recall", "macro_f1"))))
    for r in agg["folds"]:
        row(f"Fold {r['fold'] + 1}", r["final"], r["best"])
    row("Average", agg["average"]["final"], agg["average"]["best"])
    return buf.getvalue()


def stage_report(cfg: PipelineConfig, out: Path, seed):
    res_dir = out / cfg.paths.results
    table = report_table(aggregate(res_dir))
    with atomic_open(res_dir / "report.csv", "w", newline="") as fh:
        fh.write(table)
    sys.stdout.write(table)
    return [res_dir / "report.csv"], seed


# --- driver ------------------------------------------------------------------------

def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _now()
    out = Path(args.out)
    try:
        cfg = parse_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        stored = serialize_config(cfg)
        if args.command == "synth":
            produced, seed = stage_synth(cfg, out, args.seed)
        elif args.command == "preprocess":
            produced, seed = stage_preprocess(cfg, out, args.seed)
        elif args.command == "train":
            produced, seed = stage_train(cfg, out, args.seed, args.fold)
        elif args.command == "ablate":
            produced, seed = stage_ablate(cfg, out, args.seed, args.grid, args.fold)
        else:
            produced, seed = stage_report(cfg, out, args.seed)
        cfg_path = out / f"config_{args.command}.json"
        with atomic_open(cfg_path, "w", encoding="utf-8") as fh:
            fh.write(stored)
        write_json(out / f"manifest_{args.command}.json", {
            "command": args.command,
            "config_file": cfg_path.name,
            "config_sha256": hashlib.sha256(stored.encode()).hexdigest(),
            "code_version": __version__,
            "seed": seed,
            "started": started,
            "finished": _now(),
            "produced": sorted(str(Path(p).relative_to(out)) for p in produced),
        })
    except (FatigueNetError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"fatiguenet {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
