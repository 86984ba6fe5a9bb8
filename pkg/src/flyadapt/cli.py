"""Batch experiment harness: ``datagen | train | eval | track | plotdata | repro``.

Every config key is also a flag (``--train.epochs 500``). Outputs land in
``paths.out_dir`` and carry the resolved config hash.

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 threshold failure.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import adapt as ad
from . import config as cf
from . import control as ctl
from . import experiment as ex
from . import metrics
from . import net
from . import sim
from . import state as st
from . import trainer as tr
from .dynamics import DynModel, DynamicsError

log = logging.getLogger("flyadapt")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 1, 2, 3
NUMERICAL_ERRORS = (tr.TrainingDiverged, tr.LossNotFinite, DynamicsError, net.ModelCorrupt,
                    ad.AdaptError, ctl.ControlError, FloatingPointError, np.linalg.LinAlgError)


class ThresholdFailure(RuntimeError):
    pass


# -- layout ------------------------------------------------------------------------

def _out(cfg):
    return Path(cfg.paths.out_dir)


def data_dir(cfg, split=None):
    d = _out(cfg) / "data"
    return d if split is None else d / split


def model_path(cfg):
    return _out(cfg) / "model" / "model.json"


def track_dir(cfg, reference, adapt_on):
    return _out(cfg) / "track" / f"{reference}_{'on' if adapt_on else 'off'}"


def _provenance(cfg):
    return {"config_hash": cf.config_hash(cfg)}


def _write_json(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _record_config(cfg):
    _write_json(_out(cfg) / "config.resolved.json",
                {"config_hash": cf.config_hash(cfg), "config": cf.to_dict(cfg)})
    log.info("resolved config %s: %s", cf.config_hash(cfg)[:12], cf.dumps(cfg))


# -- datagen -------------------------------------------------------------------------

def _ranges(trajs, split):
    states = np.concatenate([t.states for t in trajs])
    controls = np.concatenate([t.controls for t in trajs])
    rows = []
    for name, col in zip(st.STATE_COLUMNS + st.CONTROL_COLUMNS,
                         list(states.T) + list(controls.T)):
        rows.append({"split": split, "name": name, "min": float(col.min()), "max": float(col.max()),
                     "mean": float(col.mean()), "std": float(col.std())})
    return rows


def cmd_datagen(cfg):
    t0 = time.perf_counter()
    train_set, val_set = sim.generate_dataset(cfg.datagen, cfg.sim.quad)
    prov = _provenance(cfg)
    tr.Dataset(train_set).save(data_dir(cfg, "train"), prov)
    tr.Dataset(val_set, "validation").save(data_dir(cfg, "validation"), prov)
    ranges = _ranges(train_set, "train") + _ranges(val_set, "validation")
    manifest = dict(prov, n_train=len(train_set), n_validation=len(val_set),
                    n_samples=cfg.datagen.n_samples, dt=cfg.datagen.dt, seed=cfg.datagen.seed,
                    ranges=ranges)
    _write_json(data_dir(cfg) / "manifest.json", manifest)
    with open(data_dir(cfg) / "ranges.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={prov['config_hash']}\n")
        writer = csv.DictWriter(fh, ["split", "name", "min", "max", "mean", "std"])
        writer.writeheader()
        writer.writerows(ranges)
    log.info("datagen: %d train / %d validation trajectories in %.1fs",
             len(train_set), len(val_set), time.perf_counter() - t0)
    return manifest


def _load_split(cfg, split):
    d = data_dir(cfg, split)
    trajs = st.load_trajectories(d)
    if not trajs:
        raise cf.ConfigError(f"no trajectories in {d}; run datagen first")
    if trajs[0].dt != cfg.sim.dt:
        raise cf.ConfigError(f"dataset dt={trajs[0].dt} differs from sim.dt={cfg.sim.dt}")
    return tr.Dataset(trajs, split)


# -- train -----------------------------------------------------------------------------

def cmd_train(cfg):
    train_ds, val_ds = _load_split(cfg, "train"), _load_split(cfg, "validation")
    t0 = time.perf_counter()
    every = max(1, cfg.train.epochs // 20)

    def progress(epoch, lr, tl, vl):
        if epoch % every == 0 or epoch == cfg.train.epochs - 1:
            log.info("epoch %d lr %.2e train %.4f val %.4f", epoch, lr, tl, vl)

    res = tr.train(train_ds, val_ds, cfg.train, progress=progress)
    prov = _provenance(cfg)
    path = model_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    net.save_model(path, res.params, res.stats, cfg.sim.dt,
                   extra=dict(prov, q_weights=np.diag(res.q_weights).tolist()))
    tr.write_log(path.parent / "train_log.csv", res.log, prov)
    final = res.log[-1][3]
    log.info("train: %d epochs in %.1fs", cfg.train.epochs, time.perf_counter() - t0)
    print(f"final validation loss {final:.6g} (initial {res.initial_val_loss:.6g})")
    return res


def load_model(cfg, path=None):
    path = model_path(cfg) if path is None else Path(path)
    if not path.exists():
        raise cf.ConfigError(f"model file {path} not found; run train first")
    params, stats, dt, adapters, _ = net.load_model(path)
    if dt != cfg.sim.dt:
        raise cf.ConfigError(f"model dt={dt} differs from sim.dt={cfg.sim.dt}")
    return DynModel(params, stats, dt, adapters)


# -- eval ------------------------------------------------------------------------------

EVAL_COLUMNS = ("model",) + metrics.PREDICTION_BLOCKS


def cmd_eval(cfg, model_file=None, check=False):
    model = load_model(cfg, model_file)
    val_ds = _load_split(cfg, "validation")
    windows = tr.window(val_ds, cfg.track.eval_horizon)
    report = metrics.prediction_rmse(model, windows)
    baselines = metrics.baseline_rmse(windows, cfg.sim.dt)
    checks = metrics.prediction_checks(report, baselines)
    rows = [dict({"model": "learned"}, **report.as_dict())]
    rows += [dict({"model": name}, **rep.as_dict()) for name, rep in baselines.items()]
    prov = _provenance(cfg)
    out = _out(cfg) / "eval"
    _write_json(out / "eval.json", dict(prov, horizon=cfg.track.eval_horizon,
                                        windows=len(windows), learned=report.as_dict(),
                                        baselines={k: v.as_dict() for k, v in baselines.items()},
                                        bounds=metrics.PREDICTION_BOUNDS, checks=checks))
    (out / "eval.csv").write_text(metrics.table_csv(rows, EVAL_COLUMNS, prov))
    print(metrics.table_text(rows, EVAL_COLUMNS, note=False), end="")
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        log.warning("prediction checks failed: %s", ", ".join(failed))
        if check:
            raise ThresholdFailure(f"prediction checks failed: {failed}")
    return report, baselines, checks


# -- track -----------------------------------------------------------------------------

def cmd_track(cfg, reference, adapt_on, model_file=None):
    model = load_model(cfg, model_file)
    tcfg = ex.TrackConfig(reference=reference, duration=cfg.track.duration,
                          payload=cfg.sim.payload_mass, activation_time=cfg.sim.activation_time,
                          adapt=adapt_on, measurement_noise=cfg.track.measurement_noise,
                          seed=cfg.track.seed)
    res = ex.run_tracking(model, tcfg, cfg.control, cfg.adapt, cfg.sim.quad,
                          substeps=cfg.sim.substeps)
    prov = _provenance(cfg)
    out = track_dir(cfg, reference, adapt_on)
    out.mkdir(parents=True, exist_ok=True)
    ctl.write_control_log(out / "control_log.csv", res.control_rows(), prov)
    if adapt_on:
        ad.write_adapt_log(out / "adapt_log.csv", res.adapt_log, prov)
    _write_json(out / "report.json", dict(prov, reference=reference, adapt=adapt_on,
                                          report=res.report.as_dict(),
                                          control_failures=res.control_failures,
                                          altitude_offset=ex.altitude_offset(res),
                                          window_cost_monotone=ex.window_costs_monotone(res.adapt_log),
                                          wall_time=res.wall_time))
    log.info("track %s adapt=%s: pos %.4f heading %.4f (%.0fs wall, %d failed cycles)", reference,
             "on" if adapt_on else "off", res.report.pos, res.report.heading, res.wall_time,
             res.control_failures)
    return res


# -- plotdata --------------------------------------------------------------------------

PLOT_COLUMNS = ("t", "x", "y", "z", "ref_x", "ref_y", "ref_z", "yaw", "ref_yaw", "err_pos", "err_z")


def _read_log(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, np.array([[float(v) for v in row] for row in reader])


def cmd_plotdata(cfg, logs_dir=None):
    logs_dir = _out(cfg) / "track" if logs_dir is None else Path(logs_dir)
    paths = sorted(logs_dir.glob("*/control_log.csv"))
    if not paths:
        raise cf.ConfigError(f"no control logs under {logs_dir}; run track first")
    out = _out(cfg) / "plots"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in paths:
        header, data = _read_log(path)
        idx = {name: i for i, name in enumerate(header)}
        x = data[:, [idx[f"x_{i}"] for i in range(13)]]
        r = data[:, [idx[f"ref_{i}"] for i in range(13)]]
        table = np.column_stack([data[:, idx["t"]], x[:, :3], r[:, :3], metrics.yaw(x[:, st.Q]),
                                 metrics.yaw(r[:, st.Q]), np.linalg.norm(x[:, :3] - r[:, :3], axis=1),
                                 r[:, 2] - x[:, 2]])
        target = out / f"{path.parent.name}.csv"
        with open(target, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PLOT_COLUMNS)
            writer.writerows([repr(float(v)) for v in row] for row in table)
        written.append(target)
    log.info("plotdata: wrote %d files to %s", len(written), out)
    return written


# -- repro -------------------------------------------------------------------------------

def cmd_repro(cfg, check=False):
    """datagen -> train -> eval -> track x (references x adapt off/on) -> summary.

    Wall times are returned but kept out of the summary files, which must be
    identical across runs with the same config.
    """
    t0 = time.perf_counter()
    cmd_datagen(cfg)
    cmd_train(cfg)
    report, baselines, pred_checks = cmd_eval(cfg)
    model_time = time.perf_counter() - t0
    runs = {}
    for ref in cfg.track.references:
        for adapt_on in (False, True):
            runs[ref, adapt_on] = cmd_track(cfg, ref, adapt_on)
    cmd_plotdata(cfg)
    rows = metrics.summary_rows((ref, on, res.report) for (ref, on), res in runs.items())
    checks = {}
    for ref in cfg.track.references:
        off, on = runs[ref, False], runs[ref, True]
        checks[ref] = dict(ex.adaptation_checks(off, on), **ex.altitude_checks(off, on))
    prov = _provenance(cfg)
    pred_rows = [dict({"model": "learned"}, **report.as_dict())]
    pred_rows += [dict({"model": name}, **rep.as_dict()) for name, rep in baselines.items()]
    (_out(cfg) / "summary.csv").write_text(metrics.table_csv(rows, header_extra=prov))
    text = ("tracking\n" + metrics.table_text(rows) + "\nopen-loop prediction, "
            f"T={cfg.track.eval_horizon}\n" + metrics.table_text(pred_rows, EVAL_COLUMNS, note=False))
    (_out(cfg) / "summary.txt").write_text(text)
    _write_json(_out(cfg) / "checks.json", dict(prov, prediction=pred_checks, tracking=checks))
    print(text, end="")
    failed = [k for k, ok in pred_checks.items() if not ok]
    failed += [f"{ref}.{k}" for ref, c in checks.items() for k, v in c.items()
               if isinstance(v, bool) and not v]
    if failed:
        log.warning("repro checks failed: %s", ", ".join(failed))
        if check:
            raise ThresholdFailure(f"checks failed: {failed}")
    return {"rows": rows, "tracking": checks, "prediction": pred_checks, "report": report,
            "baselines": baselines, "model_time": model_time,
            "track_times": {f"{ref}_{'on' if on else 'off'}": res.wall_time
                            for (ref, on), res in runs.items()},
            "summary": _out(cfg) / "summary.csv"}


# -- argument handling -------------------------------------------------------------------

def _config_flags(parser):
    group = parser.add_argument_group("config keys (section.key VALUE)")
    for name in cf.SECTIONS:
        for key in cf.section_fields(name):
            group.add_argument(f"--{name}.{key}", dest=f"cfg:{name}.{key}", metavar="VALUE",
                               default=None)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--preset", default="paper-repro", choices=sorted(cf.PRESETS))
    common.add_argument("-q", "--quiet", action="store_true")
    _config_flags(common)
    parser = argparse.ArgumentParser(prog="flyadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("datagen", parents=[common], help="simulate train/validation trajectories")
    sub.add_parser("train", parents=[common], help="fit the dynamics network")
    p = sub.add_parser("eval", parents=[common], help="open-loop prediction RMSE")
    p.add_argument("--model", help="model file (default: out_dir/model/model.json)")
    p.add_argument("--check", action="store_true", help="exit 3 when a bound is missed")
    p = sub.add_parser("track", parents=[common], help="closed-loop tracking run")
    p.add_argument("--model")
    p.add_argument("--reference", default="circle", choices=("circle", "lemniscate", "hover"))
    p.add_argument("--adapt", default="off", choices=("on", "off"))
    p.add_argument("--payload", type=float, help="payload mass in kg (sets sim.payload_mass)")
    p = sub.add_parser("plotdata", parents=[common], help="tidy CSVs from tracking logs")
    p.add_argument("--logs", help="directory holding <run>/control_log.csv")
    p = sub.add_parser("repro", parents=[common], help="full pipeline with summary table")
    p.add_argument("--check", action="store_true", help="exit 3 when a check fails")
    return parser


def resolve_config(args):
    cfg = cf.preset(args.preset)
    if args.config:
        cfg = cf.load(args.config, cfg)
    overrides = [(dest[4:], cf.parse_value(v)) for dest, v in vars(args).items()
                 if dest.startswith("cfg:") and v is not None]
    if getattr(args, "payload", None) is not None:
        overrides.append(("sim.payload_mass", args.payload))
    return cf.apply_overrides(cfg, overrides) if overrides else cfg


def run(args):
    cfg = resolve_config(args)
    _out(cfg).mkdir(parents=True, exist_ok=True)
    _record_config(cfg)
    if args.command == "datagen":
        cmd_datagen(cfg)
    elif args.command == "train":
        cmd_train(cfg)
    elif args.command == "eval":
        cmd_eval(cfg, args.model, args.check)
    elif args.command == "track":
        cmd_track(cfg, args.reference, args.adapt == "on", args.model)
    elif args.command == "plotdata":
        cmd_plotdata(cfg, args.logs)
    else:
        cmd_repro(cfg, args.check)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or (argv[0].startswith("-") and argv[0] not in ("-h", "--help")):
        argv = ["repro"] + argv
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        run(args)
    except cf.ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ThresholdFailure as exc:
        log.error("%s", exc)
        return EXIT_THRESHOLD
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
