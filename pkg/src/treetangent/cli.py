"""``treetangent`` command line driver.

Every subcommand writes CSV tables (and, where it makes sense, an SVG line
plot rebuilt from the CSV) into ``--out``. Settings resolve as command-line
flags, then a ``--config`` JSON file, then built-in defaults.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import experiments as ex
from .data import CSVFormatError, load_csv, preprocess
from .kernels import ARCH_NAMES, LeafProfile, NumericalError
from .svg import plot_csv
from .topology import load_topology, shared_profile_pair

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RESOURCE = 0, 2, 3, 4

DEFAULTS = {
    "arch": "pb",
    "depth": 5,
    "alpha": [2.0],
    "trees": [16, 64, 256, 1024, 4096],
    "seed": 0,
    "seeds": 10,
    "steps": 100,
    "eta": 0.1,
    "grid": 64,
    "data": None,
    "label": "-1",
    "folds": 4,
    "lambda": 1e-8,
    "out": "out",
    "max_params": ex.DEFAULT_MAX_PARAMS,
    "no_header": False,
    "bias": False,
    "no_normalize": False,
    "real_targets": False,
    "topo_a": None,
    "topo_b": None,
}

# per-subcommand overrides of the shared defaults
COMMAND_DEFAULTS = {
    "kernel-curve": {},
    "convergence": {},
    "depth-sweep": {"depth": [1, 2, 4, 8, 16, 32, 64, 128]},
    "train-compare": {"trees": [16, 4096], "steps": 200, "seeds": 5},
    "regress": {"arch": "pb,dl", "depth": [2, 4, 8, 16, 32, 64, 128], "alpha": [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]},
    "drift": {"depth": 3},
}


def _listify(value, conv):
    if isinstance(value, (list, tuple)):
        return [conv(v) for v in value]
    return [conv(v) for v in str(value).split(",") if v.strip()]


def parse_arch(text):
    """``pb|dl|dlinf|rule``, ``profile:<json file>`` or ``topo:<json file>``."""
    text = str(text)
    if text.startswith("profile:"):
        return LeafProfile.from_json(Path(text[len("profile:"):]).read_text(encoding="utf-8"))
    if text.startswith("topo:"):
        return load_topology(text[len("topo:"):])
    if text not in ARCH_NAMES:
        raise ex.ConfigError(f"unknown architecture {text!r}")
    return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with settings (overridden by flags)")
    common.add_argument("--arch", help="pb | dl | dlinf | rule | profile:<file> | topo:<file> (comma list for regress)")
    common.add_argument("--depth", help="tree depth (comma list for depth-sweep and regress)")
    common.add_argument("--alpha", help="scaling factor(s) of the decision function, comma separated")
    common.add_argument("--trees", help="ensemble sizes M, comma separated, ascending")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--seeds", type=int, help="replicates per ensemble size")
    common.add_argument("--steps", type=int, help="gradient descent steps")
    common.add_argument("--eta", type=float, help="learning rate")
    common.add_argument("--grid", type=int, help="number of beta grid points on [0, pi]")
    common.add_argument("--data", help="CSV dataset (regress)")
    common.add_argument("--label", help="label column name or index (default: last)")
    common.add_argument("--no-header", dest="no_header", action="store_true", help="CSV has no header row")
    common.add_argument("--bias", action="store_true", help="append a constant feature before normalizing")
    common.add_argument("--no-normalize", dest="no_normalize", action="store_true", help="skip unit-norm row scaling")
    common.add_argument("--real-targets", dest="real_targets", action="store_true", help="regress real targets (RMSE)")
    common.add_argument("--folds", type=int, help="cross-validation folds")
    common.add_argument("--lambda", dest="lambda", type=float, help="ridge strength")
    common.add_argument("--topo-a", dest="topo_a", help="topology JSON for shape A (train-compare)")
    common.add_argument("--topo-b", dest="topo_b", help="topology JSON for shape B (train-compare)")
    common.add_argument("--max-params", dest="max_params", type=float, help="refuse runs above this parameter count")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="treetangent", description="Limiting NTKs of soft tree ensembles.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "kernel-curve": "analytic kernel over the beta grid",
        "convergence": "empirical NTK of finite ensembles vs the limiting kernel",
        "depth-sweep": "normalized PB and DL kernels across depths",
        "train-compare": "trajectories of two architectures vs analytic dynamics",
        "regress": "k-fold kernel regression over an (arch, depth, alpha) grid",
        "drift": "kernel drift during training vs ensemble size",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[args.command])
    given = vars(args)
    if "config" in given:
        try:
            from_file = json.loads(Path(given["config"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ex.ConfigError(f"cannot read config {given['config']}: {exc}") from None
        cfg.update({k.replace("-", "_") if k != "lambda" else k: v for k, v in from_file.items()})
    cfg.update({k: v for k, v in given.items() if k not in ("config", "command")})
    cfg["command"] = args.command
    return cfg


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_rows(path: Path, rows, header_comment=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _one(cfg, key, conv):
    vals = _listify(cfg[key], conv)
    if len(vals) != 1:
        raise ex.ConfigError(f"--{key} takes a single value for {cfg['command']}")
    return vals[0]


def run(cfg: dict) -> int:
    out = Path(cfg["out"])
    cmd = cfg["command"]
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ex.ConfigError(f"output directory {out} is not writable: {exc}") from None

    if cmd == "kernel-curve":
        arch = parse_arch(cfg["arch"])
        depth = None if isinstance(arch, LeafProfile) or arch == "dlinf" else _one(cfg, "depth", int)
        if not isinstance(arch, str) and not isinstance(arch, LeafProfile):
            arch = ex.analytic_arch(arch)
            depth = None
        res = ex.kernel_curve(arch, depth, _one(cfg, "alpha", float), int(cfg["grid"]))
        write_rows(out / "kernel_curve.csv", res.rows)
        plot_csv(out / "kernel_curve.csv", "beta", "kernel", out_path=out / "kernel_curve.svg",
                 title=f"limiting kernel ({cfg['arch']})", xlabel="beta", ylabel="kernel")

    elif cmd == "convergence":
        arch = parse_arch(cfg["arch"])
        res = ex.convergence(arch, _one(cfg, "depth", int), _one(cfg, "alpha", float),
                             _listify(cfg["trees"], int), int(cfg["seeds"]), int(cfg["grid"]),
                             int(cfg["seed"]), float(cfg["max_params"]))
        write_rows(out / "convergence.csv", res.rows)
        write_rows(out / "convergence_summary.csv", res.summary, f"loglog_slope={res.info['slope']!r}")
        plot_csv(out / "convergence_summary.csv", "trees", "median_rms_deviation", out_path=out / "convergence.svg",
                 logx=True, logy=True, title="empirical vs limiting NTK", xlabel="trees M", ylabel="median RMS deviation")
        print(f"log-log slope of median RMS deviation: {res.info['slope']:.4f}")

    elif cmd == "depth-sweep":
        res = ex.depth_sweep(_one(cfg, "alpha", float), _listify(cfg["depth"], int), int(cfg["grid"]))
        write_rows(out / "depth_sweep.csv", res.rows)
        for arch in ("pb", "dl"):
            rows = [r for r in res.rows if r["arch"] in (arch, "dlinf" if arch == "dl" else arch)]
            write_rows(out / f"depth_sweep_{arch}.csv", rows)
            plot_csv(out / f"depth_sweep_{arch}.csv", "beta", "normalized", group=("arch", "depth"),
                     out_path=out / f"depth_sweep_{arch}.svg", dashed=("arch=dlinf depth=inf",),
                     title=f"normalized {arch.upper()} kernel by depth", xlabel="beta", ylabel="normalized kernel")

    elif cmd == "train-compare":
        default_a, default_b = shared_profile_pair()
        topo_a = load_topology(cfg["topo_a"]) if cfg["topo_a"] else default_a
        topo_b = load_topology(cfg["topo_b"]) if cfg["topo_b"] else default_b
        res = ex.train_compare(topo_a, topo_b, _listify(cfg["trees"], int), float(cfg["eta"]), int(cfg["steps"]),
                               int(cfg["seeds"]), int(cfg["seed"]), _one(cfg, "alpha", float), float(cfg["max_params"]))
        for (name, m, rep), log in res.info["trajectories"].items():
            write_rows(out / f"traj_{name}_M{m}_seed{rep}.csv", _traj_rows(log))
        for key, log in res.info["analytic"].items():
            write_rows(out / f"analytic_{key}.csv", _traj_rows(log))
        write_rows(out / "train_compare_summary.csv", res.summary)
        m_max = max(_listify(cfg["trees"], int))
        combined = [dict(series=f"{name} M={m_max}", **r)
                    for name in ("A", "B") for r in _traj_rows(res.info["trajectories"][(name, m_max, 0)])]
        combined += [dict(series="analytic", **r) for r in _traj_rows(res.info["analytic"]["steps_A"])]
        write_rows(out / "train_compare_probe0.csv", [r for r in combined if r["probe_id"] == 0])
        plot_csv(out / "train_compare_probe0.csv", "step", "output", group="series", out_path=out / "train_compare.svg",
                 dashed=("series=analytic",), title="probe 0 output during training", xlabel="step", ylabel="shifted output")
        for m in _listify(cfg["trees"], int):
            gaps = sorted(r["gap_ab"] for r in res.summary if r["trees"] == m)
            print(f"M={m}: median max gap between A and B = {gaps[len(gaps) // 2]:.4g}")

    elif cmd == "regress":
        if not cfg["data"]:
            raise ex.ConfigError("regress needs --data")
        label = cfg["label"]
        label = int(label) if str(label).lstrip("-").isdigit() else label
        d = load_csv(cfg["data"], label, not cfg["no_header"], categorical=not cfg["real_targets"])
        d = preprocess(d, add_bias=bool(cfg["bias"]), normalize=not cfg["no_normalize"])
        archs = [parse_arch(a) for a in str(cfg["arch"]).split(",")]
        archs = [a for a in archs if a != "dlinf"]
        res = ex.regress(d, archs, _listify(cfg["depth"], int), _listify(cfg["alpha"], float),
                         int(cfg["folds"]), float(cfg["lambda"]), int(cfg["seed"]))
        head = f"lambda={res.info['lambda']!r} folds={res.info['folds']} seed={cfg['seed']} metric={res.info['metric']}"
        write_rows(out / "regress.csv", res.rows, head)
        print(head)
        if res.info["duplicates"]:
            print(f"note: {res.info['duplicates']} duplicate row pair(s); positive-definiteness not guaranteed")

    elif cmd == "drift":
        arch = parse_arch(cfg["arch"])
        res = ex.drift(arch, _one(cfg, "depth", int), _listify(cfg["trees"], int), float(cfg["eta"]),
                       int(cfg["steps"]), int(cfg["seeds"]), int(cfg["seed"]), _one(cfg, "alpha", float),
                       float(cfg["max_params"]))
        write_rows(out / "drift.csv", res.rows)
        write_rows(out / "drift_summary.csv", res.summary, f"exponent={res.info['exponent']!r}")
        medians = [r["median_drift"] for r in res.summary]
        if min(medians) > 0:
            plot_csv(out / "drift_summary.csv", "trees", "median_drift", out_path=out / "drift.svg", logx=True,
                     logy=True, title="kernel drift after training", xlabel="trees M", ylabel="median sup drift")
        print(f"fitted drift exponent: {res.info['exponent']:.4f}")
    return EXIT_OK


def _traj_rows(log):
    return [{"step": s, "probe_id": p, "output": float(log[s, p])} for s in range(log.shape[0]) for p in range(log.shape[1])]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(resolve(args))
    except ex.ResourceCapError as exc:
        print(f"treetangent: resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except NumericalError as exc:
        print(f"treetangent: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, CSVFormatError) as exc:
        print(f"treetangent: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
