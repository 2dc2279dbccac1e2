"""Command-line entry point: ``hamvi {gen,train,sweep,eval-nll,plot}``.

Settings may also come from a ``key = value`` file given with ``--config``
(``#`` starts a comment, keys are flag names with ``-`` or ``_``); flags on
the command line override file values.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import ConfigurationError, DomainError, load, write_binary, write_csv
from .experiment import (ExperimentSpec, MethodSpec, build_method, emit_plot, final_nll, generate_dataset,
                         parameter_errors, run_experiment)
from .rng import make_rng
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train, write_trace_csv

log = logging.getLogger("hamvi")

# flag name -> (type, default); shared by every subcommand that trains
SETTINGS = {
    "dim": (str, "5"),
    "n": (int, 10000),
    "seed": (int, 0),
    "method": (str, "hvae"),
    "K": (int, 10),
    "tempering": (str, "fixed"),
    "beta0": (float, 0.5),
    "xi": (float, 0.5),
    "eps0": (float, 0.01),
    "T": (int, None),
    "samples": (int, 1),
    "lr": (float, 1e-3),
    "epochs": (int, 20000),
    "patience": (int, None),
    "optimizer": (str, "rmsprop"),
    "runs": (int, 10),
    "tail_average": (float, 0.0),
    "out": (str, None),
}


def read_config(path) -> dict:
    """Parse a ``key = value`` settings file; unknown keys are an error."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(args) -> dict:
    """Merge built-in defaults, the config file and explicit flags, in that order."""
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key, (kind, default) in SETTINGS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            raw = file_values[key]
            out[key] = None if raw.lower() in ("none", "") else kind(raw)
        else:
            out[key] = default
    return out


def _list(value, kind=str):
    return [kind(v) for v in str(value).replace(",", " ").split()]


def method_specs(s) -> list:
    """One MethodSpec per requested method; HVAE expands over the requested tempering schemes."""
    specs = []
    for kind in _list(s["method"]):
        common = dict(K=s["K"], xi=s["xi"], beta0=s["beta0"], eps_init=s["eps0"], T=s["T"], samples=s["samples"])
        if kind == "hvae":
            specs.extend(MethodSpec(kind, tempering=t, **common) for t in _list(s["tempering"]))
        else:
            specs.append(MethodSpec(kind, **common))
    return specs


def train_config(s) -> TrainConfig:
    return TrainConfig(epochs=s["epochs"], patience=s["patience"], lr=s["lr"], optimizer=s["optimizer"],
                       seed=s["seed"], tail_average=s["tail_average"])


def _dataset(args, s):
    if getattr(args, "data", None):
        return load(args.data)
    return generate_dataset(_list(s["dim"], int)[0], s["n"], s["seed"])


def cmd_gen(args, s):
    d = _list(s["dim"], int)[0]
    data = generate_dataset(d, s["n"], s["seed"])
    out = Path(s["out"] or f"gaussian_d{d}_n{s['n']}_s{s['seed']}.csv")
    if out.suffix == ".bin":
        write_binary(data, out)
    else:
        write_csv(data, out)
    print(f"wrote {data.n} rows of dimension {data.dim} to {out} (sha256 {data.checksum()[:16]})")


def cmd_train(args, s):
    data = _dataset(args, s)
    spec = method_specs(s)[0]
    model, obj, theta0, phi0 = build_method(spec, data.dim, s["seed"])
    res = train(model, obj, data, train_config(s), theta0, phi0)
    out = Path(s["out"] or "run")
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(res.trace, out / "trace.csv")
    save_checkpoint(out / "checkpoint.hvck", res.theta, res.phi, res.state)
    elbo = float(np.mean(obj.evaluate(res.theta, res.phi, data, make_rng(s["seed"], 99), 1000)))
    print(f"{spec.label}: {res.epochs} epochs, final ELBO {elbo:.6f}, exact log p(D) "
          f"{model.exact_log_marginal(res.theta, data):.6f}")
    if not getattr(args, "data", None):
        err, e_delta, e_sigma = parameter_errors(res.theta, data.dim)
        print(f"|theta_hat - theta|^2 = {err:.6g} (delta {e_delta:.6g}, sigma_sq {e_sigma:.6g})")
    print(f"trace and checkpoint written to {out}")


def cmd_sweep(args, s):
    spec = ExperimentSpec(dims=_list(s["dim"], int), methods=method_specs(s), runs=s["runs"], N=s["n"],
                          seed=s["seed"], out=s["out"] or "sweep", train=train_config(s))
    rows, agg = run_experiment(spec)
    failed = sum(r.status != "ok" for r in rows)
    for a in agg:
        print(f"{a['method']:>11} d={a['d']:<3} runs={a['runs']:<3} mean |theta_hat - theta|^2 = "
              f"{a['mean_err_theta']:.6g} (sd {a['sd_err_theta']:.3g})")
    print(f"{len(rows)} cells, {failed} failed; results in {spec.out}")


def cmd_eval_nll(args, s):
    data = _dataset(args, s)
    theta, phi, _ = load_checkpoint(args.checkpoint)
    spec = method_specs(s)[0]
    _, obj, theta0, phi0 = build_method(spec, data.dim, s["seed"])
    if theta.size != theta0.size or phi.size != phi0.size:
        raise ConfigurationError("checkpoint does not match the requested method and data dimension")
    nll = final_nll(obj, theta, phi, data, args.draws, make_rng(s["seed"], 7))
    print(f"importance-sampled -log p(D) = {nll:.6f} ({args.draws} draws)")
    if hasattr(obj.model, "exact_log_marginal"):
        print(f"exact -log p(D)              = {-obj.model.exact_log_marginal(theta, data):.6f}")


def cmd_plot(args, s):
    out = Path(s["out"] or Path(args.aggregate).with_suffix(".svg"))
    path = emit_plot(args.aggregate, out)
    print(f"wrote {path}" if path else "nothing to plot")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamvi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, training=True):
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--dim", help="latent dimension; sweeps accept a comma list")
        p.add_argument("--n", type=int, help="observations per dataset")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if not training:
            return
        p.add_argument("--method", help="hvae, vb or nf; sweeps accept a comma list")
        p.add_argument("--K", type=int, help="leapfrog steps (planar iterations unless --T)")
        p.add_argument("--T", type=int, help="planar flow iterations")
        p.add_argument("--tempering", help="fixed, free or none; sweeps accept a comma list")
        p.add_argument("--beta0", type=float, help="initial inverse temperature")
        p.add_argument("--xi", type=float, help="step-size cap")
        p.add_argument("--eps0", type=float, help="initial leapfrog step size")
        p.add_argument("--samples", type=int, help="Monte Carlo draws per gradient step")
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--optimizer", choices=["rmsprop", "adamax"])
        p.add_argument("--tail-average", dest="tail_average", type=float,
                       help="fraction of final iterates to average")

    common(sub.add_parser("gen", help="write a synthetic Gaussian dataset (.csv or .bin)"), training=False)
    p = sub.add_parser("train", help="train one method and write its trace and checkpoint")
    common(p)
    p.add_argument("--data", help="dataset file; generated from --dim/--n/--seed when absent")
    p = sub.add_parser("sweep", help="parameter-recovery sweep over dimensions, methods and runs")
    common(p)
    p.add_argument("--runs", type=int)
    p = sub.add_parser("eval-nll", help="importance-sampled negative log-likelihood of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--draws", type=int, default=1000, help="importance samples")
    p = sub.add_parser("plot", help="error-against-dimension SVG from an aggregate CSV")
    p.add_argument("aggregate")
    p.add_argument("--out")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "sweep": cmd_sweep, "eval-nll": cmd_eval_nll, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = resolve(args)
        COMMANDS[args.command](args, settings)
    except (ConfigurationError, DomainError, OSError) as exc:
        print(f"hamvi: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
