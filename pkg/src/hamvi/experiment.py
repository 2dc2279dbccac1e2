"""Parameter-recovery benchmark on the conjugate Gaussian model.

A sweep trains every method on every ``(d, run)`` cell, where each run uses
its own synthetic dataset shared by all methods, and records the squared
error of the learned ``(delta, sigma_sq)`` against the generating values.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .adjoint import FlowParameterization, PlanarParameterization
from .data import ConfigurationError, Dataset
from .estimators import HISProposal, PlanarProposal, PriorProposal, log_mean_exp
from .models import GaussianModel, make_true_params
from .objectives import HVAEObjective, PlanarObjective, VBObjective
from .priors import MeanFieldPrior, StandardNormalPrior
from .rng import make_rng
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


def generate_dataset(d: int, N: int, seed: int, *keys: int) -> Dataset:
    """One latent ``z ~ N(0, I)``, then ``N`` rows from ``N(z + delta, Sigma)`` at the true parameters."""
    if d < 1 or N < 1:
        raise ConfigurationError("d and N must be positive")
    rng = make_rng(seed, *keys)
    p = make_true_params(d)
    z = rng.standard_normal(d)
    return Dataset(z + p.delta + np.sqrt(p.sigma_sq) * rng.standard_normal((N, d)))


@dataclass(frozen=True)
class MethodSpec:
    """One variational method of the benchmark.

    ``kind`` is ``hvae``, ``vb`` or ``nf``. ``K`` is the flow depth (the
    planar flow reuses it as its iteration count unless ``T`` is given).
    """

    kind: str
    K: int = 10
    tempering: str = "fixed"
    beta0: float = 0.5
    xi: float = 0.5
    eps_init: float = 0.01
    T: int | None = None
    samples: int = 1

    def __post_init__(self):
        if self.kind not in ("hvae", "vb", "nf"):
            raise ConfigurationError(f"unknown method {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "hvae":
            return f"hvae-{self.tempering}"
        return self.kind


def build_method(spec: MethodSpec, d: int, seed: int = 0):
    """Model, objective and initial ``(theta, phi)`` for one method at dimension ``d``.

    Every method starts from ``delta = 0`` and unit variances.
    """
    model = GaussianModel(d)
    theta0 = np.zeros(2 * d)
    if spec.kind == "hvae":
        flow = FlowParameterization(d, spec.K, spec.tempering, spec.xi)
        obj = HVAEObjective(model, StandardNormalPrior(d), flow, spec.samples)
        phi0 = flow.initial(spec.eps_init, spec.beta0)
    elif spec.kind == "vb":
        obj = VBObjective(model, MeanFieldPrior(d), spec.samples)
        phi0 = np.zeros(2 * d)
    else:
        planar = PlanarParameterization(d, spec.K if spec.T is None else spec.T)
        obj = PlanarObjective(model, StandardNormalPrior(d), planar, spec.samples)
        w0 = make_rng(seed, 7).standard_normal(d) / np.sqrt(d)
        phi0 = np.concatenate([np.zeros(d), w0, [0.0]])
    return model, obj, theta0, phi0


@dataclass
class ExperimentSpec:
    dims: list = field(default_factory=lambda: [1, 5, 11, 21])
    methods: list = field(default_factory=lambda: [MethodSpec("hvae"), MethodSpec("vb"), MethodSpec("nf")])
    runs: int = 10
    N: int = 10000
    seed: int = 0
    out: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    final_samples: int = 1000

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be at least 1")
        if not self.dims:
            raise ConfigurationError("dims must not be empty")


@dataclass
class ResultRow:
    method: str
    d: int
    seed: int
    err_theta: float
    err_delta: float
    err_sigma_sq: float
    final_elbo: float
    epochs: int
    wall_time: float
    status: str = "ok"


RESULT_FIELDS = [f.name for f in fields(ResultRow)]


def parameter_errors(theta_hat, d: int):
    """``(|theta_hat - theta|^2, |delta_hat - delta|^2, |sigma_sq_hat - sigma_sq|^2)`` against the true values."""
    true = make_true_params(d)
    est = GaussianModel(d).params(theta_hat)
    e_delta = float(np.sum((est.delta - true.delta) ** 2))
    e_sigma = float(np.sum((est.sigma_sq - true.sigma_sq) ** 2))
    return e_delta + e_sigma, e_delta, e_sigma


def cell_seed(base: int, method_index: int, d: int, run: int) -> int:
    """Distinct integer seed for each ``(method, d, run)`` cell of a sweep."""
    return ((base * 64 + method_index) * 1024 + d) * 1024 + run


def run_cell(method: MethodSpec, d: int, run: int, spec: ExperimentSpec, method_index: int = 0) -> ResultRow:
    """Train one method on the dataset of ``(d, run)``; failures are reported in ``status``."""
    seed = cell_seed(spec.seed, method_index, d, run)
    # the dataset depends on (d, run) only, so every method sees the same data
    data = generate_dataset(d, spec.N, spec.seed, d, run)
    t0 = time.perf_counter()
    try:
        model, obj, theta0, phi0 = build_method(method, d, seed)
        cfg = replace(spec.train, seed=seed)
        res = train(model, obj, data, cfg, theta0, phi0)
        rng = make_rng(seed, 99)
        final = float(np.mean(obj.evaluate(res.theta, res.phi, data, rng, spec.final_samples)))
        errs = parameter_errors(res.theta, d)
        return ResultRow(method.label, d, seed, *errs, final, res.epochs, time.perf_counter() - t0)
    except (FloatingPointError, ValueError) as exc:
        log.warning("cell %s d=%d run=%d failed: %s", method.label, d, run, exc)
        nan = float("nan")
        return ResultRow(method.label, d, seed, nan, nan, nan, nan, 0, time.perf_counter() - t0,
                         f"failed: {exc}")


def _run_cell_args(args):
    return run_cell(*args)


def _workers() -> int:
    env = os.environ.get("HVI_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(spec: ExperimentSpec, workers: int | None = None):
    """Train every ``(method, d, run)`` cell; returns the raw rows and the per-cell aggregate.

    When ``spec.out`` is set, ``results.csv`` and ``aggregate.csv`` are
    written there.
    """
    jobs = [(m, d, r, spec, i) for d in spec.dims for i, m in enumerate(spec.methods) for r in range(spec.runs)]
    workers = _workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_run_cell_args, jobs))
    else:
        rows = [run_cell(*j) for j in jobs]
    rows.sort(key=lambda r: (r.d, r.method, r.seed))
    agg = aggregate(rows)
    if spec.out:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        write_results(rows, out / "results.csv")
        write_aggregate(agg, out / "aggregate.csv")
    return rows, agg


AGGREGATE_FIELDS = ["method", "d", "runs", "mean_err_theta", "sd_err_theta",
                    "mean_err_delta", "mean_err_sigma_sq", "mean_final_elbo"]


def aggregate(rows):
    """Per ``(method, d)`` means and sample SDs over successful runs."""
    groups = {}
    for r in rows:
        if r.status == "ok":
            groups.setdefault((r.method, r.d), []).append(r)
    out = []
    for (method, d), rs in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        e = np.array([r.err_theta for r in rs])
        out.append({
            "method": method,
            "d": d,
            "runs": len(rs),
            "mean_err_theta": float(np.mean(e)),
            "sd_err_theta": float(np.std(e, ddof=1)) if len(rs) > 1 else 0.0,
            "mean_err_delta": float(np.mean([r.err_delta for r in rs])),
            "mean_err_sigma_sq": float(np.mean([r.err_sigma_sq for r in rs])),
            "mean_final_elbo": float(np.mean([r.final_elbo for r in rs])),
        })
    return out


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_results(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([_fmt(v) for v in asdict(r).values()])


def read_results(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(rec["method"], int(rec["d"]), int(rec["seed"]), float(rec["err_theta"]),
                                  float(rec["err_delta"]), float(rec["err_sigma_sq"]), float(rec["final_elbo"]),
                                  int(rec["epochs"]), float(rec["wall_time"]), rec["status"]))
        return rows


def write_aggregate(agg, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_FIELDS)
        for a in agg:
            w.writerow([_fmt(a[k]) for k in AGGREGATE_FIELDS])


def read_aggregate(path):
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for rec in csv.DictReader(fh):
            out.append({k: (rec[k] if k == "method" else int(rec[k]) if k in ("d", "runs") else float(rec[k]))
                        for k in AGGREGATE_FIELDS})
        return out


def emit_plot(aggregate_csv, out_path) -> Path | None:
    """Mean parameter error against dimension, one line per method, saved as SVG."""
    agg = read_aggregate(aggregate_csv)
    if not agg:
        log.warning("%s holds no rows; nothing to plot", aggregate_csv)
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in sorted({a["method"] for a in agg}):
        pts = sorted((a["d"], a["mean_err_theta"]) for a in agg if a["method"] == method)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("dimension d")
    ax.set_ylabel(r"mean $\|\hat\theta - \theta\|_2^2$")
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def final_nll(obj, theta, phi, data, n=1000, rng=None) -> float:
    """Importance-sampled ``-log p(D)`` from ``n`` draws of the trained approximation."""
    rng = make_rng(0) if rng is None else rng
    return float(-log_mean_exp(proposal_for(obj, phi).log_weights(obj.model, data, theta, n, rng)))


def proposal_for(obj, phi):
    """The importance proposal matching a trained objective."""
    if isinstance(obj, HVAEObjective):
        return HISProposal(obj.config(phi), obj.prior, obj.split(phi)[1])
    if isinstance(obj, VBObjective):
        return PriorProposal(obj.prior, phi)
    raw, pphi = obj.split(phi)
    return PlanarProposal(obj.planar.params(raw), obj.prior, pphi)
