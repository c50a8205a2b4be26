"""Command-line interface.

Subcommands: gen, sample, predict, diagnose, curve, bench, eval.  Each
reads an optional config file (flat key = value, or a manifest JSON)
overridden by flags, writes its artifacts under the output directory,
and exits 0 on success; failures print a machine-readable JSON object on
stderr and exit nonzero.
"""

import argparse
import csv
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .approx import run_approx
from .config import (
    ConfigError,
    ExperimentConfig,
    FORMAT_VERSION,
    load_config,
    manifest_dict,
)
from .datasets import (
    Dataset,
    Standardizer,
    emit_csv,
    generate_synthetic,
    ingest_csv,
)
from .diagnostics import acceptance_rate, capacity_scores, auc as roc_auc, min_ess, psrf
from .importance import pm_posterior_curve
from .kernels import Hyperparams, build_kernel
from .predictive import gaussian_predictive_batch, mc_predictive_batch
from .samplers import run_chains

RHAT_CHECKPOINTS = (1000, 2000, 5000, 10000)


# ---------------------------------------------------------------------------
# Trace persistence
# ---------------------------------------------------------------------------


def write_traces_csv(traces, path):
    """Merged per-chain records: iteration, chain_id, psi_*, accepted,
    log_p_tilde, phase, cubic_ops."""
    names = traces[0].psi_names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "chain_id"] + names
                        + ["accepted", "log_p_tilde", "phase", "cubic_ops"])
        for tr in traces:
            for i in range(tr.iteration.shape[0]):
                writer.writerow(
                    [int(tr.iteration[i]), tr.chain_id]
                    + [repr(float(v)) for v in tr.psi[i]]
                    + [
                        repr(float(tr.accepted[i])),
                        repr(float(tr.log_p_tilde[i])),
                        tr.phase[i],
                        int(tr.cubic_ops[i]),
                    ]
                )


def read_traces_csv(path):
    """Returns (psi_names, rows) with rows as a list of per-chain dicts."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[2:-4]
        chains = {}
        for row in reader:
            cid = int(row[1])
            rec = chains.setdefault(
                cid,
                {"iteration": [], "psi": [], "accepted": [], "log_p_tilde": [],
                 "phase": [], "cubic_ops": []},
            )
            rec["iteration"].append(int(row[0]))
            rec["psi"].append([float(v) for v in row[2:2 + len(names)]])
            rec["accepted"].append(float(row[-4]))
            rec["log_p_tilde"].append(float(row[-3]))
            rec["phase"].append(row[-2])
            rec["cubic_ops"].append(int(row[-1]))
    for rec in chains.values():
        rec["iteration"] = np.asarray(rec["iteration"])
        rec["psi"] = np.asarray(rec["psi"])
        rec["accepted"] = np.asarray(rec["accepted"])
        rec["log_p_tilde"] = np.asarray(rec["log_p_tilde"])
        rec["cubic_ops"] = np.asarray(rec["cubic_ops"])
    return names, [chains[k] for k in sorted(chains)]


def save_latent_snapshots(traces, out_dir):
    for tr in traces:
        if not tr.samples:
            continue
        log_sigma = np.array([h.log_sigma for h, _ in tr.samples])
        log_ls = np.array([h.log_lengthscales for h, _ in tr.samples])
        latents = np.array([f for _, f in tr.samples])
        np.savez(
            Path(out_dir) / f"latents_chain{tr.chain_id}.npz",
            log_sigma=log_sigma,
            log_lengthscales=log_ls,
            latents=latents,
        )


def load_latent_snapshots(out_dir):
    samples = []
    for p in sorted(Path(out_dir).glob("latents_chain*.npz")):
        payload = np.load(p)
        for i in range(payload["latents"].shape[0]):
            hyper = Hyperparams(
                float(payload["log_sigma"][i]), payload["log_lengthscales"][i]
            )
            samples.append((hyper, payload["latents"][i]))
    return samples


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------


def _resolve_config(args, overrides):
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    values = {k: v for k, v in overrides.items() if v is not None}
    if values:
        cfg = replace(cfg, **values)
    return cfg.validate()

def _config_overrides(args):
    known = {f.name for f in fields(ExperimentConfig)}
    return {k: v for k, v in vars(args).items() if k in known}


def _write_manifest(cfg, out_dir, extra=None):
    payload = manifest_dict(cfg, extra=extra)
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return payload


def _load_dataset(args, cfg_dir=None, standardizer=None):
    ds, std = ingest_csv(
        args.data,
        label_column=args.label_column,
        standardize=args.standardize,
        row_filter=args.filter,
        standardizer=standardizer,
    )
    return ds, std


def cmd_gen(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hyper = Hyperparams.from_values(args.sigma, [args.tau])
    ds, _f = generate_synthetic(args.n, args.d, hyper, kind="isotropic", seed=args.seed)
    emit_csv(ds, out / "dataset.csv")
    manifest = {
        "format_version": FORMAT_VERSION,
        "command": "gen",
        "n": args.n,
        "d": args.d,
        "tau": args.tau,
        "sigma": args.sigma,
        "seed": args.seed,
        "dataset": "dataset.csv",
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(out / "dataset.csv")
    return 0


def cmd_sample(args):
    cfg = _resolve_config(args, _config_overrides(args))
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, std = _load_dataset(args)
    priors = cfg.priors(ds.d)
    init_hyper = None
    if cfg.fix_sigma or cfg.fix_tau:
        sigma0 = cfg.sigma_value if cfg.sigma_value is not None else 1.0
        tau0 = cfg.tau_value if cfg.tau_value is not None else 1.0
        m = 1 if cfg.kind == "isotropic" else ds.d
        init_hyper = Hyperparams.from_values(sigma0, [tau0] * m)
    gc = cfg.gibbs_config()
    gc.sample_latents = cfg.sample_latents or cfg.save_latents
    traces = run_chains(
        ds.X, ds.y, priors, gc, kind=cfg.kind,
        seeds=cfg.chain_seeds(), init_hyper=init_hyper,
    )
    write_traces_csv(traces, out / "trace.csv")
    if cfg.save_latents:
        save_latent_snapshots(traces, out)
    if std is not None:
        with open(out / "standardizer.json", "w") as fh:
            json.dump(std.to_dict(), fh, indent=2)
    _write_manifest(cfg, out, extra={"command": "sample", "data": str(args.data)})
    print(out / "trace.csv")
    return 0


def cmd_predict(args):
    run_dir = Path(args.run)
    cfg = load_config(run_dir / "manifest.json").validate()
    std = None
    std_path = run_dir / "standardizer.json"
    if std_path.exists():
        with open(std_path) as fh:
            std = Standardizer.from_dict(json.load(fh))
    train, _ = ingest_csv(args.data, label_column=args.label_column,
                          standardize=std is not None, standardizer=std)
    test, _ = ingest_csv(args.test, label_column=args.label_column,
                         standardize=std is not None, standardizer=std)
    if args.method == "mc":
        samples = load_latent_snapshots(run_dir)
        if not samples:
            raise FileNotFoundError(
                "no latent snapshots in run directory; sample with save_latents=true"
            )
        if args.max_samples and len(samples) > args.max_samples:
            idx = np.linspace(0, len(samples) - 1, args.max_samples).astype(int)
            samples = [samples[i] for i in idx]
        probs = mc_predictive_batch(samples, train.X, test.X, cfg.kind)
    else:
        names, chains = read_traces_csv(run_dir / "trace.csv")
        probs = _gaussian_mixture_prediction(cfg, names, chains, train, test,
                                             args.max_samples or 50)
    out = Path(args.out or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_id", "prob_positive", "method"])
        for i, p in enumerate(probs):
            writer.writerow([i, repr(float(p)), args.method])
    print(out / "predictions.csv")
    return 0


def _gaussian_mixture_prediction(cfg, names, chains, train, test, max_samples):
    """Average the Gaussian-approximation prediction over psi samples,
    recomputing the approximation for each retained sample."""
    psis = np.concatenate(
        [
            rec["psi"][[p.startswith("sample") for p in rec["phase"]]]
            for rec in chains
        ]
    )
    if psis.shape[0] == 0:
        raise ValueError("trace has no post-burn-in rows")
    idx = np.linspace(0, psis.shape[0] - 1, min(max_samples, psis.shape[0])).astype(int)
    total = np.zeros(test.n)
    priors = cfg.priors(train.d)
    base = Hyperparams.from_values(
        cfg.sigma_value or 1.0,
        [cfg.tau_value or 1.0] * (1 if cfg.kind == "isotropic" else train.d),
    )
    from .priors import hyper_from_psi

    for i in idx:
        hyper = hyper_from_psi(psis[i], base, priors)
        km = build_kernel(train.X, hyper, cfg.kind)
        q = run_approx(cfg.approx_method, train.y, km)
        total += gaussian_predictive_batch(
            test.X, train.X, km, q, hyper, cfg.kind
        )
    return total / idx.shape[0]


def _post_burn_in_matrix(chains):
    blocks = []
    for rec in chains:
        mask = np.array([p.startswith("sample") for p in rec["phase"]])
        blocks.append(rec["psi"][mask])
    t = min(b.shape[0] for b in blocks)
    return np.stack([b[:t] for b in blocks])


def diagnostics_summary(names, chains):
    """ESS / PSRF / acceptance summary of a merged trace."""
    stacked = _post_burn_in_matrix(chains)  # (m, t, p)
    m, t, p = stacked.shape
    summary = {"format_version": FORMAT_VERSION, "n_chains": m, "iterations": t}
    ess = {}
    for j, name in enumerate(names):
        ess[name] = float(np.mean([
            min_ess(stacked[c, :, j:j + 1]) for c in range(m)
        ]))
    summary["ess"] = ess
    summary["min_ess"] = min(ess.values())
    rhat = {}
    for j, name in enumerate(names):
        per_cp = {}
        for cp in RHAT_CHECKPOINTS:
            if cp <= t:
                per_cp[str(cp)] = psrf(stacked[:, :cp, j])
        if t >= 10 and str(t) not in per_cp and not per_cp:
            per_cp[str(t)] = psrf(stacked[:, :, j])
        rhat[name] = per_cp
    summary["psrf"] = rhat
    acc = []
    for rec in chains:
        mask = np.array([p.startswith("sample") for p in rec["phase"]])
        acc.append(acceptance_rate(rec["accepted"][mask]))
    summary["acceptance_rate"] = float(np.mean(acc))
    summary["acceptance_per_chain"] = [float(a) for a in acc]
    summary["mean_cubic_ops_per_iteration"] = float(
        np.mean([rec["cubic_ops"].mean() for rec in chains])
    )
    return summary


def cmd_diagnose(args):
    run_dir = Path(args.run)
    names, chains = read_traces_csv(run_dir / "trace.csv")
    summary = diagnostics_summary(names, chains)
    out = Path(args.out or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "chain_set", "value"])
        for name, v in summary["ess"].items():
            writer.writerow([f"ess_{name}", "all", repr(v)])
        for name, cps in summary["psrf"].items():
            for cp, v in cps.items():
                writer.writerow([f"psrf_{name}@{cp}", "all", repr(v)])
        writer.writerow(["acceptance_rate", "all", repr(summary["acceptance_rate"])])
        writer.writerow(
            ["cubic_ops", "all", repr(summary["mean_cubic_ops_per_iteration"])]
        )
    print(out / "report.json")
    return 0


def cmd_curve(args):
    cfg = _resolve_config(args, _config_overrides(args))
    ds, _ = _load_dataset(args)
    rng = np.random.default_rng(cfg.seed)
    taus = np.exp(np.linspace(np.log(args.tau_min), np.log(args.tau_max), args.grid))
    sigma = cfg.sigma_value if cfg.sigma_value is not None else args.sigma
    grid = [Hyperparams.from_values(sigma, [t]) for t in taus]
    priors = cfg.priors(ds.d)
    rows = pm_posterior_curve(
        ds.X, ds.y, grid, cfg.approx_method, cfg.n_imp, args.reps, rng,
        priors=priors, kind=cfg.kind, normalize=args.normalize,
    )
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "mean", "q025", "q975", "method", "n_imp"])
        for row in rows:
            writer.writerow(
                [repr(row["tau"]), repr(row["mean"]), repr(row["q025"]),
                 repr(row["q975"]), row["method"], row["n_imp"]]
            )
    _write_manifest(cfg, out, extra={"command": "curve", "data": str(args.data)})
    print(out / "curve.csv")
    return 0


def cmd_bench(args):
    cfg = _resolve_config(args, _config_overrides(args))
    ds, _ = _load_dataset(args)
    schemes = args.schemes.split(",")
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for scheme in schemes:
        scfg = replace(cfg, scheme=scheme.strip()).validate()
        gc = scfg.gibbs_config()
        if scheme.strip() == "pm":
            gc.sample_latents = cfg.sample_latents
        traces = run_chains(
            ds.X, ds.y, scfg.priors(ds.d), gc, kind=scfg.kind,
            seeds=scfg.chain_seeds(),
        )
        write_traces_csv(traces, out / f"trace_{scheme.strip()}.csv")
        names, chains = read_traces_csv(out / f"trace_{scheme.strip()}.csv")
        summary = diagnostics_summary(names, chains)
        row = {
            "scheme": scheme.strip(),
            "ess": summary["min_ess"],
            "acceptance": summary["acceptance_rate"],
            "cubic_ops": summary["mean_cubic_ops_per_iteration"],
        }
        for cp in RHAT_CHECKPOINTS:
            vals = [
                cps.get(str(cp)) for cps in summary["psrf"].values()
                if cps.get(str(cp)) is not None
            ]
            row[f"rhat_{cp}"] = max(vals) if vals else float("nan")
        rows.append(row)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["scheme", "ess"] + [f"rhat_{cp}" for cp in RHAT_CHECKPOINTS] + [
            "acceptance", "cubic_ops",
        ]
        writer.writerow(header)
        for row in rows:
            writer.writerow([row["scheme"], repr(row["ess"])]
                            + [repr(row[f"rhat_{cp}"]) for cp in RHAT_CHECKPOINTS]
                            + [repr(row["acceptance"]), repr(row["cubic_ops"])])
    _write_manifest(cfg, out, extra={"command": "bench", "data": str(args.data),
                                     "schemes": schemes})
    print(out / "bench.csv")
    return 0


def cmd_eval(args):
    probs, ids = [], []
    with open(args.predictions, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ids.append(int(row["point_id"]))
            probs.append(float(row["prob_positive"]))
    probs = np.asarray(probs)[np.argsort(ids)]
    ds, _ = ingest_csv(args.data, label_column=args.label_column)
    if ds.n != probs.shape[0]:
        raise ValueError("prediction count does not match dataset size")
    scores = capacity_scores(probs, ds.y)
    accuracy = float(np.mean((probs > 0.5) == (ds.y > 0)))
    payload = {
        "format_version": FORMAT_VERSION,
        "capacity_accuracy": scores.capacity_accuracy,
        "capacity_auc": scores.capacity_auc,
        "auc": roc_auc(probs, ds.y),
        "accuracy": accuracy,
    }
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scores.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    with open(out / "abstention_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["abstention", "accuracy", "auc"])
        for a, acc, au in scores.curve:
            writer.writerow([repr(a), repr(acc), repr(au)])
    print(out / "scores.json")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--data", required=True, help="dataset CSV (header x1..xd,y)")
    p.add_argument("--label-column", dest="label_column", default="y")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--filter", default=None, help="row filter, e.g. 'x3 >= 0.5'")


def _add_config_args(p):
    p.add_argument("--config", default=None, help="config file (flat text or manifest JSON)")
    p.add_argument("--scheme", default=None)
    p.add_argument("--kind", default=None)
    p.add_argument("--approx-method", dest="approx_method", default=None)
    p.add_argument("--n-imp", dest="n_imp", type=int, default=None)
    p.add_argument("--n-chains", dest="n_chains", type=int, default=None)
    p.add_argument("--n-iterations", dest="n_iterations", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--thinning", type=int, default=None)
    p.add_argument("--latent-repeats", dest="latent_repeats", type=int, default=None)
    p.add_argument("--theta-repeats", dest="theta_repeats", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma-value", dest="sigma_value", type=float, default=None)
    p.add_argument("--tau-value", dest="tau_value", type=float, default=None)
    p.add_argument("--fix-sigma", dest="fix_sigma", action="store_const", const=True, default=None)
    p.add_argument("--fix-tau", dest="fix_tau", action="store_const", const=True, default=None)
    p.add_argument("--save-latents", dest="save_latents", action="store_const", const=True, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pmgp",
        description="Fully Bayesian GP probit classification via pseudo-marginal MCMC",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a balanced synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.35)
    p.add_argument("--sigma", type=float, default=2.08)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sample", help="run MCMC chains")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("predict", help="predictive probabilities for test data")
    _add_data_args(p)
    p.add_argument("--test", required=True)
    p.add_argument("--run", required=True, help="directory produced by sample")
    p.add_argument("--method", choices=("mc", "gauss"), default="mc")
    p.add_argument("--max-samples", dest="max_samples", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="convergence/efficiency report for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("curve", help="replicated posterior-density curve over tau")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--tau-min", dest="tau_min", type=float, default=0.1)
    p.add_argument("--tau-max", dest="tau_max", type=float, default=2.0)
    p.add_argument("--grid", type=int, default=15)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--sigma", type=float, default=2.08)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("bench", help="scheme comparison table on one dataset")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--schemes", default="pm,aa,surr")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="uncertainty scores for saved predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", dest="label_column", default="y")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
