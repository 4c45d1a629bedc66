"""Command-line pipeline: simulate, gen-data, train, infer, diagnose, mcmc, compare.

One JSON config file per run (schema-validated); flags cover only paths,
seed override, thread cap, and verbosity. Every command writes its outputs
plus a manifest.json under --out. Wall-clock timestamps live only in the
manifest so primary outputs are byte-identical across reruns.
"""

import argparse
import json
import logging
import os
import sys
import time

import jsonschema
import numpy as np

from . import __version__, datasets, diagnostics, flow, mcmc, plots
from .errors import DependencyError, SchemaError
from .features import step_matrix, summarize_trajectory
from .oscillator import (
    GaussianFrequencies,
    FixedFrequencies,
    MeanField,
    NetworkSpec,
    SimConfig,
    integrate,
    save_trajectory,
)

log = logging.getLogger("kabi")

_OMEGA_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"mode": {"const": "gaussian"},
                        "mu": {"type": "number"},
                        "sigma": {"type": "number", "exclusiveMinimum": 0}},
         "required": ["mode", "mu", "sigma"]},
        {"properties": {"mode": {"const": "fixed"},
                        "omega": {"type": "array", "items": {"type": "number"}}},
         "required": ["mode", "omega"]},
    ],
}

_EXPERIMENT_SCHEMA = {
    "type": "object",
    "properties": {
        "scenario": {"enum": ["simple", "complex"]},
        "n_train": {"type": "integer", "minimum": 1},
        "n_val": {"type": "integer", "minimum": 1},
        "n_test": {"type": "integer", "minimum": 1},
        "posterior_draws": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 1},
        "batches_per_epoch": {"type": "integer", "minimum": 1},
        "initial_lr": {"type": "number", "exclusiveMinimum": 0},
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer"},
    },
    "required": ["scenario"],
}

_SCHEMAS = {
    "simulate": {
        "type": "object",
        "properties": {
            "simulate": {
                "type": "object",
                "properties": {
                    "n_oscillators": {"type": "integer", "minimum": 1},
                    "kappas": {"type": "array", "items": {"type": "number"},
                               "minItems": 1},
                    "dt": {"type": "number", "exclusiveMinimum": 0},
                    "n_steps": {"type": "integer", "minimum": 1},
                    "subsample": {"type": "integer", "minimum": 1},
                    "obs_noise_std": {"type": "number", "minimum": 0},
                    "init_phase_std": {"type": "number", "minimum": 0},
                    "seed": {"type": "integer"},
                    "omega": _OMEGA_SCHEMA,
                },
                "required": ["n_oscillators", "kappas", "omega"],
            },
        },
        "required": ["simulate"],
    },
    "gen-data": {"type": "object", "properties": {"experiment": _EXPERIMENT_SCHEMA},
                 "required": ["experiment"]},
    "train": {"type": "object",
              "properties": {"experiment": _EXPERIMENT_SCHEMA,
                             "paths": {"type": "object",
                                       "properties": {"dataset": {"type": "string"}},
                                       "required": ["dataset"]}},
              "required": ["experiment", "paths"]},
    "infer": {"type": "object",
              "properties": {"experiment": _EXPERIMENT_SCHEMA,
                             "recalibrate": {"type": "boolean"},
                             "paths": {"type": "object",
                                       "properties": {"checkpoint": {"type": "string"},
                                                      "dataset": {"type": "string"}},
                                       "required": ["checkpoint", "dataset"]}},
              "required": ["experiment", "paths"]},
    "diagnose": {"type": "object",
                 "properties": {"experiment": _EXPERIMENT_SCHEMA,
                                "paths": {"type": "object",
                                          "properties": {"posteriors": {"type": "string"}},
                                          "required": ["posteriors"]}},
                 "required": ["experiment", "paths"]},
    "mcmc": {"type": "object",
             "properties": {
                 "experiment": _EXPERIMENT_SCHEMA,
                 "mcmc": {
                     "type": "object",
                     "properties": {
                         "true_params": {"type": "array", "items": {"type": "number"}},
                         "n_iterations": {"type": "integer", "minimum": 2},
                         "burn_in": {"type": "integer", "minimum": 0},
                         "thinning": {"type": "integer", "minimum": 1},
                         "proposal_std": {"type": "number", "exclusiveMinimum": 0},
                         "n_bins": {"type": "integer", "minimum": 2},
                         "n_replicates": {"type": "integer", "minimum": 2},
                         "n_replicates_proposal": {"type": "integer", "minimum": 1},
                         "lambda_reg": {"type": "number", "minimum": 0},
                     },
                     "required": ["true_params"],
                 },
             },
             "required": ["experiment", "mcmc"]},
    "compare": {"type": "object",
                "properties": {"paths": {"type": "object",
                                         "properties": {"npe_posterior": {"type": "string"},
                                                        "mcmc_chain": {"type": "string"}},
                                         "required": ["npe_posterior", "mcmc_chain"]}},
                "required": ["paths"]},
}


def load_config(path, command):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise SchemaError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}")
    try:
        jsonschema.validate(cfg, _SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        key_path = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise SchemaError(f"config key {key_path}: {exc.message}")
    return cfg


class Manifest:
    def __init__(self, command, config, out_dir, seed):
        self.data = {
            "command": command,
            "config": config,
            "seed": seed,
            "tool_version": __version__,
            "inputs": [],
            "outputs": [],
            "timings": {},
        }
        self.out_dir = out_dir
        self._stage_start = None

    def add_output(self, path):
        self.data["outputs"].append(os.path.relpath(path, self.out_dir))
        return path

    def add_input(self, path):
        self.data["inputs"].append(str(path))

    def time_stage(self, name, fn):
        t0 = time.perf_counter()
        result = fn()
        self.data["timings"][name] = time.perf_counter() - t0
        return result

    def write(self):
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)
        for rel in self.data["outputs"]:
            if not os.path.exists(os.path.join(self.out_dir, rel)):
                raise DependencyError(f"declared output missing: {rel}")


def _experiment_config(cfg, seed_override=None):
    exp = dict(cfg["experiment"])
    if seed_override is not None:
        exp["seed"] = seed_override
    scenario = exp.pop("scenario")
    if scenario == "simple":
        return datasets.simple_config(**exp)
    return datasets.complex_config(**exp)


def _omega_spec(d):
    if d["mode"] == "gaussian":
        return GaussianFrequencies(d["mu"], d["sigma"])
    return FixedFrequencies(np.array(d["omega"]))


def cmd_simulate(cfg, out_dir, manifest, seed):
    sim = cfg["simulate"]
    base_seed = seed if seed is not None else sim.get("seed", 41)
    freq = _omega_spec(sim["omega"])
    sim_cfg_kw = dict(
        dt=sim.get("dt", 0.05), n_steps=sim.get("n_steps", 1000),
        subsample=sim.get("subsample", 10),
        obs_noise_std=sim.get("obs_noise_std", 0.1),
        init_phase_std=sim.get("init_phase_std", 1.0),
    )
    trajs, labels = [], []
    for i, kappa in enumerate(sim["kappas"]):
        network = NetworkSpec(sim["n_oscillators"], MeanField(kappa))
        config = SimConfig(seed=base_seed + i, **sim_cfg_kw)
        traj = integrate(network, freq, config)
        csv = manifest.add_output(os.path.join(out_dir, f"trajectory_{i}.csv"))
        sidecar = save_trajectory(traj, csv, network, freq, config)
        manifest.add_output(sidecar)
        trajs.append(traj)
        labels.append(f"kappa={kappa}")
    svg = manifest.add_output(os.path.join(out_dir, "phase_circles.svg"))
    plots.phase_circle_svg(trajs, labels, svg)


def cmd_gen_data(cfg, out_dir, manifest, seed):
    config = _experiment_config(cfg, seed)
    train = manifest.time_stage("train_split", lambda: datasets.generate_split(config, "train"))
    val = manifest.time_stage(
        "val_split", lambda: datasets.generate_split(config, "val", train.standardizer))
    test = manifest.time_stage(
        "test_split", lambda: datasets.generate_split(config, "test", train.standardizer))
    for name, ds in (("train", train), ("val", val), ("test", test)):
        directory = os.path.join(out_dir, name)
        datasets.save_dataset(ds, directory, config)
        for fname in ("params.csv", "features.csv", "standardizer.json", "config.json"):
            manifest.add_output(os.path.join(directory, fname))


def cmd_train(cfg, out_dir, manifest, seed):
    config = _experiment_config(cfg, seed)
    root = cfg["paths"]["dataset"]
    for split in ("train", "val"):
        if not os.path.isdir(os.path.join(root, split)):
            raise DependencyError(f"missing dataset split: {os.path.join(root, split)}")
    manifest.add_input(root)
    train = datasets.load_dataset(os.path.join(root, "train"))
    val = datasets.load_dataset(os.path.join(root, "val"))
    val.standardizer = train.standardizer
    model, history = manifest.time_stage(
        "train", lambda: flow.train_flow(train, val, config))
    ckpt = manifest.add_output(os.path.join(out_dir, "checkpoint.bin"))
    flow.save_checkpoint(ckpt, model, train.standardizer.digest(), history,
                         prior=config.prior)
    log_csv = manifest.add_output(os.path.join(out_dir, "training_log.csv"))
    flow.save_training_log(history, log_csv)


def cmd_infer(cfg, out_dir, manifest, seed):
    config = _experiment_config(cfg, seed)
    ckpt_path = cfg["paths"]["checkpoint"]
    test_dir = os.path.join(cfg["paths"]["dataset"], "test")
    if not os.path.exists(ckpt_path):
        raise DependencyError(f"missing checkpoint: {ckpt_path}")
    if not os.path.isdir(test_dir):
        raise DependencyError(f"missing test dataset: {test_dir}")
    manifest.add_input(ckpt_path)
    manifest.add_input(test_dir)
    model, header = flow.load_checkpoint(ckpt_path)
    if header["version"] != 1:
        raise DependencyError(
            f"checkpoint version {header['version']} unsupported (tool {__version__})")
    test = datasets.load_dataset(test_dir)
    if header["standardizer_hash"] and header["standardizer_hash"] != test.standardizer.digest():
        raise DependencyError(
            "checkpoint standardizer hash does not match the test dataset "
            f"({header['standardizer_hash'][:12]} vs {test.standardizer.digest()[:12]})")
    prior = config.prior
    contexts = test.contexts()
    rng = np.random.default_rng(config.seed + 777)

    factors = None
    if cfg.get("recalibrate"):
        val_dir = os.path.join(cfg["paths"]["dataset"], "val")
        if not os.path.isdir(val_dir):
            raise DependencyError(f"recalibration needs a val dataset: {val_dir}")
        val = datasets.load_dataset(val_dir)
        val.standardizer = test.standardizer
        val_ctx = val.contexts()
        val_cases = [
            diagnostics.PosteriorSamples(
                draws=model.sample(config.posterior_draws, val_ctx[i], rng,
                                   prior=prior),
                true_params=val.params[i])
            for i in range(val.n)
        ]
        factors = diagnostics.fit_variance_inflation(val_cases, prior)
        with open(manifest.add_output(os.path.join(out_dir, "inflation.json")), "w") as f:
            json.dump({"factors": factors.tolist()}, f, sort_keys=True)

    for i in range(test.n):
        draws = model.sample(config.posterior_draws, contexts[i], rng, prior=prior)
        if factors is not None:
            mean = draws.mean(axis=0)
            draws = np.clip(mean + (draws - mean) * factors,
                            prior.lower, prior.upper)
        path = manifest.add_output(os.path.join(out_dir, f"case_{i:04d}.csv"))
        header_row = ",".join(f"kappa_{j + 1}" for j in range(prior.dim))
        np.savetxt(path, draws, delimiter=",", header=header_row, comments="")
        meta = manifest.add_output(path + ".json")
        with open(meta, "w") as f:
            json.dump({"true_params": test.params[i].tolist(), "source": "NPE",
                       "case": i}, f, sort_keys=True)


def _load_posteriors(directory):
    cases = []
    for fname in sorted(os.listdir(directory)):
        if not fname.endswith(".csv") or not fname.startswith("case_"):
            continue
        draws = np.loadtxt(os.path.join(directory, fname), delimiter=",",
                           skiprows=1, ndmin=2)
        with open(os.path.join(directory, fname + ".json")) as f:
            meta = json.load(f)
        cases.append(diagnostics.PosteriorSamples(
            draws=draws, true_params=np.array(meta["true_params"]),
            source=meta.get("source", "NPE")))
    return cases


def cmd_diagnose(cfg, out_dir, manifest, seed):
    config = _experiment_config(cfg, seed)
    post_dir = cfg["paths"]["posteriors"]
    if not os.path.isdir(post_dir):
        raise DependencyError(f"missing posterior directory: {post_dir}")
    manifest.add_input(post_dir)
    cases = _load_posteriors(post_dir)
    if not cases:
        raise DependencyError(f"no posterior sample files in {post_dir}")
    prior = config.prior
    report = diagnostics.compute_metrics(cases, prior, pit_seed=config.seed)
    metrics_path = manifest.add_output(os.path.join(out_dir, "metrics.json"))
    report.to_json(metrics_path)

    rows = diagnostics.recovery_table(cases)
    csv_path = manifest.add_output(os.path.join(out_dir, "recovery.csv"))
    with open(csv_path, "w") as f:
        f.write("case,param,truth,posterior_mean,q05,q95\n")
        for r in rows:
            f.write(f"{r['case']},{r['param']},{r['truth']!r},"
                    f"{r['posterior_mean']!r},{r['q05']!r},{r['q95']!r}\n")
    plots.recovery_scatter_svg(
        rows, manifest.add_output(os.path.join(out_dir, "recovery.svg")))
    plots.pit_histogram_svg(
        report.pit_values, manifest.add_output(os.path.join(out_dir, "pit_hist.svg")))
    band = diagnostics.pit_ecdf_band(report.pit_values)
    plots.pit_ecdf_svg(band, manifest.add_output(os.path.join(out_dir, "pit_ecdf.svg")))
    plots.posterior_histograms_svg(
        cases[:10], manifest.add_output(os.path.join(out_dir, "posteriors.svg")))


def cmd_mcmc(cfg, out_dir, manifest, seed):
    config = _experiment_config(cfg, seed)
    mc = cfg["mcmc"]
    base_seed = config.seed
    true_params = np.array(mc["true_params"])
    observed_traj = datasets.simulate_one(config, true_params, base_seed + 10_000_000)
    observed_steps = step_matrix(observed_traj.observed_phases)

    def simulate_fn(theta, sim_seed):
        traj = datasets.simulate_one(config, theta, sim_seed)
        return step_matrix(traj.observed_phases)

    rng = np.random.default_rng(base_seed + 5)
    prior = config.prior
    theta_ref = (prior.lower + prior.upper) / 2.0
    edges = mcmc.make_bin_edges(simulate_fn, theta_ref, rng,
                                n_bins=mc.get("n_bins", 20),
                                n_replicates=mc.get("n_replicates", 50))
    spec = mcmc.EcdfLikelihoodSpec(
        bin_edges=edges,
        n_replicates=mc.get("n_replicates", 50),
        n_replicates_proposal=mc.get("n_replicates_proposal", 10),
        lambda_reg=mc.get("lambda_reg", 1e-6),
    )
    observed_ecdf = mcmc.ecdf_vector(observed_steps, spec)
    chain_cfg = mcmc.ChainConfig(
        n_iterations=mc.get("n_iterations", 50_000),
        burn_in=mc.get("burn_in", 10_000),
        thinning=mc.get("thinning", 5),
        proposal_std=mc.get("proposal_std", 0.02 * float(prior.width.max())),
        seed=base_seed,
    )
    result = manifest.time_stage(
        "chain", lambda: mcmc.run_chain(observed_ecdf, prior, chain_cfg, spec, simulate_fn))
    mcmc.save_chain_csv(result, manifest.add_output(os.path.join(out_dir, "chain.csv")))
    summary = mcmc.chain_summary(result)
    summary["true_params"] = true_params.tolist()
    with open(manifest.add_output(os.path.join(out_dir, "summary.json")), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    d = result.draws.shape[1]
    header_row = ",".join(f"kappa_{j + 1}" for j in range(d))
    np.savetxt(manifest.add_output(os.path.join(out_dir, "draws.csv")),
               result.draws, delimiter=",", header=header_row, comments="")


def cmd_compare(cfg, out_dir, manifest, seed):
    npe_path = cfg["paths"]["npe_posterior"]
    chain_path = cfg["paths"]["mcmc_chain"]
    for p in (npe_path, chain_path):
        if not os.path.exists(p):
            raise DependencyError(f"missing upstream artifact: {p}")
        manifest.add_input(p)
    npe_draws = np.loadtxt(npe_path, delimiter=",", skiprows=1, ndmin=2)
    with open(npe_path + ".json") as f:
        meta = json.load(f)
    mcmc_draws = np.loadtxt(chain_path, delimiter=",", skiprows=1, ndmin=2)
    truth = np.array(meta["true_params"])
    npe_s = diagnostics.PosteriorSamples(npe_draws, truth, source="NPE")
    mcmc_s = diagnostics.PosteriorSamples(mcmc_draws, truth, source="MCMC")
    plots.compare_overlay_svg(
        npe_s, mcmc_s, manifest.add_output(os.path.join(out_dir, "compare.svg")))


_COMMANDS = {
    "simulate": cmd_simulate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "diagnose": cmd_diagnose,
    "mcmc": cmd_mcmc,
    "compare": cmd_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kabi",
        description="Kuramoto amortized Bayesian inference pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker thread cap (fallback: KABI_THREADS)")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None and os.environ.get("KABI_THREADS"):
        threads = int(os.environ["KABI_THREADS"])
    if threads is not None:
        try:
            import numba

            numba.set_num_threads(max(1, threads))
        except ImportError:
            pass
    try:
        cfg = load_config(args.config, args.command)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args.command, cfg, args.out, args.seed)
    try:
        _COMMANDS[args.command](cfg, args.out, manifest, args.seed)
        manifest.write()
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
