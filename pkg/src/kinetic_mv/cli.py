"""Command line front-end: ``kinetic-mv <workflow> --config <path>``.

Exit codes: 0 success, 2 configuration or model error, 3 particle blow-up,
4 insufficient data (including singular moment systems). Errors are echoed
as one JSON object on standard error.
"""

import argparse
import csv
import json
import logging
import math
import os
import subprocess
import sys
import time
from importlib import resources

import jsonschema
import numpy as np

from . import __version__, deviations, fhn, gl, rng
from ._backend import BACKEND
from .errors import ConfigError, KineticMVError
from .models import model_from_json
from .simulator import SimConfig, default_snapshots, fmt, simulate

log = logging.getLogger("kinetic_mv")

SCHEMA_ID = "kinetic-mv/run-config/v1"
WORKFLOWS = ("simulate", "density", "params", "deviations", "convergence")
# the moment estimator needs finer snapshots than the generic default
PARAMS_SNAPSHOTS = 1000
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def load_schema():
    text = resources.files("kinetic_mv").joinpath("schemas/run_config.schema.json").read_text()
    return json.loads(text)


def _path(err):
    return ".".join(str(p) for p in err.absolute_path)


def validate_config(doc):
    """Schema validation; the first error becomes a ConfigError naming its field."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(list(e.absolute_path)), _path(e)))
    if errors:
        err = errors[0]
        field = _path(err)
        if err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            field = ".".join(filter(None, [field, missing[0] if missing else ""]))
        elif err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            field = ".".join(filter(None, [field, extra[0] if extra else ""]))
        raise ConfigError(f"{field or 'config'}: {err.message}", field or None)
    return doc


def read_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", "config") from None
    return validate_config(doc)


def git_describe():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


# Config plumbing ----------------------------------------------------------------

class Run:
    """A validated config bound to a model and an output directory."""

    def __init__(self, doc, workflow, out, threads):
        if doc["workflow"] != workflow:
            raise ConfigError(f"config is for workflow {doc['workflow']!r}, not {workflow!r}", "workflow")
        self.doc = doc
        self.workflow = workflow
        self.out = out or doc.get("output")
        if not self.out:
            raise ConfigError("no output directory (use --out or the 'output' field)", "output")
        self.threads = threads or doc.get("threads") or os.cpu_count() or 1
        self.model = model_from_json(doc["model"])
        self.sim = doc["sim"]
        block = doc.get(workflow)
        if workflow in ("density", "deviations", "convergence") and block is None:
            raise ConfigError(f"workflow {workflow!r} needs a {workflow!r} block", workflow)
        self.block = block or {}
        try:
            self.sim_config(self.sim["n"], self.sim["seed"])  # validates the sim fields early
        except ConfigError as exc:
            field = f"sim.{exc.field}" if exc.field in self.sim or exc.field == "snapshots" else exc.field
            raise ConfigError(f"{field}: {exc}", field) from None

    def snapshot_times(self, default_count=200):
        t_end = self.sim["t_end"]
        snaps = self.sim.get("snapshots", default_count)
        if isinstance(snaps, int):
            return default_snapshots(t_end, snaps)
        return np.asarray(snaps, dtype=float)

    def sim_config(self, n, seed, t_end=None, snapshots=None, keep=None):
        s = self.sim
        t_end = s["t_end"] if t_end is None else t_end
        snapshots = self.snapshot_times() if snapshots is None else snapshots
        return SimConfig(self.model.drift, self.model.initial, n, t_end, s["dt"], snapshots, seed,
                         s.get("scheme", "euler_maruyama"), threads=self.threads,
                         keep=keep or s.get("keep", "all"), model_doc=self.doc["model"])

    def plan(self):
        s = self.sim
        steps = int(math.ceil(s["t_end"] / s["dt"] - 1e-9))
        p = {"workflow": self.workflow, "output": self.out, "threads": self.threads, "backend": BACKEND,
             "model": self.model.kind, "n": s["n"], "t_end": s["t_end"], "dt": s["dt"], "seed": s["seed"],
             "steps_per_run": steps}
        b = self.block
        if self.workflow == "params" and "Ns" in b:
            p["runs"] = 1 + len(b["Ns"]) * b.get("seeds", 20)
        elif self.workflow == "deviations":
            p["runs"] = len(b["Ns"]) * b["R"]
        elif self.workflow == "convergence":
            p["runs"] = 1 + len(b["Ns"]) * b.get("seeds", 20)
        else:
            p["runs"] = 1
        p["artifacts"] = ARTIFACTS[self.workflow]
        return p


ARTIFACTS = {
    "simulate": ["meta.json", "snapshots.csv", "moments.csv"],
    "density": ["meta.json", "gl_result.json", "gl_curve.csv"],
    "params": ["meta.json", "theta_hat.json", "scaling.csv"],
    "deviations": ["meta.json", "tails.csv", "fit.json"],
    "convergence": ["meta.json", "chaos.csv"],
}


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# Workflows ----------------------------------------------------------------------

def run_simulate(run: Run):
    rec = simulate(run.sim_config(run.sim["n"], run.sim["seed"]))
    rec.save(run.out)
    # keep the trajectory echo so load_record can read the directory back
    with open(os.path.join(run.out, "meta.json")) as fh:
        return json.load(fh)


def run_density(run: Run):
    b = run.block
    t0 = float(b["t0"])
    if t0 > run.sim["t_end"]:
        raise ConfigError("density.t0 exceeds sim.t_end", "density.t0")
    e = simulate(run.sim_config(run.sim["n"], run.sim["seed"], t_end=t0, snapshots=[0.0, t0], keep="ends")).final()
    d = e.d
    x0 = np.asarray(b["point"]["x"], dtype=float)
    y0 = np.asarray(b["point"]["y"], dtype=float)
    if x0.shape != (d,) or y0.shape != (d,):
        raise ConfigError(f"density.point needs {d} coordinates in x and y", "density.point")
    kern = gl.Kernel(b.get("kernel", "epanechnikov"), d)
    g = b.get("grid", {})
    if "hs" in g:
        grid = gl.BandwidthGrid(tuple(g["hs"]), e.n, d)
    else:
        grid = gl.BandwidthGrid.geometric(e.n, d, g.get("count"), g.get("ratio", gl.GRID_RATIO), g.get("h_max", 1.0))
    res = gl.gl_select(e, kern, grid, b.get("varpi", gl.DEFAULT_VARPI), x0, y0)
    doc = res.to_json()
    if run.model.kind == "kou":
        from .models import density_at
        doc["truth"] = float(density_at(run.model.kou, t0, x0, y0))
    write_json(os.path.join(run.out, "gl_result.json"), doc)
    crit = res.A + res.V
    write_csv(os.path.join(run.out, "gl_curve.csv"), ["h", "mu_hat", "V", "A", "A_plus_V"],
              [(float(h), float(m), float(v), float(a), float(c))
               for h, m, v, a, c in zip(res.hs, res.mu_hat, res.V, res.A, crit)])
    return {}


def run_params(run: Run):
    if run.model.kind != "fhn":
        raise ConfigError("the params workflow needs an FhN model", "model.model")
    snaps = run.snapshot_times(PARAMS_SNAPSHOTS)
    cfg = run.sim_config(run.sim["n"], run.sim["seed"], snapshots=snaps, keep="ends")
    est = fhn.estimate(simulate(cfg))
    write_json(os.path.join(run.out, "theta_hat.json"), est.to_json())
    truth = run.model.theta.as_array()
    header = ["N", "seed"] + [f"err_{c}" for c in fhn.COLUMNS] + ["abs_error"]
    summary = {}
    if "Ns" in run.block:
        s = run.sim
        rep = fhn.error_scaling_study(run.model.theta, run.block["Ns"], run.block.get("seeds", 20),
                                      base_seed=s["seed"], t_end=s["t_end"], dt=s["dt"],
                                      n_snapshots=len(snaps) - 1, initial=run.model.initial,
                                      threads=run.threads)
        rows = [[r["N"], r["seed"]] + [float(v) for v in r["error"]] + [r["abs_error"]] for r in rep.rows]
        summary = {"scaling": {"slope": rep.slope, "slope_coord": rep.slope_coord.tolist(),
                               "rmse": {str(n): rep.rmse[n] for n in rep.Ns},
                               "failures": {str(n): rep.failures[n] for n in rep.Ns}}}
    else:
        err = est.theta_hat - truth
        rows = [[cfg.n, cfg.seed] + [float(v) for v in err] + [float(np.linalg.norm(err))]]
    write_csv(os.path.join(run.out, "scaling.csv"), header, rows)
    return summary


def _phi(run):
    spec = run.block["phi"]
    if "interval" in spec:
        rho = deviations.UniformOn(*spec["interval"])
    else:
        rho = deviations.DiracAt(float(spec.get("t", run.sim["t_end"])))
    return deviations.named_test_function(spec["name"], rho)


def _reference_value(run, phi, Ns):
    if run.model.kind == "kou":
        return deviations.kou_reference(run.model.kou, phi)
    b = run.block
    n_ref = b.get("n_ref", 64 * max(Ns))
    snaps = deviations.required_snapshots(phi, run.sim["t_end"])
    cfg = run.sim_config(n_ref, rng.derive_seed(run.sim["seed"], deviations.REFERENCE_TAG), snapshots=snaps)
    ref = deviations.reference_run(cfg, b.get("reference_dir"))
    return deviations.empirical_average(ref, phi)


def run_deviations(run: Run):
    b = run.block
    phi = _phi(run)
    Ns = sorted(b["Ns"])
    snaps = deviations.required_snapshots(phi, run.sim["t_end"])
    reference = _reference_value(run, phi, Ns)

    def make(N, seed):
        return run.sim_config(N, seed, snapshots=snaps)

    vals = {N: deviations.replicate_functionals(make, phi, reference, N, b["R"], run.sim["seed"], run.threads)
            for N in Ns}
    base = np.abs(vals[Ns[0]][np.isfinite(vals[Ns[0]])])
    if "gammas" in b:
        gammas = list(b["gammas"])
    else:
        gammas = [float(q) for q in np.quantile(base, b.get("gamma_quantiles", [0.1, 0.25, 0.5, 0.75, 0.9]))]
    if "gamma_ref" in b:
        gamma_ref = float(b["gamma_ref"])
    else:
        gamma_ref = float(np.quantile(base, b.get("gamma_ref_quantile", 0.1)))
    rep = deviations.tail_experiment(make, phi, Ns, b["R"], gammas, run.sim["seed"], reference,
                                     gamma_ref=gamma_ref, functionals=vals)
    write_csv(os.path.join(run.out, "tails.csv"), ["N", "gamma", "p_hat", "ci_lo", "ci_hi"],
              [(r["N"], r["gamma"], r["p_hat"], r["ci_lo"], r["ci_hi"]) for r in rep.rows])
    doc = rep.fit_json()
    doc["reference"] = reference
    write_json(os.path.join(run.out, "fit.json"), doc)
    return {}


def run_convergence(run: Run):
    b = run.block
    T = run.sim["t_end"]

    def make(N, seed):
        return run.sim_config(N, seed, snapshots=[0.0, T], keep="ends")

    n_ref = b.get("n_ref", 16 * max(b["Ns"]))
    rows = deviations.chaos_experiment(make, sorted(b["Ns"]), run.sim["seed"], n_ref, b.get("seeds", 20),
                                       b.get("n_proj", 64))
    write_csv(os.path.join(run.out, "chaos.csv"), ["N", "w1_mean", "w1_se"],
              [(r.N, r.w1_mean, r.w1_se) for r in rows])
    return {"n_ref": n_ref}


RUNNERS = {"simulate": run_simulate, "density": run_density, "params": run_params,
           "deviations": run_deviations, "convergence": run_convergence}


# Entry point ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="kinetic-mv", description="Kinetic McKean-Vlasov particle toolkit.")
    p.add_argument("workflow", choices=WORKFLOWS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides the config's 'output')")
    p.add_argument("--threads", type=int, help="worker threads (default: config, then CPU count)")
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan without computing")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def setup_logging():
    name = os.environ.get("KINETIC_MV_LOG", "info").lower()
    level = LOG_LEVELS.get(name, logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False


def execute(workflow, config, out=None, threads=None, dry_run=False):
    """Run one workflow; returns the meta document (or the plan for a dry run)."""
    if threads is not None and threads < 1:
        raise ConfigError("--threads must be at least 1", "threads")
    doc = read_config(config)
    run = Run(doc, workflow, out, threads)
    if dry_run:
        return {"dry_run": True, "plan": run.plan()}
    os.makedirs(run.out, exist_ok=True)
    log.info("running %s into %s with %d thread(s)", workflow, run.out, run.threads)
    start = time.perf_counter()
    extra = RUNNERS[workflow](run)
    meta = {"schema": SCHEMA_ID, "workflow": workflow, "version": __version__, "git_describe": git_describe(),
            "backend": BACKEND, "threads": run.threads, "wall_time_s": time.perf_counter() - start,
            "run_config": doc}
    meta.update(extra)
    write_json(os.path.join(run.out, "meta.json"), meta)
    return meta


def main(argv=None):
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        result = execute(args.workflow, args.config, args.out, args.threads, args.dry_run)
    except KineticMVError as exc:
        print(json.dumps(dict(exc.to_dict(), exit_code=exc.exit_code)), file=sys.stderr)
        return exc.exit_code
    if args.dry_run:
        print(json.dumps(result["plan"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
