"""Experiment configuration, orchestration and result files.

A config is a JSON document (schema version 1)::

    {
      "schema_version": 1,
      "model": {"family": "linear", "lam": 10, "xi": 1.0, "n_agents": 20,
                "convention": "posterior", "partition_seed": 0,
                "source": {"kind": "synthetic", "n": 1000, "d": 2}},
      "topology": {"kind": "complete"},
      "sampler": {"algorithm": "de-sgld", "eta": 0.009, "n_iter": 500,
                  "batch": "full", "stride": 1},
      "replicas": 100, "seed": 0, "strict": false,
      "outputs": {"curves": ["w2:average", "w2:0"]}
    }

Data sources are ``synthetic`` (generated from ``partition_seed``),
``csv`` (a raw file plus a reading schema) or ``prepared`` (the output
directory of ``dataset-prepare``).

``"eta": "auto"`` picks ``AUTO_STEP_FRACTION`` of the largest step the
convergence theory allows for the chosen algorithm, and ``"gamma": "auto"``
sets ``gamma = 1 / eta``. Both are resolved to numbers before the run, so
the manifest records the values actually used.
"""

from __future__ import annotations

import copy
import json
import platform
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import datasets
from .errors import ConfigurationError, IntegrityError, ValidationError
from .metrics import GaussianSummary, accuracy_curve, w2_curve
from .models import DecomposedTarget, synth_linreg, synth_logreg
from .network import MixingMatrix, build_mixing, load_network_json
from .numerics import RngStream
from .samplers import KIND_GRADIENT, KIND_INIT, KIND_INJECTED, SamplerConfig, TraceSet, run, stream_id
from .theory import (
    BoundCurve,
    estimate_c5,
    sghmc_max_step,
    sgld_stepsize_ceiling,
    sgld_w2_bound,
    bound_inputs,
    sghmc_w2_bound,
    sghmc_bound_inputs,
)

SCHEMA_VERSION = 1
DATA_STREAM = 1 << 62
PARTITION_STREAM = (1 << 62) + 1
AUTO_STEP_FRACTION = 0.9

_NUMBER = {"type": "number"}
CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "model", "topology", "sampler"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["family", "n_agents", "source"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["linear", "logistic"]},
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "xi": {"type": "number", "exclusiveMinimum": 0},
                "convention": {"enum": ["posterior", "unscaled"]},
                "n_agents": {"type": "integer", "minimum": 1},
                "partition_seed": {"type": "integer", "minimum": 0},
                "source": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["synthetic", "csv", "prepared"]},
                        "n": {"type": "integer", "minimum": 1},
                        "d": {"type": "integer", "minimum": 1},
                        "feature_scale": {"type": "number", "exclusiveMinimum": 0},
                        "true_x": {"type": ["array", "null"], "items": _NUMBER},
                        "path": {"type": "string"},
                        "schema": {"type": ["string", "object"]},
                        "standardize": {"type": "boolean"},
                        "test_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "dir": {"type": "string"},
                    },
                },
            },
        },
        "topology": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["complete", "circular", "disconnected", "custom"]},
                "edges": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                "file": {"type": "string"},
            },
        },
        "sampler": {
            "type": "object",
            "required": ["algorithm", "eta", "n_iter"],
            "additionalProperties": False,
            "properties": {
                "algorithm": {"enum": ["de-sgld", "de-sghmc", "ula"]},
                "eta": {"anyOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
                "gamma": {"anyOf": [{"const": "auto"}, {"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
                "batch": {"anyOf": [{"const": "full"}, {"type": "integer", "minimum": 1}]},
                "n_iter": {"type": "integer", "minimum": 0},
                "stride": {"type": "integer", "minimum": 1},
                "init_scale": {"type": "number", "minimum": 0},
                "averaged_noise": {"type": "boolean"},
                "record_momenta": {"type": "boolean"},
                "c5": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "replicas": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "strict": {"type": "boolean"},
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "curves": {"type": "array", "items": {"type": "string", "pattern": "^(w2|accuracy):(average|[0-9]+)$"}},
                "bounds_k": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "write_traces": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "model": {"lam": 10.0, "xi": 1.0, "convention": "posterior", "partition_seed": 0},
    "sampler": {"gamma": None, "batch": "full", "stride": 1, "init_scale": 0.0, "averaged_noise": False, "record_momenta": False, "c5": None},
    "replicas": 1,
    "seed": 0,
    "strict": False,
    "outputs": {"curves": [], "write_traces": True},
}


def _linreg_preset(name, algorithm, eta, gamma=None, n=5000, n_agents=100, replicas=100, n_iter=500, kind="complete", batch="full"):
    return {
        "schema_version": 1,
        "name": name,
        "model": {
            "family": "linear",
            "lam": 10.0,
            "xi": 1.0,
            "n_agents": n_agents,
            "partition_seed": 0,
            "source": {"kind": "synthetic", "n": n, "d": 2},
        },
        "topology": {"kind": kind},
        "sampler": {"algorithm": algorithm, "eta": eta, "gamma": gamma, "batch": batch, "n_iter": n_iter, "stride": 1},
        "replicas": replicas,
        "seed": 0,
        "outputs": {"curves": ["w2:average", "w2:0", "w2:1", "w2:2", "w2:3"]},
    }


def _logreg_preset(name, algorithm, eta, gamma=None, source=None, batch=32, n_iter=2000):
    source = source or {"kind": "synthetic", "n": 1000, "d": 3, "feature_scale": 20.0}
    return {
        "schema_version": 1,
        "name": name,
        "model": {"family": "logistic", "lam": 10.0, "n_agents": 6, "partition_seed": 0, "source": source},
        "topology": {"kind": "complete"},
        "sampler": {"algorithm": algorithm, "eta": eta, "gamma": gamma, "batch": batch, "n_iter": n_iter, "stride": 10},
        "replicas": 100,
        "seed": 0,
        "outputs": {"curves": ["accuracy:0", "accuracy:average"]},
    }


PRESETS = {
    "linreg": _linreg_preset("linreg", "de-sgld", 0.009),
    "linreg-sghmc": _linreg_preset("linreg-sghmc", "de-sghmc", 0.1, gamma=7.0),
    "linreg-batch": _linreg_preset("linreg-batch", "de-sgld", 0.009, batch=25),
    "linreg-small": _linreg_preset("linreg-small", "de-sgld", 0.009, n=1000, n_agents=20),
    "logreg": _logreg_preset("logreg", "de-sgld", 0.0003),
    "logreg-sghmc": _logreg_preset("logreg-sghmc", "de-sghmc", 0.02, gamma=30.0),
    "breast-cancer": _logreg_preset(
        "breast-cancer", "de-sgld", 0.0008, source={"kind": "csv", "path": "wdbc.data", "schema": "breast-cancer", "standardize": True}
    ),
    "breast-cancer-sghmc": _logreg_preset(
        "breast-cancer-sghmc", "de-sghmc", 0.05, gamma=10.0,
        source={"kind": "csv", "path": "wdbc.data", "schema": "breast-cancer", "standardize": True},
    ),
    "telescope": _logreg_preset(
        "telescope", "de-sgld", 0.008, batch=100,
        source={"kind": "csv", "path": "magic04.data", "schema": "telescope", "standardize": True, "test_fraction": 0.1},
    ),
    "telescope-sghmc": _logreg_preset(
        "telescope-sghmc", "de-sghmc", 0.07, gamma=5.0, batch=100,
        source={"kind": "csv", "path": "magic04.data", "schema": "telescope", "standardize": True, "test_fraction": 0.1},
    ),
}


def _merge_defaults(doc: dict) -> dict:
    out = copy.deepcopy(doc)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            section = out.setdefault(key, {})
            for k, v in val.items():
                section.setdefault(k, copy.deepcopy(v))
        else:
            out.setdefault(key, val)
    return out


def validate_config(doc: dict, base_dir: Path | None = None) -> dict:
    """Check a config against the schema and fill defaults.

    Errors name the offending field path, e.g. ``sampler.eta``.
    """
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigurationError("invalid config: " + "; ".join(msgs))
    cfg = _merge_defaults(doc)
    src = cfg["model"]["source"]
    base = base_dir or Path.cwd()
    kind = src["kind"]
    if kind == "synthetic":
        for k in ("n", "d"):
            if k not in src:
                raise ConfigurationError(f"model.source.{k}: required for synthetic data")
        if src.get("true_x") is not None and len(src["true_x"]) != src["d"]:
            raise ConfigurationError("model.source.true_x: length must equal d")
    elif kind == "csv":
        if "path" not in src or "schema" not in src:
            raise ConfigurationError("model.source: csv sources need path and schema")
        path = (base / src["path"]).resolve()
        if not path.is_file():
            raise ValidationError(f"model.source.path: dataset file not found: {path}")
        src["path"] = str(path)
        if isinstance(src["schema"], str) and src["schema"] not in datasets.SCHEMAS:
            raise ConfigurationError(f"model.source.schema: unknown schema {src['schema']!r}")
    else:
        if "dir" not in src:
            raise ConfigurationError("model.source.dir: required for prepared data")
        d = (base / src["dir"]).resolve()
        if not (d / "dataset.csv").is_file() or not (d / "partition.json").is_file():
            raise ValidationError(f"model.source.dir: {d} lacks dataset.csv / partition.json")
        src["dir"] = str(d)
    if cfg["model"]["family"] == "logistic" and cfg["model"]["convention"] != "posterior":
        raise ConfigurationError("model.convention: only applies to linear regression")
    topo = cfg["topology"]
    if topo["kind"] == "custom" and "edges" not in topo and "file" not in topo:
        raise ConfigurationError("topology: custom graphs need edges or file")
    if "file" in topo:
        f = (base / topo["file"]).resolve()
        if not f.is_file():
            raise ValidationError(f"topology.file: not found: {f}")
        topo["file"] = str(f)
    s = cfg["sampler"]
    if s["algorithm"] == "de-sghmc" and s.get("gamma") is None:
        raise ConfigurationError("sampler.gamma: required for de-sghmc")
    return cfg


def load_config(spec: str) -> dict:
    """Load ``preset:NAME``, a config file, or a run manifest (its resolved config)."""
    if spec.startswith("preset:"):
        name = spec.split(":", 1)[1]
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
        return validate_config(PRESETS[name])
    path = Path(spec)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if "resolved_config" in doc:
        doc = doc["resolved_config"]
    return validate_config(doc, path.parent)


@dataclass
class Experiment:
    config: dict
    target: DecomposedTarget
    mixing: MixingMatrix
    sampler: SamplerConfig
    X: np.ndarray
    y: np.ndarray
    X_test: np.ndarray | None = None
    y_test: np.ndarray | None = None
    true_x: np.ndarray | None = None


def _load_source(model: dict):
    src = model["source"]
    n_agents = model["n_agents"]
    seed = model["partition_seed"]
    X_test = y_test = true_x = None
    if src["kind"] == "synthetic":
        data_stream = RngStream(seed, DATA_STREAM)
        tx = src.get("true_x")
        if model["family"] == "linear":
            X, y, true_x = synth_linreg(data_stream, src["n"], src["d"], model["xi"], model["lam"], tx)
        else:
            X, y, true_x = synth_logreg(data_stream, src["n"], src["d"], src.get("feature_scale", 20.0), model["lam"], tx)
        part = datasets.split_and_partition(len(y), 0.0, n_agents, RngStream(seed, PARTITION_STREAM))
    elif src["kind"] == "csv":
        schema = src["schema"]
        schema = datasets.SCHEMAS[schema] if isinstance(schema, str) else datasets.CsvSchema.from_dict(schema)
        ds = datasets.load_csv(src["path"], schema)
        if src.get("standardize", True):
            ds = datasets.standardize(ds)
        X, y = ds.X, ds.y
        part = datasets.split_and_partition(len(y), src.get("test_fraction", 0.0), n_agents, RngStream(seed, PARTITION_STREAM))
    else:
        d = Path(src["dir"])
        ds = datasets.read_prepared_csv(d / "dataset.csv")
        part = datasets.Partition.load(d / "partition.json")
        if part.n_agents != n_agents:
            raise IntegrityError(f"prepared partition has {part.n_agents} agents but config asks for {n_agents}")
        X, y = ds.X, ds.y
    shards = datasets.partition_shards(X, y, part)
    if len(part.test):
        X_test, y_test = datasets.holdout_data(X, y, part)
    Xtr, ytr = datasets.stack_shards(shards)
    return shards, Xtr, ytr, X_test, y_test, true_x


def build_experiment(cfg: dict, seed: int | None = None, strict: bool | None = None) -> Experiment:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if strict is not None:
        cfg["strict"] = bool(strict)
    model = cfg["model"]
    shards, X, y, X_test, y_test, true_x = _load_source(model)
    target = DecomposedTarget(model["family"], shards, model["lam"], model["xi"], model["convention"])
    topo = cfg["topology"]
    if "file" in topo:
        mixing = load_network_json(topo["file"])
    else:
        mixing = build_mixing(topo["kind"], model["n_agents"], topo.get("edges"))
    if mixing.n != model["n_agents"]:
        raise ConfigurationError(f"topology: network has {mixing.n} nodes but model.n_agents = {model['n_agents']}")
    s = cfg["sampler"]
    _resolve_auto(s, target, mixing)
    sampler = SamplerConfig(
        algorithm=s["algorithm"],
        eta=s["eta"],
        n_iter=s["n_iter"],
        gamma=s.get("gamma"),
        batch=s["batch"],
        stride=s["stride"],
        init_scale=s["init_scale"],
        strict=cfg["strict"],
        averaged_noise=s["averaged_noise"],
        record_momenta=s["record_momenta"],
    )
    return Experiment(cfg, target, mixing, sampler, X, y, X_test, y_test, true_x)


def _resolve_auto(s: dict, target: DecomposedTarget, mixing: MixingMatrix) -> None:
    if s["eta"] == "auto":
        c = target.constants()
        if s["algorithm"] == "de-sghmc":
            s["eta"] = AUTO_STEP_FRACTION * sghmc_max_step(c.mu, c.L, mixing.lambda_n)
        else:
            s["eta"] = AUTO_STEP_FRACTION * sgld_stepsize_ceiling(c.mu, c.L, mixing.lambda_n)
    if s.get("gamma") == "auto":
        s["gamma"] = 1.0 / s["eta"]


def fmt(v: float) -> str:
    """Shortest round-trip decimal for a float."""
    return repr(float(v))


def write_trace_csv(path: Path, ks: np.ndarray, x: np.ndarray) -> None:
    """One replica's trace: rows ``k,agent,coord,value``; ``x`` is (records, N, d)."""
    n, d = x.shape[1], x.shape[2]
    lines = ["k,agent,coord,value"]
    for j, k in enumerate(ks):
        kk = int(k)
        for i in range(n):
            for c in range(d):
                lines.append(f"{kk},{i},{c},{fmt(x[j, i, c])}")
    path.write_text("\n".join(lines) + "\n")


def read_trace_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise IntegrityError(f"unreadable trace file {path}: {exc}") from exc
    if arr.shape[1] != 4:
        raise IntegrityError(f"{path}: expected 4 columns")
    k = arr[:, 0].astype(np.int64)
    agent = arr[:, 1].astype(np.int64)
    coord = arr[:, 2].astype(np.int64)
    ks = np.unique(k)
    n, d = agent.max() + 1, coord.max() + 1
    if len(arr) != len(ks) * n * d:
        raise IntegrityError(f"{path}: ragged trace ({len(arr)} rows for {len(ks)} x {n} x {d})")
    x = np.empty((len(ks), n, d))
    x[np.searchsorted(ks, k), agent, coord] = arr[:, 3]
    return ks, x


def _constants_doc(exp: Experiment) -> dict:
    b = None if exp.sampler.full_batch else int(exp.sampler.batch)
    c = exp.target.constants(batch=b)
    return {
        "mu": c.mu,
        "L": c.L,
        "sigma2": c.sigma2,
        "sigma2_provenance": "exact minibatch variance, max over probe grid and agents" if b else "zero (full gradients)",
        "x_star": c.x_star.tolist(),
    }


def _software_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _target_posterior(exp: Experiment):
    if exp.target.family != "linear":
        raise ValidationError("a closed-form posterior target exists only for linear regression")
    return exp.target.posterior()


def curves_csv(rows: list[tuple]) -> str:
    out = ["k,subject,value,std"]
    for k, subj, val, std in rows:
        out.append(f"{int(k)},{subj},{fmt(val)},{'' if std is None else fmt(std)}")
    return "\n".join(out) + "\n"


def simulate(cfg: dict, out: Path, jobs: int = 1, seed: int | None = None, strict: bool | None = None) -> dict:
    """Run the configured sampler and write traces, curves and manifest.json."""
    t0 = time.perf_counter()
    exp = build_experiment(cfg, seed, strict)
    out.mkdir(parents=True, exist_ok=True)
    traces = run(exp.sampler, exp.mixing, exp.target, exp.config["replicas"], exp.config["seed"], jobs)
    if exp.config["outputs"]["write_traces"]:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for r in range(traces.n_replicas):
            write_trace_csv(tdir / f"replica_{r:04d}.csv", traces.ks, traces.x[r])
        if traces.v is not None:
            for r in range(traces.n_replicas):
                write_trace_csv(tdir / f"momentum_{r:04d}.csv", traces.ks, traces.v[r])
    written = write_curves(exp, traces, out)
    manifest = {
        "resolved_config": exp.config,
        "constants": _constants_doc(exp),
        "spectrum": exp.mixing.spectrum_dict(),
        "software_version": _software_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "rng": {
            "generator": "numpy Philox, SeedSequence(seed, spawn_key=(stream_id,))",
            "stream_id": "replica << 40 | agent << 8 | kind",
            "kinds": {"noise": KIND_INJECTED, "gradient": KIND_GRADIENT, "init": KIND_INIT},
            "data_stream": DATA_STREAM,
            "partition_stream": PARTITION_STREAM,
        },
        "replica_seeds": [
            {"replica": int(r), "seed": exp.config["seed"], "stream_base": int(stream_id(int(r), 0, 0))} for r in traces.replicas
        ],
        "n_replicas": traces.n_replicas,
        "recorded_iterations": [int(traces.ks[0]), int(traces.ks[-1]), int(exp.sampler.stride)],
        "warnings": traces.meta.get("warnings", []),
        "curves": written,
        "wall_clock_seconds": time.perf_counter() - t0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def write_curves(exp: Experiment, traces: TraceSet, out: Path) -> list[str]:
    written = []
    for spec in exp.config["outputs"]["curves"]:
        kind, subj = spec.split(":")
        subject = "average" if subj == "average" else int(subj)
        if kind == "w2":
            curve = w2_curve(traces, _target_posterior(exp), subject, label=_w2_label(exp))
            rows = [(k, subj, v, None) for k, v in zip(curve.ks, curve.values)]
            name = f"w2_{subj}.csv"
            sidecar = {"target": "closed-form posterior", "subject": subj, "label": curve.label}
        else:
            curve = accuracy_curve(traces, exp.X, exp.y, subject)
            rows = [(k, subj, m, s) for k, m, s in zip(curve.ks, curve.mean, curve.std)]
            name = f"accuracy_{subj}.csv"
            sidecar = {"data": "training set", "subject": subj}
            if exp.X_test is not None:
                tc = accuracy_curve(traces, exp.X_test, exp.y_test, subject)
                (out / f"accuracy_test_{subj}.csv").write_text(
                    curves_csv([(k, subj, m, s) for k, m, s in zip(tc.ks, tc.mean, tc.std)])
                )
                written.append(f"accuracy_test_{subj}.csv")
        (out / name).write_text(curves_csv(rows))
        (out / (name[:-4] + ".json")).write_text(json.dumps({**sidecar, "manifest": "manifest.json"}, sort_keys=True) + "\n")
        written.append(name)
    return written


def _w2_label(exp: Experiment) -> str:
    return "exact" if exp.sampler.full_batch else "Gaussian-approximated"


def read_traces(traces_dir: Path) -> tuple[dict, TraceSet]:
    """Load ``manifest.json`` and every replica CSV under ``traces/``."""
    traces_dir = Path(traces_dir)
    mpath = traces_dir / "manifest.json"
    if not mpath.is_file():
        raise IntegrityError(f"missing run manifest: {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"corrupt manifest {mpath}: {exc}") from exc
    files = sorted((traces_dir / "traces").glob("replica_*.csv"))
    if not files:
        raise IntegrityError(f"no trace files under {traces_dir / 'traces'}")
    if len(files) != manifest.get("n_replicas"):
        raise IntegrityError(f"manifest lists {manifest.get('n_replicas')} replicas but {len(files)} trace files exist")
    ks0, x0 = read_trace_csv(files[0])
    xs = [x0]
    for f in files[1:]:
        ks, x = read_trace_csv(f)
        if not np.array_equal(ks, ks0) or x.shape != x0.shape:
            raise IntegrityError(f"{f.name} disagrees with {files[0].name} on recorded iterations or shape")
        xs.append(x)
    return manifest, TraceSet(ks0, np.stack(xs))


def parse_subject(text: str):
    if text == "average":
        return "average"
    if text.startswith("agent:"):
        try:
            return int(text.split(":", 1)[1])
        except ValueError:
            pass
    raise ValidationError(f"subject must be 'average' or 'agent:<i>', got {text!r}")


def load_target_spec(spec: str, manifest: dict):
    """``posterior`` (closed form from the manifest's model) or a JSON file with mean/cov."""
    if spec == "posterior":
        exp = build_experiment(validate_config(manifest["resolved_config"]))
        return _target_posterior(exp)
    path = Path(spec)
    if not path.is_file():
        raise ValidationError(f"target spec must be 'posterior' or a JSON file, got {spec!r}")
    doc = json.loads(path.read_text())
    return GaussianSummary(np.asarray(doc["mean"], float), np.atleast_2d(np.asarray(doc["cov"], float)))


def wasserstein(traces_dir: Path, target: str, subject: str, out: Path) -> Path:
    manifest, traces = read_traces(traces_dir)
    subj = parse_subject(subject)
    tgt = load_target_spec(target, manifest)
    curve = w2_curve(traces, tgt, subj)
    label = "average" if subj == "average" else str(subj)
    out = Path(out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"w2_{label}.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(curves_csv([(k, label, v, None) for k, v in zip(curve.ks, curve.values)]))
    out.with_suffix(".json").write_text(
        json.dumps({"target": target, "subject": label, "manifest": str(Path(traces_dir) / "manifest.json")}, sort_keys=True) + "\n"
    )
    return out


def parse_k_grid(text: str | None, n_iter: int, stride: int) -> np.ndarray:
    """``start:stop:step`` (inclusive stop) or comma-separated ints; default follows the sampler stride."""
    if not text:
        return np.arange(0, n_iter + 1, stride)
    try:
        if ":" in text:
            a, b, c = (int(t) for t in text.split(":"))
            grid = np.arange(a, b + 1, c)
        else:
            grid = np.array([int(t) for t in text.split(",")])
    except ValueError as exc:
        raise ValidationError(f"bad k grid {text!r}") from exc
    if len(grid) == 0 or np.any(grid < 0):
        raise ValidationError(f"k grid {text!r} must be non-empty and non-negative")
    return grid


def bound_curve(exp: Experiment, ks: np.ndarray, c5=None) -> BoundCurve:
    b = None if exp.sampler.full_batch else int(exp.sampler.batch)
    inputs = bound_inputs(exp.target, exp.mixing, exp.sampler.eta, batch=b, init_scale=exp.sampler.init_scale)
    if exp.sampler.algorithm == "de-sghmc":
        return sghmc_w2_bound(sghmc_bound_inputs(inputs, exp.sampler.gamma, c5), ks)
    if exp.sampler.algorithm != "de-sgld":
        raise ValidationError("bounds are defined for de-sgld and de-sghmc only")
    return sgld_w2_bound(inputs, ks)


def bounds_csv(curve: BoundCurve) -> str:
    names = list(curve.terms)
    out = [",".join(["k", "avg_bound", "per_agent_bound"] + names)]
    for j, k in enumerate(curve.ks):
        vals = [fmt(curve.average[j]), fmt(curve.per_agent[j])] + [fmt(curve.terms[n][j]) for n in names]
        out.append(",".join([str(int(k))] + vals))
    return "\n".join(out) + "\n"


def bounds(cfg: dict, out: Path, k_grid: str | None = None, traces_dir: Path | None = None) -> Path:
    """Write the W2 bound curve (with term breakdown) for a config."""
    exp = build_experiment(cfg, strict=True)
    preset_ks = cfg["outputs"].get("bounds_k")
    if not k_grid and preset_ks:
        ks = np.array(preset_ks, dtype=np.int64)
    else:
        ks = parse_k_grid(k_grid, exp.sampler.n_iter, exp.sampler.stride)
    c5 = exp.config["sampler"].get("c5")
    if exp.sampler.algorithm == "de-sghmc" and c5 is None:
        if traces_dir is None:
            raise ValidationError("de-sghmc bounds need sampler.c5 or --traces from a run with recorded momenta")
        c5 = estimate_c5(_read_momenta(Path(traces_dir)))
    curve = bound_curve(exp, ks, c5)
    out = Path(out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "bounds.csv"
    out.write_text(bounds_csv(curve))
    out.with_suffix(".json").write_text(
        json.dumps({"label": curve.label, "algorithm": exp.sampler.algorithm, "spectrum": exp.mixing.spectrum_dict()}, sort_keys=True) + "\n"
    )
    return out


def _read_momenta(traces_dir: Path) -> TraceSet:
    manifest, traces = read_traces(traces_dir)
    files = sorted((traces_dir / "traces").glob("momentum_*.csv"))
    if len(files) != traces.n_replicas:
        raise IntegrityError("c5 estimation needs momentum traces for every replica")
    traces.v = np.stack([read_trace_csv(f)[1] for f in files])
    return traces


def dataset_prepare(csv_path: Path, schema: str, test_fraction: float, n_agents: int, seed: int, out: Path, standardize: bool = True) -> dict:
    """Normalize a CSV and persist it with a partition manifest."""
    if schema in datasets.SCHEMAS:
        sch = datasets.SCHEMAS[schema]
    else:
        p = Path(schema)
        if not p.is_file():
            raise ValidationError(f"schema must be one of {sorted(datasets.SCHEMAS)} or a JSON file")
        sch = datasets.CsvSchema.from_dict(json.loads(p.read_text()))
    ds = datasets.load_csv(csv_path, sch)
    if standardize:
        ds = datasets.standardize(ds)
    part = datasets.split_and_partition(ds.n, test_fraction, n_agents, RngStream(seed, PARTITION_STREAM))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    datasets.write_dataset_csv(out / "dataset.csv", ds)
    meta = {
        "source": str(Path(csv_path).name),
        "schema": sch.to_dict(),
        "seed": seed,
        "rows_read": ds.rows_read,
        "rejected": ds.rejected,
        "normalization": ds.normalization.to_dict() if ds.normalization else None,
        "shard_sizes": part.shard_sizes(),
        "train_size": int(len(part.train)),
        "test_size": int(len(part.test)),
    }
    part = datasets.Partition(part.n_agents, part.shards, part.train, part.test, {**part.meta, **meta})
    part.save(out / "partition.json")
    return meta
