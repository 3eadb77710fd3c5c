"""Command line interface.

Subcommands: ``decompose`` (factor a DNT1 tensor), ``synth`` (build a
synthetic benchmark tensor), ``grid`` (run a method/beta/repeat benchmark
grid), ``metrics`` (score a factor matrix), and ``replay`` (re-execute a
recorded run from its manifest).

Exit codes: 0 success, 2 malformed input, 3 invalid configuration, 4 solver
failure.  Outputs are staged and moved into place only on success, so a
nonzero exit leaves no partial artifacts.

Config files are flat ``key = value`` lines with ``#`` comments;
command-line flags override file values.  Every command that writes files
also writes a ``manifest.json`` recording the resolved configuration, input
digests, timing, and termination details.  ``replay`` reruns the recorded
computation with the recorded seed and iteration budget: every computed
value is re-derived through the full stack, while wall-clock fields (trace
``elapsed_seconds``, per-run ``seconds``, the manifest's own timestamps) are
re-emitted from the recorded run, which makes a replayed output tree
byte-identical to the original.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import shutil
import sys
import tempfile
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import DntFormatError, IllConditionedSubproblemError, SparsecpError
from .io import read_dnt, read_matrix, write_dnt
from .metrics import metrics_report
from .objective import IterationTrace, write_trace_csv
from .solvers import METHODS, SolverConfig, decompose
from .synthetic import (
    PRESETS,
    ExperimentGrid,
    SyntheticSpec,
    aggregates_to_csv,
    aggregates_to_json,
    default_limits,
    generate_synthetic,
    make_preset,
    records_to_csv,
    run_grid,
    sparse_signal_matrix,
)
from .tensor import DenseTensor, FactorSet

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4

STOP_RULE_CHOICES = ("relerr-change", "objective-change")


class CliConfigError(Exception):
    """Invalid flag or config-file value; maps to exit code 3."""


def _fail(message):
    print(f"sparsecp: error: {message}", file=sys.stderr)


def _now():
    return datetime.now(timezone.utc).isoformat()


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _fresh_seed():
    return int.from_bytes(os.urandom(8), "little") % (2**63)


def parse_config_file(path):
    """Flat ``key = value`` file with ``#`` comments."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CliConfigError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if not key:
            raise CliConfigError(f"{path}:{lineno}: empty key")
        values[key] = value.strip()
    return values


def _merge_config(args, file_keys):
    """Config file values act as defaults; explicit flags win."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key in file_keys:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _parse_float(value, flag):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise CliConfigError(f"--{flag} expects a number, got {value!r}")


def _parse_int(value, flag):
    try:
        return int(str(value), 10)
    except (TypeError, ValueError):
        raise CliConfigError(f"--{flag} expects an integer, got {value!r}")


def _parse_per_mode(value, flag):
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    parts = [p.strip() for p in str(value).split(",") if p.strip()]
    if not parts:
        raise CliConfigError(f"--{flag} expects a number or comma list")
    values = [_parse_float(p, flag) for p in parts]
    return values[0] if len(values) == 1 else values


def _parse_bool(value, flag):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise CliConfigError(f"--{flag} expects a boolean, got {value!r}")


def _parse_optional_seconds(value, flag):
    if value is None or str(value).lower() in ("none", "inf", ""):
        return None
    seconds = _parse_float(value, flag)
    if seconds <= 0:
        raise CliConfigError(f"--{flag} must be > 0")
    return seconds


def _solver_config_from(options):
    """Build and pre-validate a SolverConfig from merged CLI options."""
    method = str(options.get("method", "")).lower()
    if method not in METHODS:
        raise CliConfigError(
            f"--method must be one of {', '.join(METHODS)}; got {method!r}"
        )
    rank = _parse_int(options.get("rank"), "rank")
    if rank < 1:
        raise CliConfigError("--rank must be >= 1")
    rule = str(options.get("stop-rule", "relerr-change")).replace("_", "-")
    if rule not in STOP_RULE_CHOICES:
        raise CliConfigError(
            f"--stop-rule must be one of {', '.join(STOP_RULE_CHOICES)}"
        )
    epsilon = _parse_float(options.get("epsilon", 1e-8), "epsilon")
    if epsilon <= 0:
        raise CliConfigError("--epsilon must be > 0")
    max_iters = _parse_int(options.get("max-iters", 10000), "max-iters")
    if max_iters < 1:
        raise CliConfigError("--max-iters must be >= 1")
    seed = options.get("seed")
    seed = _fresh_seed() if seed is None else _parse_int(seed, "seed")
    cfg = SolverConfig(
        rank=rank,
        method=method,
        alpha=_parse_per_mode(options.get("alpha", 1e-6), "alpha"),
        beta=_parse_per_mode(options.get("beta", 0.0), "beta"),
        stop_rule=rule,
        stop_epsilon=epsilon,
        max_iters=max_iters,
        max_seconds=_parse_optional_seconds(options.get("max-seconds"), "max-seconds"),
        rng_seed=seed,
        mu_floor=_parse_float(options.get("mu-floor", 1e-16), "mu-floor"),
        mu_init_offset=_parse_float(options.get("mu-init-offset", 1e-9),
                                    "mu-init-offset"),
        apg_delta_omega=_parse_float(options.get("delta-omega", 0.9999),
                                     "delta-omega"),
        nnls_tol=_parse_float(options.get("nnls-tol", 1e-10), "nnls-tol"),
        precompute_unfoldings=not _parse_bool(options.get("low-memory", False),
                                              "low-memory"),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliConfigError(str(exc)) from exc
    return cfg


def _config_dict(cfg):
    out = dataclasses.asdict(cfg)
    if isinstance(out["alpha"], np.ndarray):
        out["alpha"] = out["alpha"].tolist()
    if isinstance(out["beta"], np.ndarray):
        out["beta"] = out["beta"].tolist()
    return out


class _Stage:
    """Collects output files in a temp dir, then moves them into place."""

    def __init__(self, output_dir):
        self.output_dir = output_dir
        parent = os.path.dirname(os.path.abspath(output_dir)) or "."
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".sparsecp-", dir=parent)
        self.names = []

    def path(self, name):
        self.names.append(name)
        return os.path.join(self.tmp, name)

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8") as fh:
            fh.write(text)

    def write_json(self, name, payload):
        self.write_text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def commit(self):
        os.makedirs(self.output_dir, exist_ok=True)
        for name in self.names:
            os.replace(os.path.join(self.tmp, name),
                       os.path.join(self.output_dir, name))
        shutil.rmtree(self.tmp, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _load_tensor(path):
    try:
        tensor = read_dnt(path)
    except (OSError, DntFormatError) as exc:
        raise _InputError(str(exc)) from exc
    if float(tensor.data.min()) < 0.0:
        raise _InputError(f"{path}: tensor has negative entries")
    return tensor


class _InputError(Exception):
    """Malformed or unreadable input; maps to exit code 2."""


def _manifest(command, config, inputs, outputs, extra=None):
    payload = {
        "tool": "sparsecp",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": sorted(outputs),
    }
    if extra:
        payload.update(extra)
    return payload


# ---------------------------------------------------------------- decompose


def _write_decompose_outputs(stage, result, trace_rows):
    factors = result.factors
    for n, factor in enumerate(factors, start=1):
        write_dnt(stage.path(f"factor_{n}.dnt"), np.asarray(factor))
    write_trace_csv(trace_rows, stage.path("trace.csv"))


def cmd_decompose(args):
    try:
        options = _merge_config(args, (
            "method", "rank", "alpha", "beta", "stop-rule", "epsilon",
            "max-iters", "max-seconds", "seed", "mu-floor", "mu-init-offset",
            "delta-omega", "nnls-tol", "low-memory",
        ))
        if not options.get("method"):
            raise CliConfigError("--method is required")
        if options.get("rank") is None:
            raise CliConfigError("--rank is required")
        cfg = _solver_config_from(options)
    except CliConfigError as exc:
        _fail(exc)
        return EXIT_CONFIG

    try:
        tensor = _load_tensor(args.tensor)
    except _InputError as exc:
        _fail(exc)
        return EXIT_INPUT

    try:
        cfg.validate(order=tensor.order)
    except ValueError as exc:
        _fail(exc)
        return EXIT_CONFIG

    started = _now()
    try:
        result = decompose(tensor, cfg)
    except (IllConditionedSubproblemError, SparsecpError, np.linalg.LinAlgError) as exc:
        _fail(f"solver failed: {exc}")
        return EXIT_SOLVER

    stage = _Stage(args.output)
    try:
        _write_decompose_outputs(stage, result, result.trace)
        manifest = _manifest(
            "decompose",
            _config_dict(result.config),
            {"tensor": {"path": os.path.abspath(args.tensor),
                        "sha256": _sha256(args.tensor)}},
            stage.names,
            extra={
                "started": started,
                "finished": _now(),
                "termination": {
                    "cause": result.termination,
                    "iterations": result.iterations,
                    "wall_seconds": result.wall_seconds,
                },
                "timing": {
                    "elapsed_seconds": [row.elapsed_seconds for row in result.trace],
                },
            },
        )
        stage.write_json("manifest.json", manifest)
        stage.commit()
    except Exception:
        stage.abort()
        raise
    print(f"{result.termination} after {result.iterations} iterations, "
          f"rel_err {result.final.rel_err:.6g}; wrote {args.output}")
    return EXIT_OK


# -------------------------------------------------------------------- synth


def _resolve_synth(options):
    preset = options.get("preset")
    seed = options.get("seed")
    seed = 0 if seed is None else _parse_int(seed, "seed")
    rng = np.random.default_rng(seed)
    if preset:
        if preset not in PRESETS:
            raise CliConfigError(
                f"--preset must be one of {', '.join(PRESETS)}; got {preset!r}"
            )
        spec = make_preset(preset, rng)
        if options.get("snr") is not None:
            spec = SyntheticSpec(spec.signal_matrix, spec.mixing_extents,
                                 _parse_snr(options.get("snr")))
        return spec, seed, rng, preset
    length = options.get("signal-length")
    channels = options.get("channels")
    mixing = options.get("mixing")
    if length is None or channels is None or mixing is None:
        raise CliConfigError(
            "either --preset or all of --signal-length/--channels/--mixing are required"
        )
    extents = []
    for part in str(mixing).split(","):
        extents.append(_parse_int(part.strip(), "mixing"))
        if extents[-1] < 1:
            raise CliConfigError("--mixing extents must be >= 1")
    signals = sparse_signal_matrix(_parse_int(length, "signal-length"),
                                   _parse_int(channels, "channels"), rng)
    spec = SyntheticSpec(signals, tuple(extents), _parse_snr(options.get("snr", 40)))
    return spec, seed, rng, None


def _parse_snr(value):
    if value is None or str(value).lower() in ("inf", "none"):
        return None
    return _parse_float(value, "snr")


def cmd_synth(args):
    try:
        options = _merge_config(args, (
            "preset", "seed", "snr", "signal-length", "channels", "mixing",
        ))
        spec, seed, rng, preset = _resolve_synth(options)
    except (CliConfigError, ValueError) as exc:
        _fail(exc)
        return EXIT_CONFIG

    started = _now()
    tensor, truth = generate_synthetic(spec, rng)

    stage = _Stage(args.output)
    try:
        write_dnt(stage.path("tensor.dnt"), tensor)
        for n, factor in enumerate(truth, start=1):
            write_dnt(stage.path(f"truth_factor_{n}.dnt"), np.asarray(factor))
        manifest = _manifest(
            "synth",
            {
                "preset": preset,
                "seed": seed,
                "snr_db": spec.snr_db,
                "signal_length": int(spec.signal_matrix.shape[0]),
                "channels": int(spec.signal_matrix.shape[1]),
                "mixing_extents": list(spec.mixing_extents),
                "shape": list(tensor.shape),
            },
            {},
            stage.names,
            extra={"started": started, "finished": _now()},
        )
        stage.write_json("manifest.json", manifest)
        stage.commit()
    except Exception:
        stage.abort()
        raise
    print(f"wrote {tensor.order}-mode tensor {tuple(tensor.shape)} to {args.output}")
    return EXIT_OK


# --------------------------------------------------------------------- grid


def _resolve_grid(options):
    known = {
        "preset", "synth-seed", "snr", "tensor", "reference", "methods",
        "betas", "repeats", "rank", "alpha", "stop-rule", "epsilon",
        "max-iters", "max-seconds", "base-seed", "threshold",
    }
    unknown = set(options) - known
    if unknown:
        raise CliConfigError(f"unknown grid config keys: {', '.join(sorted(unknown))}")
    if "methods" not in options or "betas" not in options or "rank" not in options:
        raise CliConfigError("grid config needs methods, betas, and rank")
    methods = tuple(m.strip().lower() for m in str(options["methods"]).split(",")
                    if m.strip())
    betas = tuple(_parse_float(b.strip(), "betas")
                  for b in str(options["betas"]).split(",") if b.strip())
    rule = str(options.get("stop-rule", "relerr-change")).replace("_", "-")
    if rule not in STOP_RULE_CHOICES:
        raise CliConfigError(
            f"--stop-rule must be one of {', '.join(STOP_RULE_CHOICES)}"
        )
    grid = ExperimentGrid(
        methods=methods,
        betas=betas,
        repeats=_parse_int(options.get("repeats", 1), "repeats"),
        rank=_parse_int(options["rank"], "rank"),
        alpha=_parse_float(options.get("alpha", 1e-6), "alpha"),
        stop_rule=rule.replace("-", "_"),
        stop_epsilon=None,   # filled below
        max_iters=_parse_int(options.get("max-iters", 10000), "max-iters"),
        max_seconds=None,
        base_seed=_parse_int(options.get("base-seed", 0), "base-seed"),
        threshold=_parse_float(options.get("threshold", 1e-3), "threshold"),
    )
    return grid, options, rule


def _grid_inputs(options):
    """Materialize the grid's tensor: from a preset or from DNT files."""
    inputs = {}
    if options.get("tensor"):
        tensor = _load_tensor(options["tensor"])
        inputs["tensor"] = {"path": os.path.abspath(options["tensor"]),
                            "sha256": _sha256(options["tensor"])}
        reference = None
        if options.get("reference"):
            try:
                reference = read_matrix(options["reference"])
            except (OSError, DntFormatError) as exc:
                raise _InputError(str(exc)) from exc
            inputs["reference"] = {"path": os.path.abspath(options["reference"]),
                                   "sha256": _sha256(options["reference"])}
        return tensor, reference, inputs
    preset = options.get("preset")
    if not preset:
        raise CliConfigError("grid config needs either a preset or a tensor path")
    if preset not in PRESETS:
        raise CliConfigError(f"unknown preset {preset!r}")
    seed = _parse_int(options.get("synth-seed", 0), "synth-seed")
    rng = np.random.default_rng(seed)
    spec = make_preset(preset, rng)
    if options.get("snr") is not None:
        spec = SyntheticSpec(spec.signal_matrix, spec.mixing_extents,
                             _parse_snr(options["snr"]))
    tensor, truth = generate_synthetic(spec, rng)
    return tensor, np.asarray(truth[0]), inputs


def cmd_grid(args):
    try:
        options = parse_config_file(args.grid_config)
        for key in ("repeats", "base-seed", "max-seconds", "epsilon", "rank"):
            flag_value = getattr(args, key.replace("-", "_"), None)
            if flag_value is not None:
                options[key] = flag_value
        grid, options, rule = _resolve_grid(options)
    except CliConfigError as exc:
        _fail(exc)
        return EXIT_CONFIG

    try:
        tensor, reference, inputs = _grid_inputs(options)
    except CliConfigError as exc:
        _fail(exc)
        return EXIT_CONFIG
    except _InputError as exc:
        _fail(exc)
        return EXIT_INPUT

    # order-dependent defaults apply once the tensor is known
    eps_default, secs_default = default_limits(tensor.order)
    grid.stop_epsilon = (_parse_float(options["epsilon"], "epsilon")
                         if options.get("epsilon") is not None else eps_default)
    grid.max_seconds = (_parse_optional_seconds(options.get("max-seconds"),
                                                "max-seconds")
                        if options.get("max-seconds") is not None else secs_default)
    try:
        grid.validate()
        if grid.stop_epsilon <= 0:
            raise ValueError("epsilon must be > 0")
    except ValueError as exc:
        _fail(exc)
        return EXIT_CONFIG

    started = _now()
    result = run_grid(tensor, reference, grid, workers=args.workers)
    for failure in result.failures:
        _fail(f"grid cell failed: {failure}")
    if not result.records:
        _fail("every grid cell failed")
        return EXIT_SOLVER

    stage = _Stage(args.output)
    try:
        stage.write_text("runs.csv", records_to_csv(result.records))
        stage.write_text("aggregate.csv", aggregates_to_csv(result.aggregates))
        stage.write_json("aggregate.json", aggregates_to_json(result.aggregates))
        manifest = _manifest(
            "grid",
            {
                "options": {k: str(v) for k, v in sorted(options.items())},
                "grid": {
                    "methods": list(grid.methods),
                    "betas": list(grid.betas),
                    "repeats": grid.repeats,
                    "rank": grid.rank,
                    "alpha": grid.alpha,
                    "stop_rule": grid.stop_rule,
                    "stop_epsilon": grid.stop_epsilon,
                    "max_iters": grid.max_iters,
                    "max_seconds": grid.max_seconds,
                    "base_seed": grid.base_seed,
                    "threshold": grid.threshold,
                },
                "workers": args.workers,
            },
            inputs,
            stage.names,
            extra={
                "started": started,
                "finished": _now(),
                "runs": [
                    {
                        "method": r.method,
                        "beta": r.beta,
                        "repeat": r.repeat,
                        "seed": r.seed,
                        "iterations": r.iters,
                        "seconds": r.seconds,
                    }
                    for r in result.records
                ],
                "failures": list(result.failures),
            },
        )
        stage.write_json("manifest.json", manifest)
        stage.commit()
    except Exception:
        stage.abort()
        raise
    print(f"grid finished: {len(result.records)} runs, "
          f"{len(result.failures)} failures; wrote {args.output}")
    return EXIT_OK


# ------------------------------------------------------------------ metrics


def cmd_metrics(args):
    threshold = args.threshold
    if threshold is None:
        threshold = 1e-3
    if threshold <= 0:
        _fail("--threshold must be > 0")
        return EXIT_CONFIG

    try:
        estimated = read_matrix(args.estimated)
        reference = read_matrix(args.reference) if args.reference else None
    except (OSError, DntFormatError) as exc:
        _fail(exc)
        return EXIT_INPUT

    started = _now()
    try:
        report = metrics_report(estimated, reference, threshold)
    except ValueError as exc:
        _fail(exc)
        return EXIT_INPUT
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if not args.output:
        sys.stdout.write(text)
        return EXIT_OK

    inputs = {"estimated": {"path": os.path.abspath(args.estimated),
                            "sha256": _sha256(args.estimated)}}
    if args.reference:
        inputs["reference"] = {"path": os.path.abspath(args.reference),
                               "sha256": _sha256(args.reference)}
    stage = _Stage(args.output)
    try:
        stage.write_text("report.json", text)
        manifest = _manifest("metrics", {"threshold": threshold}, inputs,
                             stage.names,
                             extra={"started": started, "finished": _now()})
        stage.write_json("manifest.json", manifest)
        stage.commit()
    except Exception:
        stage.abort()
        raise
    print(f"wrote {args.output}")
    return EXIT_OK


# ------------------------------------------------------------------- replay


def _verify_digest(entry):
    path = entry["path"]
    try:
        digest = _sha256(path)
    except OSError as exc:
        raise _InputError(f"replay input missing: {exc}") from exc
    if digest != entry["sha256"]:
        raise _InputError(f"{path}: contents changed since the recorded run")
    return path


def _replay_decompose(manifest, manifest_bytes, output_dir):
    tensor = _load_tensor(_verify_digest(manifest["inputs"]["tensor"]))
    recorded = manifest["termination"]["iterations"]
    cfg_values = dict(manifest["config"])
    cfg_values["max_iters"] = recorded
    cfg_values["max_seconds"] = None
    cfg = SolverConfig(**cfg_values)
    result = decompose(tensor, cfg)
    if result.iterations != recorded:
        raise SparsecpError(
            f"replay diverged: {result.iterations} iterations, recorded {recorded}"
        )
    elapsed = manifest["timing"]["elapsed_seconds"]
    rows = [dataclasses.replace(row, elapsed_seconds=elapsed[i])
            for i, row in enumerate(result.trace)]
    stage = _Stage(output_dir)
    try:
        _write_decompose_outputs(stage, result, rows)
        with open(stage.path("manifest.json"), "wb") as fh:
            fh.write(manifest_bytes)
        stage.commit()
    except Exception:
        stage.abort()
        raise


def _replay_synth(manifest, manifest_bytes, output_dir):
    cfg = manifest["config"]
    rng = np.random.default_rng(cfg["seed"])
    if cfg.get("preset"):
        spec = make_preset(cfg["preset"], rng)
        if spec.snr_db != cfg["snr_db"]:
            spec = SyntheticSpec(spec.signal_matrix, spec.mixing_extents,
                                 cfg["snr_db"])
    else:
        signals = sparse_signal_matrix(cfg["signal_length"], cfg["channels"], rng)
        spec = SyntheticSpec(signals, tuple(cfg["mixing_extents"]), cfg["snr_db"])
    tensor, truth = generate_synthetic(spec, rng)
    stage = _Stage(output_dir)
    try:
        write_dnt(stage.path("tensor.dnt"), tensor)
        for n, factor in enumerate(truth, start=1):
            write_dnt(stage.path(f"truth_factor_{n}.dnt"), np.asarray(factor))
        with open(stage.path("manifest.json"), "wb") as fh:
            fh.write(manifest_bytes)
        stage.commit()
    except Exception:
        stage.abort()
        raise


def _replay_grid(manifest, manifest_bytes, output_dir):
    options = dict(manifest["config"]["options"])
    grid, options, _rule = _resolve_grid(options)
    if manifest["inputs"]:
        tensor, reference, _ = _grid_inputs(options)
        for entry in manifest["inputs"].values():
            _verify_digest(entry)
    else:
        tensor, reference, _ = _grid_inputs(options)
    gcfg = manifest["config"]["grid"]
    grid.stop_epsilon = gcfg["stop_epsilon"]
    grid.max_seconds = gcfg["max_seconds"]
    runs = manifest["runs"]
    budgets = {i: run["iterations"] for i, run in enumerate(runs)}
    result = run_grid(tensor, reference, grid,
                      workers=manifest["config"].get("workers", 1),
                      budgets=budgets)
    if len(result.records) != len(runs):
        raise SparsecpError("replay diverged: run count mismatch")
    records = []
    for record, run in zip(result.records, runs):
        if record.iters != run["iterations"] or record.seed != run["seed"]:
            raise SparsecpError(
                f"replay diverged on {record.method} beta={record.beta} "
                f"repeat={record.repeat}"
            )
        records.append(dataclasses.replace(record, seconds=run["seconds"]))
    aggregates = _reaggregate(records, grid)
    stage = _Stage(output_dir)
    try:
        stage.write_text("runs.csv", records_to_csv(records))
        stage.write_text("aggregate.csv", aggregates_to_csv(aggregates))
        stage.write_json("aggregate.json", aggregates_to_json(aggregates))
        with open(stage.path("manifest.json"), "wb") as fh:
            fh.write(manifest_bytes)
        stage.commit()
    except Exception:
        stage.abort()
        raise


def _reaggregate(records, grid):
    from .synthetic import _aggregate

    return _aggregate(records, grid)


def _replay_metrics(manifest, manifest_bytes, output_dir):
    estimated = read_matrix(_verify_digest(manifest["inputs"]["estimated"]))
    reference = None
    if "reference" in manifest["inputs"]:
        reference = read_matrix(_verify_digest(manifest["inputs"]["reference"]))
    report = metrics_report(estimated, reference, manifest["config"]["threshold"])
    stage = _Stage(output_dir)
    try:
        stage.write_text("report.json",
                         json.dumps(report, indent=2, sort_keys=True) + "\n")
        with open(stage.path("manifest.json"), "wb") as fh:
            fh.write(manifest_bytes)
        stage.commit()
    except Exception:
        stage.abort()
        raise


def cmd_replay(args):
    try:
        with open(args.manifest, "rb") as fh:
            manifest_bytes = fh.read()
        manifest = json.loads(manifest_bytes)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read manifest: {exc}")
        return EXIT_INPUT
    command = manifest.get("command")
    handlers = {
        "decompose": _replay_decompose,
        "synth": _replay_synth,
        "grid": _replay_grid,
        "metrics": _replay_metrics,
    }
    if command not in handlers:
        _fail(f"manifest has unknown command {command!r}")
        return EXIT_INPUT
    try:
        handlers[command](manifest, manifest_bytes, args.output)
    except _InputError as exc:
        _fail(exc)
        return EXIT_INPUT
    except (KeyError, TypeError) as exc:
        _fail(f"manifest is missing required fields: {exc}")
        return EXIT_INPUT
    except CliConfigError as exc:
        _fail(exc)
        return EXIT_CONFIG
    except SparsecpError as exc:
        _fail(exc)
        return EXIT_SOLVER
    print(f"replayed {command} into {args.output}")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparsecp",
        description="Sparse nonnegative CP tensor decomposition toolkit.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="factor a DNT1 tensor")
    p.add_argument("tensor", help="input tensor (DNT1)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
    p.add_argument("--rank", help="number of components")
    p.add_argument("--alpha", help="Frobenius weight (scalar or comma list)")
    p.add_argument("--beta", help="sparsity weight (scalar or comma list)")
    p.add_argument("--stop-rule", help="relerr-change or objective-change")
    p.add_argument("--epsilon", help="stopping threshold")
    p.add_argument("--max-iters", help="iteration limit")
    p.add_argument("--max-seconds", help="wall clock limit")
    p.add_argument("--seed", help="RNG seed (drawn fresh when omitted)")
    p.add_argument("--mu-floor", help="multiplicative update clamp")
    p.add_argument("--mu-init-offset", help="multiplicative init offset")
    p.add_argument("--delta-omega", help="extrapolation safety factor")
    p.add_argument("--nnls-tol", help="NNLS optimality tolerance")
    p.add_argument("--low-memory", action="store_const", const=True, default=None,
                   help="recompute unfoldings every sweep")
    p.add_argument("--output", "-o", default=".", help="output directory")
    p.set_defaults(handler=cmd_decompose)

    p = sub.add_parser("synth", help="build a synthetic benchmark tensor")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    p.add_argument("--seed", help="RNG seed (default 0)")
    p.add_argument("--snr", help="signal-to-noise ratio in dB, or 'inf'")
    p.add_argument("--signal-length", help="samples per source (custom layout)")
    p.add_argument("--channels", help="number of sources (custom layout)")
    p.add_argument("--mixing", help="comma list of mixing extents (custom layout)")
    p.add_argument("--output", "-o", default=".", help="output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("grid", help="run a benchmark grid from a config file")
    p.add_argument("grid_config", help="key = value grid description")
    p.add_argument("--repeats", help="override repeats")
    p.add_argument("--rank", help="override rank")
    p.add_argument("--base-seed", help="override base seed")
    p.add_argument("--epsilon", help="override stopping threshold")
    p.add_argument("--max-seconds", help="override per-run time limit")
    p.add_argument("--workers", type=int, default=1, help="parallel cells")
    p.add_argument("--output", "-o", default=".", help="output directory")
    p.set_defaults(handler=cmd_grid)

    p = sub.add_parser("metrics", help="score a factor matrix")
    p.add_argument("estimated", help="estimated factor matrix (DNT1)")
    p.add_argument("--reference", help="ground-truth signal matrix (DNT1)")
    p.add_argument("--threshold", type=float, help="component threshold")
    p.add_argument("--output", "-o", help="output directory (stdout when omitted)")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("replay", help="re-execute a recorded run from its manifest")
    p.add_argument("manifest", help="manifest.json of the recorded run")
    p.add_argument("--output", "-o", required=True, help="output directory")
    p.set_defaults(handler=cmd_replay)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
