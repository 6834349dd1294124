"""Command-line surface: config parsing, data ingestion, seeded runs.

Subcommands: ``filaments detect``, ``orbit fit``, ``tails fit``,
``tails validate``, ``tails map`` and ``replay <manifest>``.  Every run
writes its outputs plus a ``manifest.json`` recording the resolved
configuration, the seed, input digests and library versions; replaying a
manifest reproduces the result files byte for byte (the manifest itself
carries volatile timestamps and is excluded from that guarantee).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .energy import AnnealingSchedule
from .errors import PatternMCError, RejectedInputError
from .filaments import BisousConfig, Box, GalaxyCatalog, detect
from .heavytail import (
    FitConfig,
    PerturbationSample,
    TailMixture,
    TestConfig,
    build_coverage_map,
    fit_mixture,
    percentile_coverage_test,
)
from .orbit import Observation, PriorBox, fit_orbit, propagate
from .samplers import MoveMix

__all__ = [
    "RunConfig",
    "parse_catalog",
    "parse_observations",
    "load_perturbations",
    "run",
    "main",
]

PIPELINES = ("filaments", "orbit", "tails-fit", "tails-validate", "tails-map")


@dataclass
class RunConfig:
    """Resolved description of one pipeline run."""

    pipeline: str
    inputs: dict = field(default_factory=dict)
    out_dir: str = "."
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise RejectedInputError(f"unknown pipeline: {self.pipeline!r}")
        self.seed = int(self.seed)
        for name, path in self.inputs.items():
            if not Path(path).is_file():
                raise RejectedInputError(f"input {name!r} does not exist: {path}")


def _read_rows(path, expected_header: list[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RejectedInputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != expected_header:
            raise RejectedInputError(
                f"{path}: expected header {','.join(expected_header)!r}, got {','.join(header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(expected_header):
                raise RejectedInputError(f"{path}: line {lineno}: expected {len(expected_header)} fields")
            try:
                parsed = [float(cell) for cell in row]
            except ValueError:
                raise RejectedInputError(f"{path}: line {lineno}: non-numeric field") from None
            if any(not np.isfinite(v) for v in parsed):
                raise RejectedInputError(f"{path}: line {lineno}: non-finite value")
            rows.append((lineno, parsed))
    return rows


def parse_catalog(path, window: Box | None = None, pad_fraction: float = 0.01) -> GalaxyCatalog:
    """Read an ``x,y,z`` CSV catalog.

    The window defaults to the bounding box padded by 1% of each extent;
    when an explicit window is given, out-of-window points are an error.
    Malformed rows are reported with their line numbers.
    """
    rows = _read_rows(path, ["x", "y", "z"])
    if not rows:
        raise RejectedInputError(f"{path}: catalog has a header but no points")
    positions = np.array([vals for _, vals in rows], float)
    if window is None:
        window = Box.bounding(positions, pad_fraction)
    else:
        bad = np.nonzero(~window.contains(positions))[0]
        if bad.size:
            lineno = rows[bad[0]][0]
            raise RejectedInputError(f"{path}: line {lineno}: point outside the explicit window")
    return GalaxyCatalog(positions, window)


def parse_observations(path) -> list[Observation]:
    """Read an ``epoch_rjd,dx_km,dy_km,sigma_km`` CSV of relative positions."""
    rows = _read_rows(path, ["epoch_rjd", "dx_km", "dy_km", "sigma_km"])
    if not rows:
        raise RejectedInputError(f"{path}: no observations")
    observations = []
    last_epoch = None
    for lineno, (epoch, dx, dy, sigma) in rows:
        if sigma <= 0:
            raise RejectedInputError(f"{path}: line {lineno}: sigma must be positive")
        if last_epoch is not None and epoch <= last_epoch:
            raise RejectedInputError(f"{path}: line {lineno}: epochs must be strictly increasing")
        last_epoch = epoch
        observations.append(Observation(epoch, dx, dy, sigma))
    return observations


def load_perturbations(path) -> list[PerturbationSample]:
    """Read an ``i_deg,w_deg,value`` CSV grouped into per-cell samples."""
    rows = _read_rows(path, ["i_deg", "w_deg", "value"])
    if not rows:
        raise RejectedInputError(f"{path}: no perturbation values")
    cells: dict[tuple[float, float], list[float]] = {}
    for _, (i_deg, w_deg, value) in rows:
        cells.setdefault((i_deg, w_deg), []).append(value)
    return [
        PerturbationSample(i_deg, w_deg, np.asarray(vals))
        for (i_deg, w_deg), vals in sorted(cells.items())
    ]


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_json(path, obj):
    Path(path).write_text(_json_text(obj))


def _write_csv(path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, config: RunConfig, outputs: list[str], wall_time: float):
    manifest = {
        "pipeline": config.pipeline,
        "seed": config.seed,
        "params": config.params,
        "inputs": {
            name: {"path": str(Path(p).resolve()), "sha256": _sha256(p)}
            for name, p in config.inputs.items()
        },
        "outputs": sorted(outputs),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "patternmc": __version__,
        },
        "wall_time_s": wall_time,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    _write_json(out_dir / "manifest.json", manifest)


def _schedule_from_params(params: dict, default: AnnealingSchedule | None = None):
    if "schedule" not in params:
        return default
    return AnnealingSchedule(**params["schedule"])


def _mix_from_params(params: dict):
    if "move_mix" not in params:
        return None
    mix = params["move_mix"]
    if isinstance(mix, dict):
        return MoveMix(**mix)
    return MoveMix(*mix)


def _run_filaments(config: RunConfig, out_dir: Path) -> list[str]:
    params = config.params
    window = Box.from_dict(params["window"]) if "window" in params else None
    catalog = parse_catalog(config.inputs["catalog"], window=window)
    bisous_params = dict(params.get("bisous", {}))
    bisous_params.setdefault("window", catalog.window.as_dict())
    bisous = BisousConfig.from_dict(bisous_params)
    result = detect(
        catalog,
        bisous,
        schedule=_schedule_from_params(params),
        mix=_mix_from_params(params),
        seed=config.seed,
        record_every=int(params.get("record_every", 50)),
    )
    segment_rows = [
        list(seg.center) + [seg.theta, seg.phi, seg.half_length, seg.radius]
        for seg in result.configuration
    ]
    _write_csv(
        out_dir / "segments.csv",
        ["x", "y", "z", "theta", "phi", "half_length", "radius"],
        segment_rows,
    )
    _write_json(
        out_dir / "result.json",
        {
            "stats": result.stats.as_dict(),
            "n_segments": len(result.configuration),
            "segments": segment_rows,
            "bisous": bisous.as_dict(),
            "seed": config.seed,
        },
    )
    result.record.save(
        out_dir / "chain.csv",
        out_dir / "chain_meta.json",
        extra_meta={"pipeline": "filaments", "seed": config.seed},
    )
    return ["segments.csv", "result.json", "chain.csv", "chain_meta.json"]


def _run_orbit(config: RunConfig, out_dir: Path) -> list[str]:
    params = config.params
    observations = parse_observations(config.inputs["observations"])
    prior = PriorBox.from_dict(params["prior"])
    scales = params.get("proposal_scales")
    if isinstance(scales, dict):
        from .orbit import ORBIT_PARAM_NAMES

        scales = [scales[n] for n in ORBIT_PARAM_NAMES]
    initial = params.get("initial")
    if initial is not None:
        from .orbit import KeplerOrbit

        initial = KeplerOrbit(**initial)
    result = fit_orbit(
        observations,
        prior,
        n_steps=int(params.get("steps", 100000)),
        burn_in=int(params.get("burn_in", int(params.get("steps", 100000)) // 4)),
        proposal_scales=scales,
        seed=config.seed,
        initial=initial,
        record_every=int(params.get("record_every", 10)),
    )
    _write_json(
        out_dir / "summary.json",
        {
            "summary": result.summary.as_dict(),
            "acceptance_rate": result.acceptance_rate,
            "seed": config.seed,
        },
    )
    mean_orbit = {
        name: result.summary[name]["mean"] for name in result.summary.stats
    }
    from .orbit import KeplerOrbit as _KO

    mean_ko = _KO(**mean_orbit)
    epochs = np.array([o.epoch_rjd for o in observations])
    dx, dy = propagate(mean_ko, epochs)
    _write_csv(
        out_dir / "predicted.csv",
        ["epoch_rjd", "dx_km", "dy_km"],
        [[float(e), float(x), float(y)] for e, x, y in zip(epochs, dx, dy)],
    )
    result.record.save(
        out_dir / "chain.csv",
        out_dir / "chain_meta.json",
        extra_meta={"pipeline": "orbit", "seed": config.seed},
    )
    return ["summary.json", "predicted.csv", "chain.csv", "chain_meta.json"]


def _pooled_values(samples: list[PerturbationSample], params: dict) -> np.ndarray:
    if "i_deg" in params and "w_deg" in params:
        for s in samples:
            if s.inclination_deg == params["i_deg"] and s.perihelion_argument_deg == params["w_deg"]:
                return np.asarray(s.values)
        raise RejectedInputError("requested (i_deg, w_deg) cell not present in the data")
    return np.concatenate([s.values for s in samples])


def _run_tails_fit(config: RunConfig, out_dir: Path) -> list[str]:
    params = config.params
    values = _pooled_values(load_perturbations(config.inputs["data"]), params)
    fit_cfg = FitConfig(**params.get("fit", {}))
    mixture = fit_mixture(
        values,
        q_lo=fit_cfg.q_lo,
        q_hi=fit_cfg.q_hi,
        regime=fit_cfg.regime,
        hill_count=fit_cfg.hill_count,
    )
    _write_json(
        out_dir / "mixture.json",
        {"mixture": mixture.as_dict(), "regime": mixture.regime,
         "n_values": int(values.size), "seed": config.seed},
    )
    return ["mixture.json"]


def _run_tails_validate(config: RunConfig, out_dir: Path) -> list[str]:
    params = config.params
    values = _pooled_values(load_perturbations(config.inputs["data"]), params)
    with open(config.inputs["mixture"]) as fh:
        mixture = TailMixture.from_dict(json.load(fh)["mixture"])
    test_cfg = TestConfig(**{k: tuple(v) if k == "percentiles" else v
                             for k, v in params.get("test", {}).items()})
    coverage = percentile_coverage_test(
        values,
        mixture,
        n_rep=test_cfg.n_rep,
        percentiles=test_cfg.percentiles,
        ci_level=test_cfg.ci_level,
        rng=config.seed,
    )
    _write_json(
        out_dir / "coverage.json",
        {"coverage": coverage, "n_rep": test_cfg.n_rep,
         "ci_level": test_cfg.ci_level, "seed": config.seed},
    )
    return ["coverage.json"]


def _run_tails_map(config: RunConfig, out_dir: Path) -> list[str]:
    params = config.params
    samples = load_perturbations(config.inputs["data"])
    fit_cfg = FitConfig(**params.get("fit", {}))
    test_cfg = TestConfig(**{k: tuple(v) if k == "percentiles" else v
                             for k, v in params.get("test", {}).items()})
    mixtures: dict = {}
    cmap = build_coverage_map(samples, fit_cfg, test_cfg, seed=config.seed, mixtures_out=mixtures)
    _write_csv(
        out_dir / "map.csv",
        ["i_deg", "w_deg", "coverage", "regime"],
        cmap.as_rows(),
    )
    _write_json(
        out_dir / "cells.json",
        {
            "cells": {
                f"{i!r},{w!r}": mix.as_dict() for (i, w), mix in sorted(mixtures.items())
            },
            "failures": [
                {"i_deg": f.inclination_deg, "w_deg": f.perihelion_argument_deg,
                 "reason": f.reason}
                for f in cmap.failures
            ],
            "seed": config.seed,
        },
    )
    return ["map.csv", "cells.json"]


_RUNNERS = {
    "filaments": _run_filaments,
    "orbit": _run_orbit,
    "tails-fit": _run_tails_fit,
    "tails-validate": _run_tails_validate,
    "tails-map": _run_tails_map,
}


def run(config: RunConfig) -> int:
    """Execute one pipeline run; returns the process exit status.

    On success the output directory holds the pipeline artifacts plus
    ``manifest.json``; on failure a machine-readable ``error.json`` is
    written and a nonzero status returned.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        outputs = _RUNNERS[config.pipeline](config, out_dir)
    except PatternMCError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc),
                   "pipeline": config.pipeline}
        _write_json(out_dir / "error.json", payload)
        sys.stderr.write(_json_text(payload))
        return 2
    _write_manifest(out_dir, config, outputs, time.perf_counter() - start)
    return 0


def _load_params(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patternmc")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fil = sub.add_parser("filaments", help="segment-pattern detection")
    fil_sub = p_fil.add_subparsers(dest="action", required=True)
    p_det = fil_sub.add_parser("detect", help="detect filaments in a catalog")
    p_det.add_argument("--catalog", required=True, help="x,y,z CSV of points")
    p_det.add_argument("--config", help="JSON with bisous/{schedule,move_mix,window} blocks")
    p_det.add_argument("--seed", type=int, default=0)
    p_det.add_argument("--out", default="patternmc-out")

    p_orb = sub.add_parser("orbit", help="relative-orbit determination")
    orb_sub = p_orb.add_subparsers(dest="action", required=True)
    p_fit = orb_sub.add_parser("fit", help="sample the orbit posterior")
    p_fit.add_argument("--obs", required=True, help="epoch_rjd,dx_km,dy_km,sigma_km CSV")
    p_fit.add_argument("--prior", required=True, help="JSON with a 'prior' box (plus options)")
    p_fit.add_argument("--steps", type=int, default=100000)
    p_fit.add_argument("--burn-in", type=int, default=None)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", default="patternmc-out")

    p_tails = sub.add_parser("tails", help="heavy-tail mixture fitting")
    tails_sub = p_tails.add_subparsers(dest="action", required=True)
    for name, need_mixture in (("fit", False), ("validate", True), ("map", False)):
        p = tails_sub.add_parser(name)
        p.add_argument("--data", required=True, help="i_deg,w_deg,value CSV")
        if need_mixture:
            p.add_argument("--mixture", required=True, help="mixture.json from 'tails fit'")
        p.add_argument("--config", help="JSON with fit/test blocks")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="patternmc-out")

    p_replay = sub.add_parser("replay", help="re-run a recorded manifest")
    p_replay.add_argument("manifest")
    p_replay.add_argument("--out", default=None, help="defaults to the manifest's directory")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.command == "filaments":
        return RunConfig(
            pipeline="filaments",
            inputs={"catalog": args.catalog},
            out_dir=args.out,
            seed=args.seed,
            params=_load_params(args.config),
        )
    if args.command == "orbit":
        params = _load_params(args.prior)
        if "prior" not in params:
            raise RejectedInputError("prior JSON must contain a 'prior' block")
        params["steps"] = args.steps
        if args.burn_in is not None:
            params["burn_in"] = args.burn_in
        params.setdefault("burn_in", args.steps // 4)
        return RunConfig(
            pipeline="orbit",
            inputs={"observations": args.obs},
            out_dir=args.out,
            seed=args.seed,
            params=params,
        )
    if args.command == "tails":
        pipeline = f"tails-{args.action}"
        inputs = {"data": args.data}
        if args.action == "validate":
            inputs["mixture"] = args.mixture
        return RunConfig(
            pipeline=pipeline,
            inputs=inputs,
            out_dir=args.out,
            seed=args.seed,
            params=_load_params(args.config),
        )
    raise RejectedInputError(f"unhandled command {args.command!r}")


def _replay(manifest_path: str, out_dir: str | None) -> int:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    inputs = {}
    for name, entry in manifest["inputs"].items():
        path = entry["path"]
        if not Path(path).is_file():
            raise RejectedInputError(f"replay input missing: {path}")
        digest = _sha256(path)
        if digest != entry["sha256"]:
            raise RejectedInputError(f"replay input changed since the manifest: {path}")
        inputs[name] = path
    config = RunConfig(
        pipeline=manifest["pipeline"],
        inputs=inputs,
        out_dir=out_dir if out_dir is not None else str(Path(manifest_path).parent),
        seed=manifest["seed"],
        params=manifest["params"],
    )
    return run(config)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return _replay(args.manifest, args.out)
        return run(_config_from_args(args))
    except PatternMCError as exc:
        sys.stderr.write(_json_text({"error": type(exc).__name__, "message": str(exc)}))
        return 2


if __name__ == "__main__":
    sys.exit(main())
