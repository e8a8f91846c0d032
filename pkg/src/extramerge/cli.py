"""Command-line entry point: ``extramerge <command> [options]``.

Every command accepts ``--config FILE`` with ``key=value`` lines (keys are
option names with ``-`` or ``_``); explicit flags override file values. All
effective settings are echoed into the ``#`` header of the CSV output.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint_store import DEFAULT_CHUNK_LEN, CheckpointManifest, read_checkpoint, write_checkpoint
from .csvio import render_csv
from .errors import DataError, ExtraMergeError, NumericalDegeneracyError
from .extra_merge import DEFAULT_ALPHA, DEFAULT_MAX_STEPS, GRID, ITERATIVE, LineSearchConfig, run_extra_merge
from .merge_engine import MergeSchedule, merge_latest, sliding_pma
from .river_valley_sim import (
    HIGH_NOISE_T,
    ValleyOracle,
    ValleySpec,
    default_spec,
    drift_for_snr,
    high_noise_spec,
    interpolation_experiment,
    measure_snr,
    pca_alignment_experiment,
    rank1_experiment,
    simulate,
    theorem1_grid,
    write_trajectory_checkpoints,
)
from .subspace_pca import analyze_subspace, interpolation_scan
from .toy_trainer import LossOracleHandle, ToyTaskConfig, train

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _read_kv(path) -> dict:
    kv = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        kv[key.strip().replace("-", "_")] = value.strip()
    return kv


def load_oracle(text: str):
    """``toy:<run-dir>`` or ``valley:<spec-file>``."""
    kind, sep, target = text.partition(":")
    if not sep or not target:
        raise UsageError(f"--oracle must be toy:<run-dir> or valley:<spec-file>, got {text!r}")
    if kind == "toy":
        return LossOracleHandle.from_run_dir(target)
    if kind == "valley":
        return ValleyOracle(ValleySpec.load(target))
    raise UsageError(f"unknown oracle kind {kind!r}")


def load_spec(text: str | None) -> ValleySpec:
    if text in (None, "default"):
        return default_spec()
    if text == "high-noise":
        return high_noise_spec()
    return ValleySpec.load(text)


def resolve_checkpoint(text: str):
    """``MANIFEST:STEP``, or a checkpoint file listed in a ``manifest.tsv`` beside it."""
    head, sep, tail = text.rpartition(":")
    if sep and tail.lstrip("-").isdigit():
        return CheckpointManifest.load(head).record_at(int(tail))
    path = Path(text)
    manifest_path = path.parent / "manifest.tsv"
    if not manifest_path.exists():
        raise DataError(f"no manifest.tsv next to {path}; use MANIFEST:STEP")
    for rec in CheckpointManifest.load(manifest_path):
        if Path(rec.path).resolve() == path.resolve():
            return rec
    raise DataError(f"{path} is not listed in {manifest_path}")


def _emit(args, columns, rows, extra=None):
    meta = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "out")}
    if args.config:
        meta["config_file"] = args.config
    meta.update(extra or {})
    text = render_csv(columns, rows, meta)
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------- commands


def cmd_merge(args):
    manifest = CheckpointManifest.load(args.manifest)
    if args.weights == "ema":
        if args.gamma is None:
            raise UsageError("--weights ema needs --gamma")
        schedule = MergeSchedule.ema(args.tau, args.n, args.gamma)
    else:
        schedule = MergeSchedule.uniform(args.tau, args.n)
    merged = merge_latest(manifest, args.tau, schedule.weights, args.chunk_len, args.end_step)
    if args.merged_out:
        dest = Path(args.merged_out)
        dest.parent.mkdir(parents=True, exist_ok=True)
        rec = write_checkpoint(merged.params, merged.anchor_step, dest)
        CheckpointManifest([rec]).save(dest.with_name(dest.name + ".manifest.tsv"))
    steps = [merged.anchor_step - i * args.tau for i in range(args.n)]
    rows = [(i, s, float(w)) for i, (s, w) in enumerate(zip(steps, schedule.weights))]
    _emit(args, ["i", "step", "weight"], rows, {"anchor_step": merged.anchor_step})


def cmd_pca(args):
    # --n 1 analyses the raw checkpoints themselves
    manifest = CheckpointManifest.load(args.manifest)
    merged = sliding_pma(manifest, args.tau, args.n, args.K, chunk_len=args.chunk_len,
                         end_step=args.end_step)
    sub = analyze_subspace([m.params for m in merged], not args.no_orient, args.chunk_len)
    rows = [(s, m.anchor_step, float(z), float(e), float(r))
            for s, (m, z, e, r) in enumerate(zip(merged, sub.projections, sub.eigvals, sub.evr))]
    _emit(args, ["index", "anchor_step", "projection", "eigval", "evr"], rows, {"r1": repr(sub.r1)})


def cmd_extramerge(args):
    config = LineSearchConfig(alpha=args.alpha, max_steps=args.max_steps, mode=args.mode,
                              grid=tuple(args.grid) if args.grid else None)
    oracle = load_oracle(args.oracle)
    manifest = CheckpointManifest.load(args.manifest)
    res, sub = run_extra_merge(manifest, args.tau, args.n, args.K, config, oracle,
                               args.chunk_len, args.start_step, args.end_step)
    if args.best_out:
        dest = Path(args.best_out)
        dest.parent.mkdir(parents=True, exist_ok=True)
        rec = write_checkpoint(res.best_params, manifest[-1].step, dest)
        CheckpointManifest([rec]).save(dest.with_name(dest.name + ".manifest.tsv"))
    rows = [(k, float(res.offsets[k]), float(loss)) for k, loss in res.candidates]
    _emit(args, ["k", "offset", "loss"], rows, {
        "best_k": res.best_k, "best_loss": repr(res.best_loss),
        "anchor_loss": repr(res.anchor_loss), "terminated_by": res.terminated_by,
        "r1": repr(sub.r1),
    })


def cmd_scan(args):
    a = resolve_checkpoint(args.ckpt_a)
    b = resolve_checkpoint(args.ckpt_b)
    prof = interpolation_scan(read_checkpoint(a), read_checkpoint(b), args.grid,
                              load_oracle(args.oracle))
    rows = [(float(al), float(lo)) for al, lo in zip(prof.alphas, prof.losses)]
    _emit(args, ["alpha", "loss"], rows, {"classification": prof.classification})


def _sim_thm1(args, spec):
    rows = theorem1_grid(spec, args.N, args.T, args.seeds, args.seed)
    cols = ["N", "T", "empirical", "stderr", "exact", "bound", "epsilon", "z_score"]
    return cols, [[r[c] for c in cols] for r in rows]


def _sim_thm2(args, spec):
    N, T, K = args.N[-1], args.T[-1], args.K[-1]
    cols = ["rho_target", "drift", "snr", "snr_theory", "sin_angle", "gap",
            "dk_holds_fraction", "sigma_sig2", "sigma_noise2", "noise_trace"]
    rows = []
    for rho in args.rho:
        sp = spec.with_drift(drift_for_snr(spec, rho, N, T, K))
        st = pca_alignment_experiment(sp, N, T, K, args.seeds, args.seed)
        rows.append([rho, sp.drift, st.snr, st.snr_theory, st.sin_angle, st.gap,
                     st.dk_holds_fraction, st.sigma_sig2, st.sigma_noise2, st.noise_trace])
    return cols, rows


def _sim_snr(args, spec):
    cols = ["N", "T", "K", "signal", "noise", "noise_se", "rho", "rho_theory"]
    rows = []
    for N in args.N:
        for T in args.T:
            for K in args.K:
                r = measure_snr(spec, N, T, K, args.seeds, args.seed)
                rows.append([r[c] for c in cols])
    return cols, rows


def _sim_rectification(args, spec):
    N, K = args.N[-1], args.K[-1]
    r = rank1_experiment(spec, N, K, args.T[-1], args.seeds, args.seed)
    noisy = spec if args.spec not in (None, "default") else high_noise_spec()
    T_noisy = args.T[-1] if args.spec not in (None, "default") else HIGH_NOISE_T
    ie = interpolation_experiment(noisy, N, T_noisy, args.seeds, seed=args.seed)
    rows = [
        ("r1_merged_mean", float(np.mean(r["r1_merged"]))),
        ("r1_raw_mean", float(np.mean(r["r1_raw"]))),
        ("merged_monotone_fraction", float(np.mean(r["mono_merged"]))),
        ("raw_monotone_fraction", float(np.mean(r["mono_raw"]))),
        ("raw_pair_convex_basin_fraction", ie["raw_convex_fraction"]),
        ("merged_pair_monotone_fraction", ie["merged_monotone_fraction"]),
    ]
    return ["metric", "value"], rows


_EXPERIMENTS = {"thm1": _sim_thm1, "thm2": _sim_thm2, "snr": _sim_snr,
                "rectification": _sim_rectification}


def cmd_simulate(args):
    spec = load_spec(args.spec)
    if args.checkpoints_dir:
        traj = simulate(spec, args.steps, args.seed, args.T[-1])
        write_trajectory_checkpoints(spec, traj, args.checkpoints_dir)
        spec.save(Path(args.checkpoints_dir) / "spec.txt")
    if args.experiment is None:
        if not args.checkpoints_dir:
            raise UsageError("simulate needs --experiment and/or --checkpoints-dir")
        return
    cols, rows = _EXPERIMENTS[args.experiment](args, spec)
    _emit(args, cols, rows)


def cmd_train_toy(args):
    values = {f.name: getattr(args, f.name) for f in fields(ToyTaskConfig)}
    config = ToyTaskConfig(**values)
    result = train(config, args.out_dir)
    _emit(args, ["step", "train_loss", "val_loss"], result.curves,
          {"manifest": str(Path(args.out_dir) / "manifest.tsv")})


# --------------------------------------------------------------------- parser


def _common(p, out=True):
    p.add_argument("--config", help="key=value file; flags override its values")
    if out:
        p.add_argument("--out", help="CSV output path (default: stdout)")


def _window(p, n_default=8):
    p.add_argument("--tau", type=int, required=True, help="checkpoint interval in steps")
    p.add_argument("--n", type=int, default=n_default, help="merge window length")
    p.add_argument("--end-step", type=int, help="newest step considered")
    p.add_argument("--chunk-len", type=int, default=DEFAULT_CHUNK_LEN)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extramerge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge the newest checkpoints of a manifest")
    p.add_argument("manifest")
    _window(p)
    p.add_argument("--weights", choices=["uniform", "ema"], default="uniform")
    p.add_argument("--gamma", type=float, help="EMA decay, required for --weights ema")
    p.add_argument("--merged-out", help="write the merged checkpoint here")
    _common(p)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("pca", aliases=["analyze"], help="EVR and projections of K sliding merges")
    p.add_argument("manifest")
    _window(p)
    p.add_argument("--K", type=int, default=4, help="number of states analysed")
    p.add_argument("--no-orient", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("extramerge", aliases=["extrapolate"], help="merge, PCA and line search")
    p.add_argument("manifest")
    _window(p)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument("--mode", choices=[ITERATIVE, GRID], default=ITERATIVE)
    p.add_argument("--grid", type=_floats, help="grid-mode multipliers, comma separated")
    p.add_argument("--start-step", type=int)
    p.add_argument("--oracle", required=True, help="toy:<run-dir> or valley:<spec-file>")
    p.add_argument("--best-out", help="write the winning parameters here")
    _common(p)
    p.set_defaults(func=cmd_extramerge)

    p = sub.add_parser("scan", help="loss along the segment between two checkpoints")
    p.add_argument("ckpt_a", help="MANIFEST:STEP or checkpoint file")
    p.add_argument("ckpt_b")
    p.add_argument("--grid", type=int, default=21, help="number of grid points")
    p.add_argument("--oracle", required=True)
    _common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("simulate", help="river-valley Monte-Carlo experiments")
    p.add_argument("--spec", help="spec file, 'default' or 'high-noise'")
    p.add_argument("--experiment", choices=sorted(_EXPERIMENTS))
    p.add_argument("--seeds", type=int, default=1000, help="number of replicate streams")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--N", type=_ints, default=[1, 2, 4, 8, 16])
    p.add_argument("--T", type=_ints, default=[1, 5, 25])
    p.add_argument("--K", type=_ints, default=[4])
    p.add_argument("--rho", type=_floats, default=[2.0, 4.0, 8.0, 16.0])
    p.add_argument("--checkpoints-dir", help="also write one trajectory as checkpoints")
    p.add_argument("--steps", type=int, default=1000, help="trajectory length for --checkpoints-dir")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-toy", help="train a small model and write its checkpoints")
    p.add_argument("--out-dir", required=True)
    for f in fields(ToyTaskConfig):
        default = f.default
        p.add_argument("--" + f.name.replace("_", "-"), type=type(default), default=default)
    _common(p)
    p.set_defaults(func=cmd_train_toy)
    return parser


def _apply_config(parser, argv):
    """Turn ``--config`` file entries into subparser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    kv = _read_kv(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in subparsers.choices), None)
    if command is None:
        return
    sp = subparsers.choices[command]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in kv.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes")
        else:
            defaults[key] = action.type(value) if action.type else value
        action.required = False
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ValueError, OSError) as exc:
        print(f"extramerge: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        print(f"extramerge: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"extramerge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalDegeneracyError as exc:
        print(f"extramerge: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, KeyError) as exc:
        print(f"extramerge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, ExtraMergeError) as exc:
        print(f"extramerge: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
