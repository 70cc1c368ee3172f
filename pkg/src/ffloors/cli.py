"""Command-line front end.

Every command writes its outputs atomically and records a ``manifest.json``
(input/output SHA-256 digests plus the resolved configuration); ``ffloors
verify`` recomputes those digests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from itertools import combinations
from pathlib import Path

from . import __version__
from .annotations import (AnnotationError, filter_fformations, lifetime_frames,
                          parse_fformations_csv, parse_speaking_csv,
                          serialize_fformations_csv, serialize_speaking_csv)
from .floors import (AggregateRow, aggregate_by_cardinality, aggregate_to_csv,
                     observations_to_csv, parse_observations_csv, sweep)
from .glm import (DesignMatrix, GlmError, build_design, fit_poisson_irls, fit_report,
                  posthoc_pairwise, posthoc_report)
from .sim import ScenarioError, parse_scenario, simulate
from .turns import BETWEEN, GAP, KINDS, WITHIN, classify_transitions, overlap_stats, segment_turns

log = logging.getLogger("ffloors")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class CommandError(Exception):
    pass


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_manifest(path: Path, command: str, inputs: list[Path], config: dict,
                   outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    return write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def verify_manifest(path: Path) -> list[str]:
    """Paths whose current digest differs from the manifest (or that vanished)."""
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    bad = []
    for section in ("inputs", "outputs"):
        for p, digest in manifest[section].items():
            if not Path(p).exists() or sha256(Path(p)) != digest:
                bad.append(p)
    return bad


def _read(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc}") from None


def _load_corpus(speaking: Path, fformations: Path, rate_hz: int):
    matrix = parse_speaking_csv(_read(speaking), rate_hz, name=str(speaking))
    ffs = parse_fformations_csv(_read(fformations), name=str(fformations))
    return matrix, ffs


def cmd_floors(args) -> int:
    matrix, ffs = _load_corpus(args.speaking, args.fformations, args.rate_hz)
    kept, dropped = filter_fformations(ffs, matrix, args.min_cardinality)
    for ff, reason in dropped:
        log.info("dropped %s: %s", ff.id, reason)
    if not kept:
        raise CommandError("no F-formations left after filtering")
    obs = sweep(kept, matrix, args.d_min_s, args.d_max_s, args.step_s)
    agg = aggregate_by_cardinality(obs)
    out = Path(args.out_dir)
    outputs = [
        write_atomic(out / "observations.csv", observations_to_csv(obs)),
        write_atomic(out / "fig3_means.csv", aggregate_to_csv(agg, ("cardinality", "d_s", "mean_y"))),
        write_atomic(out / "fig5_counts.csv", aggregate_to_csv(agg, ("cardinality", "d_s", "n"))),
    ]
    config = {"d_min_s": args.d_min_s, "d_max_s": args.d_max_s, "step_s": args.step_s,
              "min_cardinality": args.min_cardinality, "rate_hz": args.rate_hz,
              "kept": [ff.id for ff in kept],
              "dropped": {ff.id: reason for ff, reason in dropped}}
    write_manifest(out / "manifest.json", "floors", [Path(args.speaking), Path(args.fformations)],
                   config, outputs)
    print(f"{len(kept)} F-formations kept, {len(dropped)} dropped, {len(obs)} observations")
    return EXIT_OK


def cmd_fit(args) -> int:
    obs = parse_observations_csv(_read(args.observations), name=str(args.observations))
    if not obs:
        raise CommandError("observation file is empty")
    if args.intercept_only:
        design = DesignMatrix.intercept_only([o.y for o in obs])
    else:
        design = build_design(obs)
    fit = fit_poisson_irls(design, tol=args.tol, max_iter=args.max_iter)
    out = write_atomic(args.out, fit_report(fit))
    write_manifest(Path(str(out) + ".manifest.json"), "fit", [Path(args.observations)],
                   {"intercept_only": args.intercept_only, "tol": args.tol,
                    "max_iter": args.max_iter}, [out])
    sys.stdout.write(fit_report(fit))
    if not fit.converged:
        print(f"error: IRLS did not converge in {args.max_iter} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_posthoc(args) -> int:
    obs = parse_observations_csv(_read(args.observations), name=str(args.observations))
    cards = sorted({o.cardinality for o in obs})
    if len(cards) < 2:
        raise CommandError("post-hoc comparisons need at least two cardinalities")
    table = posthoc_pairwise(obs, list(combinations(cards, 2)), args.alpha,
                             skip_insufficient=True, tol=args.tol, max_iter=args.max_iter)
    text = posthoc_report(table)
    out = write_atomic(args.out, text)
    write_manifest(Path(str(out) + ".manifest.json"), "posthoc", [Path(args.observations)],
                   {"alpha": args.alpha, "pairs": [list(r.pair) for r in table.rows]}, [out])
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    scenario = parse_scenario(_read(args.scenario))
    matrix, ff, truth = simulate(scenario)
    out = Path(args.out_dir)
    gt = io.StringIO()
    w = csv.writer(gt, lineterminator="\n")
    w.writerow(["participant", "floor"])
    for pid in matrix.participants:
        w.writerow([pid, truth.floor_of[pid]])
    turns = io.StringIO()
    w = csv.writer(turns, lineterminator="\n")
    w.writerow(["floor", "participant", "start_s", "end_s"])
    for f, floor_turns in enumerate(truth.turns):
        for t in floor_turns:
            w.writerow([f, t.participant, repr(t.start_s), repr(t.end_s)])
    outputs = [
        write_atomic(out / "speaking.csv", serialize_speaking_csv(matrix)),
        write_atomic(out / "fformations.csv", serialize_fformations_csv([ff])),
        write_atomic(out / "ground_truth.csv", gt.getvalue()),
        write_atomic(out / "turns.csv", turns.getvalue()),
    ]
    write_manifest(out / "manifest.json", "synth", [Path(args.scenario)],
                   {"n_floors": truth.n_floors, "seed": scenario.seed}, outputs)
    print(f"{len(matrix.participants)} participants, {truth.n_floors} floors, "
          f"{matrix.n_samples} samples")
    return EXIT_OK


OVERLAP_FIELDS = ["fformation_id", "participant_a", "participant_b"] + [
    f"{prefix}_{kind}" for kind in ("gap", "between", "within")
    for prefix in ("n", "mean_s", "median_s", "mode_s")]


def overlap_rows(matrix, ffs, min_silence_ms: float = 180.0) -> list[list]:
    rows = []
    for ff in ffs:
        a, b = lifetime_frames(ff, matrix)
        origin = matrix.origin_s + a / matrix.rate_hz
        turns = {pid: segment_turns(matrix.track(pid)[a:b], matrix.rate_hz, min_silence_ms,
                                    participant=pid, origin_s=origin)
                 for pid in ff.sorted_members()}
        for pa, pb in combinations(ff.sorted_members(), 2):
            summary = overlap_stats(classify_transitions(turns[pa], turns[pb]))
            row = [ff.id, pa, pb]
            for kind in (GAP, BETWEEN, WITHIN):
                s = summary[kind]
                row.append(s.count)
                row.extend("" if v is None else repr(round(v, 9))
                           for v in (s.mean_s, s.median_s, s.mode_s))
            rows.append(row)
    return rows


def cmd_overlaps(args) -> int:
    matrix, ffs = _load_corpus(args.speaking, args.fformations, args.rate_hz)
    kept, _ = filter_fformations(ffs, matrix, args.min_cardinality)
    out_text = io.StringIO()
    w = csv.writer(out_text, lineterminator="\n")
    w.writerow(OVERLAP_FIELDS)
    w.writerows(overlap_rows(matrix, kept, args.min_silence_ms))
    out = write_atomic(args.out, out_text.getvalue())
    write_manifest(Path(str(out) + ".manifest.json"), "overlaps",
                   [Path(args.speaking), Path(args.fformations)],
                   {"min_silence_ms": args.min_silence_ms,
                    "min_cardinality": args.min_cardinality, "rate_hz": args.rate_hz}, [out])
    return EXIT_OK


def cmd_verify(args) -> int:
    bad = verify_manifest(args.manifest)
    for p in bad:
        print(f"digest mismatch: {p}", file=sys.stderr)
    if bad:
        return EXIT_ERROR
    print("all digests match")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffloors", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def corpus(p):
        p.add_argument("speaking", type=Path, help="speaking-status CSV")
        p.add_argument("fformations", type=Path, help="F-formation CSV")
        p.add_argument("--rate-hz", type=int, default=20)

    def irls(p):
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--max-iter", type=int, default=50)

    p = sub.add_parser("floors", help="sweep window durations and write floor tables")
    corpus(p)
    p.add_argument("--d-min-s", type=int, default=1)
    p.add_argument("--d-max-s", type=int, default=20)
    p.add_argument("--step-s", type=float, default=1.0)
    p.add_argument("--min-cardinality", type=int, default=4)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_floors)

    p = sub.add_parser("fit", help="Poisson GLM on an observations CSV")
    p.add_argument("observations", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--intercept-only", action="store_true")
    irls(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("posthoc", help="pairwise cardinality fits with Bonferroni correction")
    p.add_argument("observations", type=Path)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--out", type=Path, required=True)
    irls(p)
    p.set_defaults(func=cmd_posthoc)

    p = sub.add_parser("synth", help="simulate a multi-floor F-formation")
    p.add_argument("scenario", type=Path, help="[scenario] key/value file")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("overlaps", help="gap/overlap statistics per member pair")
    corpus(p)
    p.add_argument("--min-silence-ms", type=float, default=180.0)
    p.add_argument("--min-cardinality", type=int, default=2)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_overlaps)

    p = sub.add_parser("verify", help="recompute the digests recorded in a manifest")
    p.add_argument("manifest", type=Path)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AnnotationError, GlmError, ScenarioError, CommandError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
