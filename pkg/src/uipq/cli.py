"""Command-line entry point.

Every subcommand takes its options as flags or from a flat ``key = value``
file given with ``--config`` (flags win). All randomness derives from
``--seed`` through per-sample streams, so outputs do not depend on
``--workers``.

Exit codes: 0 success, 1 an invariant or statistical check failed,
2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import limits, sampling, schaeffer
from .sampling import NOMINAL_QUARTIC, HARMONIC_QUARTIC, RngStream, TruncationPolicy
from .trees import dumps_tree, loads_tree

SCRATCH_ENV = "UIPQ_SCRATCH"
CSV_COLUMNS = ["n", "r_or_t", "M", "estimate", "stderr", "target", "zscore"]


class ConfigError(ValueError):
    pass


class CheckFailed(RuntimeError):
    pass


# ---------------------------------------------------------------- config files

def read_config(path: str) -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines; returns key -> (value, line number)."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        out[key.replace("-", "_")] = (value, lineno)
    return out


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _positive(kind):
    def conv(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s}")
        return v

    conv.__name__ = kind.__name__
    return conv


# ---------------------------------------------------------------- output

def scratch_dir(out: Path) -> Path:
    env = os.environ.get(SCRATCH_ENV)
    return Path(env) if env else out


def write_atomic(path: Path, data: str) -> None:
    """Write via a temporary file and rename, so readers never see partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmpdir = scratch_dir(path.parent)
    tmpdir.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=tmpdir, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(data)
    try:
        os.replace(tmp, path)
    except OSError:
        # scratch on another filesystem: stage next to the target first
        fd2, tmp2 = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd2, "w", newline="") as fh, open(tmp) as src:
            fh.write(src.read())
        os.unlink(tmp)
        os.replace(tmp2, path)


def git_hash(text: str) -> str:
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def config_echo(args) -> dict:
    skip = {"func", "config", "out", "format"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = v
    return out


def emit(args, name: str, reports=None, payload: dict | None = None, checks: dict | None = None) -> None:
    out = Path(args.out)
    fmt = args.format
    config = config_echo(args)
    config_text = json.dumps(config, sort_keys=True)
    summary = {
        "command": name,
        "config": config,
        "config_hash": git_hash(config_text),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if reports is not None:
        body = reports_csv(reports)
        summary["csv_hash"] = git_hash(body)
        summary["reports"] = [
            {**r.row(), "name": r.name, "ratio": r.ratio, "runtime": r.runtime,
             "failures": r.failures, "extra": r.extra}
            for r in reports
        ]
        if fmt in ("csv", "both"):
            write_atomic(out / f"{name}.csv", body)
        sys.stdout.write(body)
    if payload is not None:
        summary.update(payload)
    if checks is not None:
        summary["checks"] = checks
    if fmt in ("json", "both") or reports is None:
        write_atomic(out / f"{name}.json", json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _fail_if(checks: dict) -> None:
    bad = [k for k, ok in checks.items() if not ok]
    if bad:
        raise CheckFailed("failed checks: " + ", ".join(bad))


# ---------------------------------------------------------------- commands

def _policy(args, r: int) -> TruncationPolicy:
    return TruncationPolicy(r, args.x_stop, args.window, args.epsilon, args.size_cap)


def cmd_sample(args) -> None:
    policy = _policy(args, args.r)
    sd = sampling.sample_uiwt(policy, RngStream(args.seed, args.stream))
    cert = sd.truncation
    trees = "".join(dumps_tree(t) for pair in zip(sd.left, sd.right) for t in pair)
    write_atomic(Path(args.out) / "subtrees.wlt", trees)
    payload = {
        "height": sd.height,
        "spine_labels": sd.spine_labels.tolist(),
        "left_sizes": [t.size for t in sd.left],
        "right_sizes": [t.size for t in sd.right],
        "certificate": {
            "target_radius": cert.target_radius, "x_stop": cert.x_stop, "window": cert.window,
            "residual_bound": cert.residual_bound, "within_budget": cert.within_budget,
        },
    }
    emit(args, "sample", payload=payload)
    print(f"height={sd.height} vertices={len(sd.spine_labels) + sum(t.size for t in sd.left + sd.right)}"
          f" residual_bound={cert.residual_bound:.3g}")


def cmd_build(args) -> None:
    if args.tree:
        theta = loads_tree(Path(args.tree).read_text())
        q = schaeffer.build_finite(theta)
        labels = theta.labels
        d = schaeffer.graph_distances(q)[1:]
        checks = {"faces_degree_4": bool(np.all(q.face_degrees == 4)),
                  "euler_2": q.euler_characteristic == 2,
                  "distance_equals_label": bool(np.array_equal(d, labels))}
    else:
        policy = _policy(args, args.r_build + 1)
        sd = sampling.sample_uiwt(policy, RngStream(args.seed, args.stream))
        q = schaeffer.build_truncated(sd, args.r_build)
        d = schaeffer.graph_distances(q)
        low = (d >= 0) & (q.vertex_labels <= args.r_build)
        low[0] = False
        checks = {"distance_equals_label": bool(np.array_equal(d[low], q.vertex_labels[low]))}
    write_atomic(Path(args.out) / "map.quad", schaeffer.dumps_map(q))
    payload = {"vertices": q.n_vertices, "edges": q.n_edges, "faces": q.n_faces,
               "canonical": schaeffer.canonical_hex(q) if q.n_half_edges <= 4096 else None}
    emit(args, "build", payload=payload, checks=checks)
    print(f"V={q.n_vertices} E={q.n_edges} F={q.n_faces} " + " ".join(f"{k}={v}" for k, v in checks.items()))
    _fail_if(checks)


def cmd_profile(args) -> None:
    policy = _policy(args, args.r)
    sd = sampling.sample_uiwt(policy, RngStream(args.seed, args.stream))
    prof = limits.profile_from_decomposition(sd, args.r)
    checks = {}
    if args.check:
        if args.r + 1 > 6:
            raise ConfigError("--check builds the map and is limited to r <= 5")
        strict = sampling.sample_uiwt(_policy(args, args.r + 1), RngStream(args.seed, args.stream))
        q = schaeffer.build_truncated(strict, args.r)
        bfs = limits.profile_from_map(q, args.r)
        tree_side = limits.profile_from_decomposition(strict, args.r)
        checks["profile_matches_bfs"] = bool(np.array_equal(bfs.counts, tree_side.counts))
    body = "k,count\n" + "".join(f"{k},{c}\n" for k, c in enumerate(prof.counts.tolist()))
    if args.format in ("csv", "both"):
        write_atomic(Path(args.out) / "profile.csv", body)
    sys.stdout.write(body)
    emit(args, "profile", payload={"counts": prof.counts.tolist(), "height": sd.height}, checks=checks)
    _fail_if(checks)


def cmd_experiment(args) -> None:
    if args.kind == "profile":
        reports = []
        for n in args.n:
            reports += limits.mc_mean_profile(n, args.M, args.r_grid, args.seed, args.workers, args.method)
        trends = {str(r): limits.trend([x for x in reports if x.r_or_t == r]) for r in args.r_grid if r > 0}
        emit(args, "experiment_profile", reports, payload={"trend": trends})
    elif args.kind == "ball":
        reports = limits.mc_ball_volume(args.n, args.M, args.seed, args.workers, args.method)
        emit(args, "experiment_ball", reports, payload={"trend": limits.trend(reports)})
    else:
        reports = []
        for n in args.n:
            reports += limits.spine_moment_check(n, args.M, args.t_grid, args.seed)
        emit(args, "experiment_spine", reports)


def kernel_table(lmax: int = 100) -> list[dict]:
    rows = []
    for l in range(1, lmax + 1):
        nominal = sampling.kernel_row(l, NOMINAL_QUARTIC)
        harmonic = sampling.kernel_row(l, HARMONIC_QUARTIC)
        rows.append({
            "l": l,
            "raw_row_sum": str(nominal.raw_row_sum),
            "normalized_sum": str(sum(nominal.normalized())),
            "harmonic_raw_row_sum": str(harmonic.raw_row_sum),
        })
    return rows


def cmd_validate(args) -> None:
    rows = kernel_table(100)
    far = sampling.kernel_row(1000, NOMINAL_QUARTIC)
    consist = limits.consistency_checks(args.M, args.seed)
    checks = {
        "normalized_rows_sum_to_1": all(r["normalized_sum"] == "1" for r in rows),
        "harmonic_rows_sum_to_1": all(r["harmonic_raw_row_sum"] == "1" for r in rows),
        "raw_row_sum_l1000_within_1e-3": abs(float(far.raw_row_sum) - 1) < 1e-3,
        "size_law_within_4se": all(abs(r["zscore"]) <= 4 for r in consist["size_law"]),
        "acceptance_within_4se": all(abs(r["zscore"]) <= 4 for r in consist["acceptance"]),
    }
    for r in rows[:5]:
        print(f"l={r['l']:3d} raw_row_sum={r['raw_row_sum']}")
    print(f"l=1000 raw_row_sum-1={float(far.raw_row_sum) - 1:.3e}")
    for r in consist["acceptance"]:
        print(f"acceptance l={r['l']} exact={r['exact']} estimate={r['estimate']:.5f} z={r['zscore']:+.2f}")
    for r in consist["size_law"]:
        print(f"size n={r['n']} exact={r['exact']} estimate={r['estimate']:.5f} z={r['zscore']:+.2f}")
    for k, v in checks.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    emit(args, "validate", payload={"kernel_rows": rows, **consist}, checks=checks)
    _fail_if(checks)


def cmd_enumerate(args) -> None:
    trees = sampling.enumerate_well_labeled(args.n)
    print(f"n={args.n} trees={len(trees)} expected={sampling.count_well_labeled(args.n)}")
    checks = {"count": len(trees) == sampling.count_well_labeled(args.n)}
    if args.bijection_check and args.n >= 1:
        encs = set()
        ok = True
        for t in trees:
            q = schaeffer.build_finite(t)
            ok &= bool(np.all(q.face_degrees == 4)) and q.n_faces == args.n
            ok &= q.n_vertices == args.n + 2 and q.n_edges == 2 * args.n and q.euler_characteristic == 2
            ok &= bool(np.array_equal(schaeffer.graph_distances(q)[1:], t.labels))
            encs.add(schaeffer.canonical_encoding(q))
        checks["invariants"] = ok
        checks["injective"] = len(encs) == len(trees)
        print(f"distinct maps={len(encs)} invariants={'ok' if ok else 'FAILED'}")
    write_atomic(Path(args.out) / f"trees_n{args.n}.wlt", "".join(dumps_tree(t) for t in trees))
    emit(args, "enumerate", payload={"count": len(trees)}, checks=checks)
    _fail_if(checks)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=_positive(int), default=1)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=["csv", "json", "both"], default="both")

    pol = argparse.ArgumentParser(add_help=False)
    pol.add_argument("--x-stop", type=_positive(int), default=None)
    pol.add_argument("--window", type=_positive(int), default=None)
    pol.add_argument("--epsilon", type=_positive(float), default=1e-3)
    pol.add_argument("--size-cap", type=_positive(int), default=sampling.DEFAULT_SIZE_CAP)
    pol.add_argument("--stream", type=int, default=0)

    p = argparse.ArgumentParser(prog="uipq", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common, pol], help="draw one truncated infinite tree")
    s.add_argument("--r", type=_positive(int), default=2)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("build", parents=[common, pol], help="build a map from a tree file or a fresh sample")
    s.add_argument("--tree", help="WLT file with a finite well-labeled tree")
    s.add_argument("--r-build", type=_positive(int), default=2)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("profile", parents=[common, pol], help="label profile of one sample")
    s.add_argument("--r", type=_positive(int), default=5)
    s.add_argument("--check", action="store_true", help="compare with BFS on the built map")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("experiment", parents=[common], help="Monte Carlo experiments")
    s.add_argument("kind", choices=["profile", "ball", "spine"])
    s.add_argument("--n", type=_int_list, default=None, help="comma-separated sizes")
    s.add_argument("--M", type=_positive(int), default=1000)
    s.add_argument("--r", dest="r_grid", type=_float_list, default=[0.5, 1.0])
    s.add_argument("--t", dest="t_grid", type=_float_list, default=[0.5, 1.0, 2.0])
    s.add_argument("--method", choices=["conditional", "full"], default="conditional")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("validate", parents=[common], help="kernel, acceptance and size-law tables")
    s.add_argument("--M", type=_positive(int), default=10**5)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("enumerate", parents=[common], help="list all well-labeled trees with n edges")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--bijection-check", action="store_true")
    s.set_defaults(func=cmd_enumerate)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = read_config(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd = next((x for x in argv if x in sub.choices), None)
    if cmd is None:
        return
    target = sub.choices[cmd]
    dests = {a.dest: a for a in target._actions}
    values = {}
    for key, (value, lineno) in cfg.items():
        if key == "command":
            continue
        # config keys may use flag names (r, t) as well as destinations
        dest = {"r": "r_grid", "t": "t_grid"}.get(key, key) if cmd == "experiment" else key
        action = dests.get(dest)
        if action is None:
            raise ConfigError(f"{known.config}:{lineno}: unknown key '{key}' for '{cmd}'")
        if action.nargs == 0:
            values[dest] = value.lower() in ("1", "true", "yes", "on")
            continue
        try:
            values[dest] = action.type(value) if action.type else value
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise ConfigError(f"{known.config}:{lineno}: bad value for '{key}': {e}") from None
        if action.choices is not None and values[dest] not in action.choices:
            raise ConfigError(f"{known.config}:{lineno}: '{value}' is not one of {list(action.choices)}")
    target.set_defaults(**values)


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if args.command == "experiment" and not args.n:
            raise ConfigError("experiment needs --n")
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except CheckFailed as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:
        return int(e.code or 0)
    except (sampling.SizeCapExceeded, sampling.TruncationFailure, limits.EstimationError) as e:
        print(f"resource limit: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
