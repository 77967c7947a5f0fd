"""Command-line entry point: ``msconv gradcheck | run | flops | verify``.

Exit codes: 0 success, 2 usage, 3 IO error, 4 schema error, 5 numerical
failure (gradcheck above tolerance, fixture mismatch, non-finite values).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from msconv import accounting, gradsuite, runner
from msconv.io import SchemaError, TensorFileError, load_manifest, read_tensor, write_tensor
from msconv.tensor import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SCHEMA, EXIT_NUMERIC = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: {e}") from None


def _read_dir(d) -> dict:
    d = Path(d)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    return {p.stem: read_tensor(p) for p in sorted(d.glob("*.mst"))}


# ---------------------------------------------------------------------------
# gradcheck

def cmd_gradcheck(args) -> int:
    if args.all:
        ops = list(gradsuite.REGISTRY)
    elif args.op in gradsuite.REGISTRY:
        ops = [args.op]
    else:
        raise UsageError(f"unknown op {args.op!r}; registered: {', '.join(gradsuite.REGISTRY)}")
    ok = True
    print(f"{'case':24s} {'max_rel_err':>12s}  result")
    for op in ops:
        for label, rep in gradsuite.run(op, args.seed):
            ok &= rep.passed
            print(f"{label:24s} {rep.max_rel_err:12.3e}  {'pass' if rep.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# run

def cmd_run(args) -> int:
    kind, cfg = runner.parse_config(_load_json(args.config))
    xs = runner.order_inputs(cfg, _read_dir(args.inputs))
    if args.params is not None:
        params = runner.params_from_tensors(kind, cfg, _read_dir(args.params))
    else:
        params = runner.init_params(kind, cfg, args.seed)
    outs = runner.run(kind, cfg, params, xs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, t in outs.items():
        write_tensor(t, out_dir / f"{name}.mst")
    print(f"wrote {len(outs)} tensors to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# flops

def _print_report(rep: accounting.CostReport) -> None:
    print(f"[{rep.variant}]")
    for e in rep.entries:
        print(f"  {e.name:26s} params={e.params:>12,d}  macs={e.macs:>16,d}  traffic={e.traffic:>12,d}")
    print(f"  {'total':26s} params={rep.total_params:>12,d}  macs={rep.total_macs:>16,d}  "
          f"traffic={rep.total_traffic:>12,d}")
    agree = "yes" if rep.consistent() else "NO"
    print(f"  closed form: params={rep.closed_form_params:,d} macs={rep.closed_form_macs:,d} "
          f"(matches entries: {agree})")


def _conv_report(raw: dict) -> accounting.CostReport:
    allowed = {"kind", "c_in", "c_out", "k", "groups", "shapes", "batch"}
    unknown = set(raw) - allowed
    if unknown:
        raise SchemaError(f"unknown conv fields {sorted(unknown)}")
    try:
        shapes = [tuple(s) for s in raw.get("shapes", [[1, 1]])]
        return accounting.single_conv_report(int(raw["c_in"]), int(raw["c_out"]), int(raw["k"]),
                                             shapes, int(raw.get("groups", 1)),
                                             int(raw.get("batch", 1)))
    except KeyError as e:
        raise SchemaError(f"conv config needs {e.args[0]!r}") from None


def cmd_flops(args) -> int:
    raw = _load_json(args.config)
    print(accounting.MAC_CONVENTION)
    if isinstance(raw, dict) and raw.get("kind") == "conv":
        _print_report(_conv_report(raw))
        return EXIT_OK
    kind, cfg = runner.parse_config(raw)
    if kind == "msconv" and not args.compare and args.variant is None:
        _print_report(accounting.cost_report(cfg, "block"))
        return EXIT_OK
    if not args.compare:
        variant = args.variant or ("baseline" if kind == "baseline_head" else "msconv")
        _print_report(accounting.cost_report(cfg, variant))
        return EXIT_OK
    cmp = accounting.compare(cfg)
    _print_report(cmp["baseline"])
    _print_report(cmp["msconv"])
    dm = cmp["macs_delta"]
    print("head-only comparison (msconv vs baseline)")
    print(f"  params delta   {cmp['params_delta']:+,d} ({cmp['params_delta_sign']})")
    print(f"  params ratio   {cmp['params_ratio']:.2f}x")
    print(f"  macs delta     {dm:+,d}  (FLOPs delta {2 * dm / 1e9:+.3f} G)")
    print(f"  macs ratio     {cmp['macs_ratio']:.2f}x")
    pp, pf = cmp["published_params_m"], cmp["published_flops_g"]
    print("published whole-detector totals (backbone included, context only)")
    print(f"  params  {pp['baseline']:.2f} M -> {pp['msconv']:.2f} M "
          f"(delta {cmp['published_params_delta_m']:+.2f} M, ratio {pp['msconv'] / pp['baseline']:.2f}x)")
    print(f"  FLOPs   {pf['baseline']:.2f} G -> {pf['msconv']:.2f} G "
          f"(ratio {pf['msconv'] / pf['baseline']:.2f}x)")
    print(f"  head delta sign agrees with published delta: {'yes' if cmp['sign_agrees_with_published'] else 'no'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

def cmd_verify(args) -> int:
    m = load_manifest(args.manifest)
    kind, cfg = runner.parse_config(m.config)
    xs = runner.order_inputs(cfg, m.load_inputs())
    params = runner.params_from_tensors(kind, cfg, m.load_params())
    outs = runner.run(kind, cfg, params, xs)
    expected = m.load_expected()
    if set(expected) != set(outs):
        raise SchemaError(f"expected outputs {sorted(expected)} but forward produced {sorted(outs)}")
    worst = (-1.0, None, None)
    failed = []
    for name in sorted(expected):
        got, want = outs[name].data, expected[name].data
        if got.shape != want.shape:
            raise SchemaError(f"{name}: shape {got.shape} vs expected {want.shape}")
        diff = np.abs(got - want)
        limit = m.atol + m.rtol * np.abs(want)
        if diff.size:
            i = int(np.argmax(diff - limit))
            at = tuple(int(j) for j in np.unravel_index(i, diff.shape))
            if diff.flat[i] > worst[0]:
                worst = (float(diff.flat[i]), name, at)
        if (diff > limit).any():
            failed.append(name)
    status = "FAIL" if failed else "pass"
    print(f"{m.path}: {status} ({len(expected)} outputs, abs tol {m.atol:g}, rel tol {m.rtol:g})")
    if worst[1] is not None:
        print(f"  worst offender: {worst[1]}{list(worst[2])} |diff| = {worst[0]:.3e}")
    if failed:
        print(f"  failing outputs: {', '.join(failed)}")
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="msconv", description="Multi-scale convolution: gradient checks, forwards, accounting, fixtures.",
        epilog="exit codes: 0 ok, 2 usage, 3 io error, 4 schema error, 5 numerical failure")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of registered ops")
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--op")
    which.add_argument("--all", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("run", help="run a configured forward and write outputs")
    r.add_argument("--config", required=True)
    r.add_argument("--inputs", required=True)
    src = r.add_mutually_exclusive_group()
    src.add_argument("--params")
    src.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("flops", help="parameter and MAC accounting")
    f.add_argument("--config", required=True)
    f.add_argument("--variant", choices=["baseline", "msconv"])
    f.add_argument("--compare", action="store_true")
    f.set_defaults(func=cmd_flops)

    v = sub.add_parser("verify", help="check a fixture manifest")
    v.add_argument("--manifest", required=True)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ValueError) as e:
        print(f"schema error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (TensorFileError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
