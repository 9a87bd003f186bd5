"""Command-line front end."""

import argparse
import logging
import os
import sys
import time

import numpy as np

from .config import ExperimentConfig, config_hash, parse_config, serialize_config
from .errors import ConfigError, EnsembleError, ResourceLimitError
from .io import RunRecord, dump_array, write_json, write_samples_csv, write_table_csv

STRUCTURE_TOL = 1e-12


def _load(args):
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    over = {"seed": args.seed, "threads": args.threads, "dir": args.out}
    return cfg.with_overrides(**over)


def _outdir(cfg):
    os.makedirs(cfg.dir, exist_ok=True)
    return cfg.dir


def _print_table(rows):
    if not rows:
        return
    keys = list(rows[0])
    print("  ".join(f"{k:>22s}" for k in keys))
    for row in rows:
        cells = []
        for k in keys:
            v = row[k]
            cells.append(f"{v:>22.6g}" if isinstance(v, (float, int)) and v is not None else f"{str(v):>22s}")
        print("  ".join(cells))


def cmd_structure_check(cfg, corrupt=False):
    from .hmm_core import assemble, verify_structure
    from .randfield import mix_seed, sample_field
    from .mesh import build_mesh

    mesh = build_mesh(cfg.N)
    q0, f, _ = cfg.functions()
    quad = cfg.quadrature()
    realization = sample_field(cfg.field_spec(), cfg.eps, mix_seed(cfg.seed, 0))
    worst = 0.0
    for flavor, fld in (("random", realization), ("homogenized", None)):
        sys_ = assemble(mesh, fld, q0, cfg.ratio, quad, f, eps=cfg.eps)
        if corrupt and flavor == "random":
            sys_.alpha[0, 2, 1] += 1e-6 * abs(sys_.alpha[0, 2, 1])
        rep = verify_structure(sys_)
        worst = max(worst, rep["max_violation"])
        print(f"[{flavor}] symmetry={rep['symmetry']:.3e} outside_pattern={rep['entries_outside_pattern']} "
              f"row_identity={rep['row_identity']:.3e} d_consistency={rep['d_consistency']:.3e}")
    ok = worst <= STRUCTURE_TOL
    print("structure check", "PASSED" if ok else "FAILED", f"(worst {worst:.3e}, tolerance {STRUCTURE_TOL:g})")
    return 0 if ok else 1


def _write_ensemble(cfg, ens, tag):
    d = _outdir(cfg)
    csv_path = os.path.join(d, f"{cfg.prefix}_{tag}.csv")
    json_path = os.path.join(d, f"{cfg.prefix}_{tag}_summary.json")
    write_samples_csv(csv_path, ens.samples)
    write_json(json_path, {
        "config_hash": config_hash(cfg),
        "config": serialize_config(cfg),
        "ratio": ens.ratio,
        "eps": ens.eps,
        "beta": ens.beta,
        "statistics": ens.summary,
    })
    return [csv_path, json_path]


def cmd_run(cfg):
    from .experiment import run_ensemble

    t0 = time.perf_counter()
    ens = run_ensemble(cfg, with_reference=True)
    arts = _write_ensemble(cfg, ens, "samples")
    s = ens.summary
    print(f"samples={s['count']} invalid={s['invalid']}")
    for key in ("mean", "mean_stderr", "variance", "variance_stderr", "intermediate_variance",
                "limit_variance", "residual_fraction", "skewness", "excess_kurtosis", "ks_distance"):
        if key in s and s[key] is not None:
            print(f"  {key:22s} {s[key]:.10g}")
    rec = RunRecord(config_hash(cfg), "run", wall_clock=time.perf_counter() - t0, timings=ens.timings, artifacts=arts)
    rec.write(_outdir(cfg))
    return 0


def cmd_scan_amplification(cfg):
    from .experiment import amplification_scan

    t0 = time.perf_counter()
    scan = amplification_scan(cfg, cfg.ratios)
    arts = []
    for ens in scan.ensembles:
        arts += _write_ensemble(cfg, ens, f"ratio_{ens.ratio:g}")
    table = os.path.join(_outdir(cfg), f"{cfg.prefix}_amplification.csv")
    write_table_csv(table, scan.rows)
    arts.append(table)
    _print_table(scan.rows)
    RunRecord(config_hash(cfg), "scan-amplification", wall_clock=time.perf_counter() - t0, artifacts=arts).write(_outdir(cfg))
    return 0


def cmd_scan_epsilon(cfg):
    from .experiment import epsilon_scan

    eps_list = cfg.eps_list or (cfg.eps,)
    t0 = time.perf_counter()
    scan = epsilon_scan(cfg, eps_list)
    arts = []
    for ens in scan.ensembles:
        arts += _write_ensemble(cfg, ens, f"eps_{ens.eps:g}")
    table = os.path.join(_outdir(cfg), f"{cfg.prefix}_epsilon.csv")
    write_table_csv(table, scan.rows)
    arts.append(table)
    _print_table(scan.rows)
    RunRecord(config_hash(cfg), "scan-epsilon", wall_clock=time.perf_counter() - t0, artifacts=arts).write(_outdir(cfg))
    return 0


def cmd_field_check(cfg, count=20, dump=False):
    from .randfield import analytic_kappa, analytic_sigma2, covariance_probe, mix_seed, sample_field

    spec = cfg.field_spec()
    fields = [sample_field(spec, cfg.eps, mix_seed(cfg.seed, k)) for k in range(count)]
    rng = np.random.default_rng(cfg.seed)
    pts = rng.uniform(0.0, 1.0 - 4 * cfg.eps, size=(20000, 2))
    lags = np.array([[0.0, 0.0], [0.5, 0.0], [1.5, 0.0], [2.0, 0.0]])
    mean, se = covariance_probe(fields, lags, pts)
    print(f"field kind={spec.kind} eps={cfg.eps:g} realizations={count} bound={spec.bound:g}")
    for lag, m, s in zip(lags, mean, se):
        print(f"  lag ({lag[0]:g}, {lag[1]:g})  covariance {m:+.5f} +- {s:.5f}  analytic {float(spec.covariance(lag)) if spec.kind != 'zero' else 0.0:+.5f}")
    if spec.kind == "src":
        print(f"  sigma^2 = {analytic_sigma2(spec):g}")
    elif spec.kind == "lrc":
        print(f"  kappa = {analytic_kappa(spec):.10g}")
    if dump:
        d = _outdir(cfg)
        f0 = fields[0]
        if f0.grid is not None:
            grid = f0.grid
        else:
            t = (np.arange(256) + 0.5) / 256
            xx, yy = np.meshgrid(t, t, indexing="ij")
            grid = f0(np.stack([xx, yy], -1))
        path = os.path.join(d, f"{cfg.prefix}_field.bin")
        dump_array(path, grid, kind=spec.kind, eps=cfg.eps, seed=f0.seed)
        print(f"  dumped {path}")
    return 0


def cmd_reference(cfg):
    from .corrector import limit_variance
    from .experiment import make_reference

    ref = make_reference(cfg)
    spec = cfg.field_spec()
    print(f"reference mesh N_ref={cfg.n_ref}: ||u0 G phi||^2 = {ref.product_l2_sq:.10g}")
    rows = [{"ratio": r, "limit_variance": limit_variance(ref, spec, r)} for r in cfg.ratios]
    _print_table(rows)
    if spec.kind == "lrc":
        fine, coarse, change = ref.hls(spec.alpha, refine=True)
        print(f"double integral {fine:.10g} (2x refinement change {change:.2e})")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hmmfluct", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment configuration file")
        sp.add_argument("--seed", type=int, help="override the base seed")
        sp.add_argument("--threads", type=int, help="worker processes")
        sp.add_argument("--out", help="output directory")
        return sp

    sc = common(sub.add_parser("structure-check", help="assemble both systems and check stencil identities"))
    sc.add_argument("--corrupt-stencil", action="store_true", help=argparse.SUPPRESS)
    common(sub.add_parser("run", help="run one ensemble and write samples and summary"))
    common(sub.add_parser("scan-amplification", help="coupled ensembles over the configured patch ratios"))
    common(sub.add_parser("scan-epsilon", help="ensembles over the configured eps list"))
    fc = common(sub.add_parser("field-check", help="sample fields and print covariance estimates"))
    fc.add_argument("--count", type=int, default=20)
    fc.add_argument("--dump", action="store_true", help="write the first realization as a raw array")
    common(sub.add_parser("reference", help="fine-mesh reference and limit variances"))
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        if args.command == "structure-check":
            return cmd_structure_check(cfg, corrupt=args.corrupt_stencil)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "scan-amplification":
            return cmd_scan_amplification(cfg)
        if args.command == "scan-epsilon":
            return cmd_scan_epsilon(cfg)
        if args.command == "field-check":
            return cmd_field_check(cfg, args.count, args.dump)
        if args.command == "reference":
            return cmd_reference(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except EnsembleError as exc:
        print(f"ensemble failed: {exc}", file=sys.stderr)
        for k, err in sorted(exc.failures.items())[:10]:
            print(f"  sample {k}: {err}", file=sys.stderr)
        return 2
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return 4
    return 1


if __name__ == "__main__":
    sys.exit(main())
