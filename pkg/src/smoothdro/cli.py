"""Command-line front end.

Subcommands: train | check-gradients | sweep-beta | certify-critical | replay.
Exit codes: 0 ok, 2 config error, 3 contract failure, 4 numeric failure,
5 replay mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import (ConfigError, ContractError, NumericError,
                     ReplayMismatchError, SmoothDROError, ValidationError)
from .model import ParamPoint, project_box, sample_noise_bank
from .config import RunContext, build_context, load_config
from .optimizer import (RunRecord, certify_run, criticality_residual, sgd_run,
                        _fmt)
from .oracle import (compact_window, crit_set_grid, enlargement_member,
                     objective_subdiff_map, oracle_residual)
from .smoothing import (concentration_report, exponent_table, full_gradient,
                        grad_pair, objective_F, phi_beta_m)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONTRACT = 3
EXIT_NUMERIC = 4
EXIT_REPLAY = 5


def _out_dir(ctx_cfg, args):
    out = args.out or ctx_cfg.get("out_dir") or os.environ.get("SMOOTHDRO_OUT") \
        or "smoothdro_out"
    os.makedirs(out, exist_ok=True)
    return out


def _make_bank(ctx: RunContext):
    cfg = ctx.config
    return sample_noise_bank(cfg["m"], ctx.dataset.d, ctx.dataset.J,
                             cfg["sigma2"], cfg["bank_seed"])


def _box_grid_points(box, resolution, seed=0):
    """Evaluation points of the box: a full mesh when p + 1 <= 3, otherwise a
    seeded uniform sample of resolution^3 points."""
    q = box.p + 1
    lo = np.concatenate([box.theta_lo, [box.lambda_min]])
    hi = np.concatenate([box.theta_hi, [box.lambda_max]])
    if q <= 3:
        axes = [np.linspace(lo[j], hi[j], resolution) for j in range(q)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        pts = lo + (hi - lo) * rng.random((resolution ** 3, q))
    return [ParamPoint.from_vector(v) for v in pts]


def _write_diagnostics(path, ctx, bank, w, eta=1e-3):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,h_max,phi,mass,entropy,ess\n")
        for i, xi in enumerate(ctx.dataset.samples):
            table = exponent_table(ctx.model, w.theta, w.lam, xi, bank, ctx.cp)
            phi = phi_beta_m(table, ctx.rob.beta)
            rep = concentration_report(table, ctx.rob.beta, eta)
            fh.write(",".join([str(i), _fmt(table.h_max), _fmt(phi),
                               _fmt(rep.mass_on_eta_argmax),
                               _fmt(rep.weight_entropy), _fmt(rep.ess)]) + "\n")


def _run_training(ctx: RunContext, bank):
    cfg = ctx.config
    # the output directory is not part of the replayable experiment identity
    snapshot = {k: v for k, v in cfg.items() if k != "out_dir"}
    return sgd_run(ctx.model, ctx.dataset, bank, ctx.box, ctx.cp, ctx.rob,
                   ctx.schedule, iters=cfg["iters"], index_seed=cfg["seed"],
                   certs=ctx.certs, t_eval=cfg["eval_every"], thin=cfg["thin"],
                   config=snapshot)


def cmd_train(ctx: RunContext, args):
    bank = _make_bank(ctx)
    record = _run_training(ctx, bank)
    out = _out_dir(ctx.config, args)
    with open(os.path.join(out, "run_record.json"), "w", encoding="utf-8") as fh:
        fh.write(record.to_json())
    with open(os.path.join(out, "trace.csv"), "w", encoding="utf-8") as fh:
        fh.write(record.trace_csv())
    with open(os.path.join(out, "noise_bank.json"), "w", encoding="utf-8") as fh:
        fh.write(bank.to_json())
    if args.diagnostics:
        _write_diagnostics(os.path.join(out, "diagnostics.csv"), ctx, bank,
                           record.final_point())
    print(f"train: wrote artifacts to {out} "
          f"(final residual {record.trace[-1]['residual']:.3e})")
    return EXIT_OK


def _fd_gradient(fun, v, rel_step=1e-5):
    g = np.zeros_like(v)
    for j in range(v.size):
        h = rel_step * (1.0 + abs(v[j]))
        vp, vm = v.copy(), v.copy()
        vp[j] += h
        vm[j] -= h
        g[j] = (fun(vp) - fun(vm)) / (2.0 * h)
    return g


def gradient_audit(ctx: RunContext, bank, probes, seed=0, corrupt=False):
    """Finite-difference audit of grad_pair and full_gradient at random box
    points; returns the max relative error. `corrupt` is a test hook that
    injects a deliberate fault to prove the audit detects one."""
    if probes < 1:
        raise ConfigError(f"need at least one probe point, got {probes}")
    rng = np.random.Generator(np.random.PCG64(seed))
    box, rob, cp, model, data = ctx.box, ctx.rob, ctx.cp, ctx.model, ctx.dataset
    lo = np.concatenate([box.theta_lo, [box.lambda_min]])
    hi = np.concatenate([box.theta_hi, [box.lambda_max]])
    worst = 0.0
    for _ in range(probes):
        v = lo + (hi - lo) * rng.random(lo.size)
        w = ParamPoint.from_vector(v)
        xi = data.samples[int(rng.integers(data.n))]

        def phi_obj(vv):
            wp = ParamPoint.from_vector(vv)
            t = exponent_table(model, wp.theta, wp.lam, xi, bank, cp)
            return wp.lam * rob.rho + phi_beta_m(t, rob.beta)

        g = grad_pair(model, w.theta, w.lam, xi, bank, cp, rob).as_vector()
        gf = full_gradient(model, w, data, bank, cp, rob).as_vector()
        if corrupt:
            g = g + 0.05
        fd = _fd_gradient(phi_obj, v)
        fd_full = _fd_gradient(
            lambda vv: objective_F(model, ParamPoint.from_vector(vv), data, bank,
                                   cp, rob), v)
        worst = max(worst,
                    float(np.linalg.norm(g - fd)) / max(1.0, float(np.linalg.norm(fd))),
                    float(np.linalg.norm(gf - fd_full)) / max(1.0, float(np.linalg.norm(fd_full))))
    return worst


def cmd_check_gradients(ctx: RunContext, args):
    bank = _make_bank(ctx)
    worst = gradient_audit(ctx, bank, args.probes, seed=ctx.config["seed"])
    print(f"check-gradients: max relative error {worst:.3e} over {args.probes} probes")
    if worst > 1e-4:
        raise NumericError(f"gradient audit failed: max relative error {worst:.3e} > 1e-4")
    return EXIT_OK


def _oracle_eligible(ctx: RunContext):
    return ctx.dataset.d <= 2 and ctx.model.p <= 2


def _oracle_field(ctx: RunContext):
    windows = [compact_window(c, ctx.model, ctx.box, ctx.cp, J=ctx.dataset.J)
               for c in ctx.certs]
    return objective_subdiff_map(ctx.model, ctx.dataset, windows, ctx.cp,
                                 ctx.rob.rho, grid=ctx.config["oracle"]["grid"])


def cmd_sweep_beta(ctx: RunContext, args):
    cfg = ctx.config
    betas = sorted(cfg["sweep"]["betas"], reverse=True)
    ms = sorted(int(m) for m in cfg["sweep"]["ms"])
    eps = cfg["sweep"]["eps"]
    points = _box_grid_points(ctx.box, cfg["sweep"]["grid_resolution"],
                              seed=cfg["seed"])
    big_bank = sample_noise_bank(ms[-1], ctx.dataset.d, ctx.dataset.J,
                                 cfg["sigma2"], cfg["bank_seed"])
    field = None
    if args.enable_oracle:
        if not _oracle_eligible(ctx):
            raise ConfigError("oracle sweeps need d <= 2 and p <= 2")
        field = _oracle_field(ctx)

    from .model import RobustnessConfig
    rows = []
    pool = ThreadPoolExecutor(max_workers=max(1, args.threads))
    try:
        for beta in betas:
            rob = RobustnessConfig(rho=cfg["rho"], beta=beta)

            def grad_at(w, bank, rob=rob):
                return full_gradient(ctx.model, w, ctx.dataset, bank, ctx.cp,
                                     rob).as_vector()

            ref = list(pool.map(lambda w: grad_at(w, big_bank), points))
            for m in ms:
                bank = big_bank.prefix(m)
                grads = list(pool.map(lambda w: grad_at(w, bank), points))
                sup_gap = max(float(np.linalg.norm(g - r))
                              for g, r in zip(grads, ref))
                frac = float("nan")
                if field is not None:
                    hits = list(pool.map(
                        lambda wg: enlargement_member(wg[1], wg[0], eps, field,
                                                      box=ctx.box),
                        list(zip(points, grads))))
                    frac = sum(hits) / len(hits)
                rows.append((beta, m, sup_gap, frac))
    finally:
        pool.shutdown()

    out = _out_dir(cfg, args)
    path = os.path.join(out, "sweep_beta.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("beta,m,sup_grad_gap,member_fraction\n")
        for beta, m, gap, frac in rows:
            fh.write(f"{_fmt(beta)},{m},{_fmt(gap)},{_fmt(frac)}\n")
    print(f"sweep-beta: wrote {path} ({len(rows)} cells)")
    return EXIT_OK


def cmd_certify_critical(ctx: RunContext, args):
    if not args.enable_oracle:
        raise ConfigError("certification needs the brute-force oracle; "
                          "pass --enable-oracle")
    if not _oracle_eligible(ctx):
        raise ConfigError(
            f"oracle certification needs d <= 2 and p <= 2, got "
            f"d={ctx.dataset.d}, p={ctx.model.p}")
    cfg = ctx.config
    eps = args.eps if args.eps is not None else cfg["oracle"]["eps"]
    res = cfg["oracle"]["crit_resolution"]
    tol = cfg["oracle"]["crit_tol"]
    bank = _make_bank(ctx)
    field = _oracle_field(ctx)

    oracle_crit = crit_set_grid(
        lambda w: oracle_residual(field(w), w, ctx.box), ctx.box, res, tol)
    smooth_crit = crit_set_grid(
        lambda w: criticality_residual(ctx.model, w, ctx.dataset, bank, ctx.box,
                                       ctx.cp, ctx.rob), ctx.box, res, tol)

    gaps = []
    if oracle_crit:
        C = np.array([c.as_vector() for c in oracle_crit])
        for w in smooth_crit:
            gaps.append(float(np.min(np.linalg.norm(C - w.as_vector()[None, :],
                                                    axis=1))))
    max_gap = max(gaps) if gaps else float("inf") if smooth_crit else 0.0
    inclusion_ok = bool(smooth_crit) and bool(oracle_crit) and max_gap <= eps

    record = _run_training(ctx, bank)
    sgd_report = certify_run(record, oracle_crit, eps) if oracle_crit else None

    out = _out_dir(cfg, args)
    report = {
        "eps": eps,
        "beta": cfg["beta"],
        "m": cfg["m"],
        "oracle_crit_points": [[_fmt(v) for v in w.as_vector()] for w in oracle_crit],
        "smooth_crit_points": [[_fmt(v) for v in w.as_vector()] for w in smooth_crit],
        "inclusion_ok": inclusion_ok,
        "max_inclusion_gap": max_gap,
        "sgd_tail_distance": sgd_report.tail_distance if sgd_report else None,
        "sgd_tail_ok": sgd_report.passed if sgd_report else None,
    }
    with open(os.path.join(out, "certify_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
    with open(os.path.join(out, "run_record.json"), "w", encoding="utf-8") as fh:
        fh.write(record.to_json())
    print(f"certify-critical: inclusion_ok={inclusion_ok} "
          f"max_gap={max_gap:.4f} sgd_tail="
          f"{sgd_report.tail_distance if sgd_report else float('nan'):.4f}")
    return EXIT_OK


def cmd_replay(args):
    try:
        with open(args.record, encoding="utf-8") as fh:
            record = RunRecord.from_json(fh.read())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read run record {args.record}: {exc}") from exc
    ctx = build_context(record.config)
    bank = sample_noise_bank(record.config["m"], ctx.dataset.d, ctx.dataset.J,
                             record.config["sigma2"], record.bank_seed)
    redo = sgd_run(ctx.model, ctx.dataset, bank, ctx.box, ctx.cp, ctx.rob,
                   ctx.schedule, iters=record.config["iters"],
                   index_seed=record.index_seed, certs=ctx.certs,
                   t_eval=record.config["eval_every"], thin=record.config["thin"],
                   config=record.config)
    if redo.to_json() != open(args.record, encoding="utf-8").read():
        raise ReplayMismatchError(
            f"replay of {args.record} did not reproduce the stored record")
    print(f"replay: {args.record} reproduced bit-exactly")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="smoothdro",
                                description="Entropic-smoothed WDRO training "
                                            "and certification harness")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="index-sampling seed override")
        sp.add_argument("--bank-seed", type=int, default=None,
                        help="noise bank seed override")
        sp.add_argument("--enable-oracle", action="store_true")
        sp.add_argument("--diagnostics", action="store_true")
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("train", help="run projected SGD and write artifacts")
    common(sp)
    sp = sub.add_parser("check-gradients", help="finite-difference gradient audit")
    common(sp)
    sp.add_argument("--probes", type=int, default=20)
    sp = sub.add_parser("sweep-beta", help="gradient-consistency sweep over (beta, m)")
    common(sp)
    sp = sub.add_parser("certify-critical", help="oracle critical-set certification")
    common(sp)
    sp.add_argument("--eps", type=float, default=None)
    sp = sub.add_parser("replay", help="re-run a stored record and byte-compare")
    sp.add_argument("record", help="path to run_record.json")
    sp.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.bank_seed is not None:
            cfg["bank_seed"] = args.bank_seed
        if args.out is not None:
            cfg["out_dir"] = args.out
        ctx = build_context(cfg)
        handler = {"train": cmd_train,
                   "check-gradients": cmd_check_gradients,
                   "sweep-beta": cmd_sweep_beta,
                   "certify-critical": cmd_certify_critical}[args.command]
        return handler(ctx, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractError as exc:
        print(f"contract failure: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ReplayMismatchError as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return EXIT_REPLAY
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
