"""Command-line front end: config-driven simulations, densities, and checks.

Every command reads one TOML/JSON experiment config, prints a JSON summary
to stdout, and optionally writes artifacts (JSON, CSV) into --out-dir.
Exit codes: 0 success, 2 config error, 3 numerical failure, 4 a requested
check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import density as density_mod
from . import laws, model as model_mod, oracle as oracle_mod, sampling
from .config import ConfigError, ExperimentConfig, load_config
from .model import (
    SpectralModel,
    TimeGrid,
    b2_kernel,
    b3_kernel,
    feedback_kernel,
    qhat_kernel,
    qt_kernel,
    semigroup_kernel,
    vt_kernel,
)
from .rng import RngStream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK_FAILED = 4


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result, ok = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    payload = {
        "command": args.command,
        "seed": cfg.seed,
        "config_hash": cfg.content_hash(),
        "resolved_config": cfg.resolved(),
    }
    payload.update(result)
    text = json.dumps(payload, indent=2)
    print(text)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}-{cfg.content_hash()}.json").write_text(text)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oubridge",
        description="Spectral OU bridges and Girsanov transition densities",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate-ou", "sample exact OU paths and summarize node moments"),
        ("simulate-bridge", "sample pinned paths (exact conditioning or SDE integration)"),
        ("simulate-semilinear", "integrate the semilinear mild scheme"),
        ("density", "estimate the transition density d = h*g*k at (x, y, T)"),
        ("h-weight", "estimate the Girsanov factor h(T, x, y)"),
        ("pq-norm", "nested Monte Carlo of the (p,q) transition-operator norm"),
        ("validate", "run the operator-identity and sampler invariant suite"),
        ("oracle-compare", "compare the 1-mode density pipeline against the PDE oracle"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="TOML or JSON experiment config")
        cmd.add_argument("--seed", type=int, help="override the config seed")
        cmd.add_argument("--threads", type=int, help="worker threads for path blocks")
        cmd.add_argument("--out-dir", help="directory for JSON/CSV artifacts")
        cmd.add_argument("--strict-determinism", action="store_true",
                         help="force single-threaded, sequential reductions")
        if name.startswith("simulate"):
            cmd.add_argument("--dump-paths", help="CSV file for (path, time, mode, value) rows")
            cmd.add_argument("--dump-limit", type=int, default=100,
                             help="cap on the number of dumped paths")
        if name == "simulate-bridge":
            cmd.add_argument("--method", choices=["exact", "sde"], default="exact")
        if name == "h-weight":
            cmd.add_argument("--q", type=float, default=1.0,
                             help="exponent for the q-moment of the weight")
        if name == "density":
            cmd.add_argument("--dump-log-weights", help="CSV file for per-sample log weights")
        if name == "oracle-compare":
            cmd.add_argument("--n-points", type=int, default=21)
            cmd.add_argument("--tol", type=float, default=0.10)
            cmd.add_argument("--dump-mesh", help="CSV file for the PDE mesh density")
    return parser


def _load(args) -> ExperimentConfig:
    raw = load_config(args.config)
    cfg = ExperimentConfig.from_dict(raw, base_dir=Path(args.config).resolve().parent)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if getattr(args, "strict_determinism", False):
        cfg.strict_determinism = True
    if cfg.strict_determinism:
        cfg.threads = 1
    return cfg


def _maybe_dump(ens: sampling.PathEnsemble, args) -> None:
    if getattr(args, "dump_paths", None):
        limited = sampling.PathEnsemble(
            times=ens.times,
            states=ens.states[: args.dump_limit],
            noise=None if ens.noise is None else ens.noise[: args.dump_limit],
            kind=ens.kind,
        )
        limited.write_csv(args.dump_paths)


def cmd_simulate_ou(args, cfg: ExperimentConfig):
    rng = RngStream(cfg.seed)
    grid = cfg.grid if cfg.grid.epsilon_cutoff == 0 else TimeGrid.uniform(
        cfg.grid.horizon, max(cfg.grid.n_steps, 1))
    ens = sampling.sample_ou_path(cfg.model, cfg.x, grid, rng, cfg.n_paths)
    _maybe_dump(ens, args)
    return {"summary": ens.node_summary()}, True


def cmd_simulate_bridge(args, cfg: ExperimentConfig):
    rng = RngStream(cfg.seed)
    if args.method == "exact":
        grid = cfg.grid if cfg.grid.epsilon_cutoff == 0 else TimeGrid.uniform(
            cfg.grid.horizon, max(cfg.grid.n_steps, 1))
        ens = sampling.sample_bridge_exact(cfg.model, cfg.x, cfg.y, grid, rng, cfg.n_paths)
    else:
        ens = sampling.integrate_bridge_sde(cfg.model, cfg.x, cfg.y, cfg.grid, rng, cfg.n_paths)
    _maybe_dump(ens, args)
    return {"method": args.method, "summary": ens.node_summary()}, True


def cmd_simulate_semilinear(args, cfg: ExperimentConfig):
    from .dynamics import simulate_semilinear

    rng = RngStream(cfg.seed)
    grid = cfg.grid if cfg.grid.epsilon_cutoff == 0 else TimeGrid.uniform(
        cfg.grid.horizon, max(cfg.grid.n_steps, 1))
    ens = simulate_semilinear(cfg.model, cfg.nonlinearity, cfg.x, grid, rng, cfg.n_paths)
    _maybe_dump(ens, args)
    return {"summary": ens.node_summary()}, True


def cmd_density(args, cfg: ExperimentConfig):
    rng = RngStream(cfg.seed)
    est = density_mod.estimate_density(cfg.model, cfg.nonlinearity, cfg.x, cfg.y,
                                       cfg.grid.horizon, cfg.n_paths, rng,
                                       grid=_density_grid(cfg), threads=cfg.threads)
    if getattr(args, "dump_log_weights", None) and cfg.nonlinearity.kind != "zero":
        log_w = density_mod._collect_log_weights(
            cfg.model, cfg.nonlinearity, cfg.x, cfg.y, cfg.grid.horizon,
            cfg.n_paths, rng, _density_grid(cfg), tag="h-weight", threads=cfg.threads)
        with open(args.dump_log_weights, "w") as fh:
            fh.write("sample,log_weight\n")
            for i, w in enumerate(log_w):
                fh.write(f"{i},{w:.17g}\n")
    return {"estimate": est.as_dict()}, True


def cmd_h_weight(args, cfg: ExperimentConfig):
    rng = RngStream(cfg.seed)
    est = density_mod.estimate_hq(cfg.model, cfg.nonlinearity, cfg.x, cfg.y,
                                  cfg.grid.horizon, args.q, cfg.n_paths, rng,
                                  grid=_density_grid(cfg), threads=cfg.threads)
    return {"q": args.q, "estimate": est.as_dict()}, True


def cmd_pq_norm(args, cfg: ExperimentConfig):
    rng = RngStream(cfg.seed)
    est = density_mod.estimate_pq_norm(cfg.model, cfg.nonlinearity, cfg.grid.horizon,
                                       cfg.p, cfg.q, cfg.n_x, cfg.n_y, cfg.n_paths, rng,
                                       grid=_density_grid(cfg), threads=cfg.threads)
    return {"estimate": est.as_dict()}, True


def _density_grid(cfg: ExperimentConfig) -> TimeGrid | None:
    return cfg.grid if cfg.grid.epsilon_cutoff > 0 else None


def cmd_validate(args, cfg: ExperimentConfig):
    checks = run_validation_suite(cfg)
    ok = all(c["passed"] for c in checks)
    width = max(len(c["name"]) for c in checks)
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{c['name']:<{width}}  {status}  {c['detail']}", file=sys.stderr)
    return {"checks": checks, "all_passed": ok}, ok


def run_validation_suite(cfg: ExperimentConfig) -> list[dict]:
    """Fast invariant suite over operator identities and sampler laws."""
    model = cfg.model
    T = cfg.grid.horizon
    checks = []

    def record(name, passed, detail):
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    alphas = np.concatenate([[0.0], np.geomspace(0.01, 50.0, 9)])
    lams = np.geomspace(0.05, 20.0, 10)
    fracs = np.linspace(0.0, 1.0, 10)
    A, L, F = np.meshgrid(alphas, lams, fracs, indexing="ij")
    tt, TT = F * T, np.full_like(F, T)

    qT = qt_kernel(A, L, TT)
    qt = qt_kernel(A, L, tt)
    qrest = qt_kernel(A, L, TT - tt)
    lhs = qt + semigroup_kernel(A, tt) ** 2 * qrest
    err = np.max(np.abs(lhs - qT) / qT)
    record("covariance decomposition identity", err <= 1e-12, f"max rel err {err:.2e}")

    qhat = qhat_kernel(A, L, tt, TT)
    alt = qt * (1.0 - vt_kernel(A, tt, TT) ** 2)
    err = np.max(np.abs(qhat - alt) / np.maximum(qhat, 1e-300))
    interior = (F > 0) & (F < 1)
    err_int = np.max((np.abs(qhat - alt) / np.maximum(qhat, 1e-300))[interior])
    record("bridge variance factorization", err_int <= 1e-12,
           f"max rel err {err_int:.2e} (interior); endpoints exact: {err <= 1e-12}")

    ts = np.linspace(0, T, 257)
    v = vt_kernel(model.alpha[None, :], ts[:, None], T)
    strict = np.all((v[1:-1] > 0) & (v[1:-1] < 1))
    mono = np.all(np.diff(v, axis=0) > -1e-14)
    record("contraction in (0,1), monotone to 1", strict and mono,
           f"min {v[1:-1].min():.3e}, max {v[1:-1].max():.6f}, ends at {v[-1].max():.1f}")

    from scipy.integrate import quad
    worst = 0.0
    for n in range(model.n_modes):
        a, l = model.alpha[n], model.lam[n]
        # integrate in u = T - s: the integrand's boundary layer sits at u = 0
        val, _ = quad(lambda u: b2_kernel(a, l, T - u, T) ** 2, 0.0, T,
                      epsabs=0.0, epsrel=1e-10, limit=400)
        target = semigroup_kernel(a, T) ** 2 / qt_kernel(a, l, T)
        worst = max(worst, abs(val - target) / target)
    record("feedback-isometry quadrature", worst <= 1e-6, f"max rel err {worst:.2e}")

    rng_check = np.random.default_rng(1234)
    ok_mono = True
    for _ in range(20):
        a = float(rng_check.uniform(0.0, 20.0))
        l = float(rng_check.uniform(0.1, 5.0))
        tt_grid = np.linspace(1e-4, 3.0, 1000)
        f_vals = feedback_kernel(a, l, 0.0, tt_grid)  # |Q_t^{-1/2} S_t Q^{1/2}| as t varies
        ok_mono &= bool(np.all(np.diff(f_vals) <= 1e-12))
    record("feedback norm nonincreasing in t", ok_mono, "20 random (alpha, lam) spectra")

    s_grid = np.linspace(0.0, 0.9 * T, 7)[:, None]
    ratio = (b2_kernel(model.alpha[None, :], model.lam[None, :], s_grid, T)
             / b3_kernel(model.alpha[None, :], model.lam[None, :], s_grid, T))
    err = np.max(np.abs(ratio - semigroup_kernel(model.alpha, T)[None, :]))
    record("B2/B3 ratio is the semigroup at T", err <= 1e-13, f"max abs err {err:.2e}")

    if model.basis == "dirichlet-sine":
        rng0 = np.random.default_rng(7)
        coeffs = rng0.standard_normal(model.n_modes)
        xi = model_mod.sine_basis_grid(512)
        back = model_mod.analyze(model_mod.synthesize(coeffs, xi), xi, model.n_modes)
        err = np.max(np.abs(back - coeffs))
        record("synthesize/analyze round trip", err <= 1e-10, f"max coeff err {err:.2e}")

    rng = RngStream(cfg.seed)
    ys = density_mod.sample_invariant_rows(model, rng, 20_000, tag="validate-gk")
    log_gk = np.array([laws.log_g_factor(model, T, cfg.x, yy)
                       + laws.log_k_factor(model, T, yy) for yy in ys])
    w = np.exp(log_gk)
    z = abs(w.mean() - 1.0) / (w.std(ddof=1) / np.sqrt(len(w)))
    record("linear density normalizes to one", z <= 4.0, f"z-score {z:.2f}")

    bb = SpectralModel(n_modes=1, alpha=np.array([0.0]), lam=np.array([1.0]))
    grid_bb = TimeGrid.uniform(1.0, 16)
    ens = sampling.sample_bridge_exact(bb, np.zeros(1), np.zeros(1), grid_bb, rng, 20_000)
    mid_var = ens.states[:, 8, 0].var(ddof=1)
    target = 0.25
    z = abs(mid_var - target) / (target * np.sqrt(2.0 / 20_000))
    record("Brownian-limit bridge variance", z <= 4.0, f"z-score {z:.2f}")

    return checks


def cmd_oracle_compare(args, cfg: ExperimentConfig):
    model = cfg.model
    if model.n_modes != 1:
        raise ConfigError("oracle-compare needs a 1-mode model")
    T = cfg.grid.horizon
    alpha, lam = float(model.alpha[0]), float(model.lam[0])
    x0 = float(cfg.x[0])
    g_scalar = (None if cfg.nonlinearity.kind == "zero"
                else cfg.nonlinearity.scalar_map)
    mesh = oracle_mod.fokker_planck_1d(alpha, lam, g_scalar, x0, T)
    if getattr(args, "dump_mesh", None):
        mesh.write_csv(args.dump_mesh)

    # y grid covering the central 80% of the oracle mass
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (mesh.values[1:] + mesh.values[:-1])
                                           * np.diff(mesh.xs))])
    cdf /= cdf[-1]
    ys = np.interp(np.linspace(0.10, 0.90, args.n_points), cdf, mesh.xs)

    rng = RngStream(cfg.seed)
    rows = []
    worst = 0.0
    for i, yv in enumerate(ys):
        est = density_mod.estimate_density(model, cfg.nonlinearity, cfg.x,
                                           np.array([yv]), T, cfg.n_paths, rng,
                                           grid=_density_grid(cfg), threads=cfg.threads,
                                           tag=f"oracle-{i}")
        lebesgue = est.value * float(np.exp(laws.nu_log_density(model, np.array([yv]))))
        ref = float(mesh(yv))
        rel = abs(lebesgue - ref) / ref
        worst = max(worst, rel)
        rows.append({"y": float(yv), "oracle": ref, "bridge": lebesgue,
                     "rel_error": rel, "std_error": est.std_error})
    ok = worst <= args.tol
    for r in rows:
        print(f"y={r['y']:+9.4f}  oracle={r['oracle']:.6f}  bridge={r['bridge']:.6f}  "
              f"rel={r['rel_error']:.3%}", file=sys.stderr)
    return {"rows": rows, "max_rel_error": worst, "tolerance": args.tol}, ok


COMMANDS = {
    "simulate-ou": cmd_simulate_ou,
    "simulate-bridge": cmd_simulate_bridge,
    "simulate-semilinear": cmd_simulate_semilinear,
    "density": cmd_density,
    "h-weight": cmd_h_weight,
    "pq-norm": cmd_pq_norm,
    "validate": cmd_validate,
    "oracle-compare": cmd_oracle_compare,
}


if __name__ == "__main__":
    sys.exit(main())
