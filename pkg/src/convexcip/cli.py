"""Command line driver: ``convexcip {simulate,invert,verify,reproduce}``.

Exit status: 0 success, 2 a verification check failed, 3 the minimiser did
not converge, 4 an input file or configuration could not be read.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .carleman import (
    FunctionalParams,
    GeometryError,
    carleman_sweep,
    convexity_suite,
    lemma_suite,
    theory_schedule,
)
from .fileio import (
    FormatError,
    read_cmeas,
    read_keyvalue,
    write_cfld,
    write_cmeas,
    write_csv,
    write_manifest,
    write_pgm,
)
from .forward import ForwardError
from .grid import ScalarField, SpaceTimeGrid
from .inverse import MinimizerOptions, correlation, invert
from .noise import RNG_ALGORITHM
from .phantoms import SCENARIOS, Phantom, scenario
from .pipeline import cauchy_from_measurements, noisy_measurements, simulate

log = logging.getLogger("convexcip")

EXIT_OK, EXIT_VERIFY, EXIT_NONCONVERGED, EXIT_IO = 0, 2, 3, 4
REPRODUCE_GROUPS = {
    "test1": ("test1_T1", "test1_T01"),
    "test2": ("test2_eps002", "test2_eps001"),
    "test3": ("test3_noisy",),
}


class ConfigError(ValueError):
    pass


def _optional_float(text):
    return None if text in (None, "", "none") else float(text)


def _bool(text):
    if isinstance(text, bool):
        return text
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    """Every knob of a run.  Unset scenario-level values fall back to the scenario bundle."""

    scenario: str = ""  # empty: the scenario recorded in the CMEAS file, else test1_T1
    letter: str = "A"
    background: float | None = None
    amplitude: float | None = None
    sigma: float | None = None
    seed: int | None = None
    smoothing: bool | None = None
    smoother_strength: float | None = None
    paper_fine: bool = False
    save_field: bool = False
    measurements: str = ""
    inverse_nx: int = 17
    inverse_nt: int = 17
    lam: float | None = None
    beta: float | None = None
    k: int | None = None
    penalty: float = 1e3
    method: str = "lbfgs"
    grad_tol: float = 1e-2
    max_iters: int = 500
    mode: str = "slice"
    gamma: float | None = None
    project_ball: float | None = None
    lemma_trials: int = 20
    convexity_pairs: int = 50
    theory_T: float = 4.0
    theory_gamma: float = 0.1
    theory_delta: float = 0.01

    # manifest and config-file key names
    _ALIASES = {"lambda": "lam"}

    @classmethod
    def from_entries(cls, entries: dict[str, str]) -> "RunConfig":
        cfg = cls()
        types = {f.name: f.type for f in fields(cls)}
        for key, text in entries.items():
            if key.startswith(("result.", "provenance.")):
                continue
            name = cls._ALIASES.get(key, key)
            if name not in types:
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                setattr(cfg, name, _convert(types[name], text))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        return cfg

    def entries(self) -> dict[str, str]:
        out = {}
        inverse = {v: k for k, v in self._ALIASES.items()}
        for f in fields(self):
            v = getattr(self, f.name)
            out[inverse.get(f.name, f.name)] = "" if v is None else (
                str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
            )
        return out

    def digest(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in sorted(self.entries().items()))
        return hashlib.sha256(text.encode()).hexdigest()

    def bundle(self, name: str | None = None):
        sc = scenario(name or self.scenario or "test1_T1", self.letter)
        over = {k: getattr(self, a) for k, a in (
            ("background", "background"), ("amplitude", "amplitude"), ("sigma", "sigma"),
            ("seed", "seed"), ("smoothing", "smoothing"), ("lam", "lam"), ("beta", "beta"), ("k", "k"),
        ) if getattr(self, a) is not None}
        over.update(inverse_nx=self.inverse_nx, inverse_nt=self.inverse_nt)
        return dataclasses.replace(sc, **over)

    def minimizer(self) -> MinimizerOptions:
        return MinimizerOptions(method=self.method, grad_tol=self.grad_tol, max_iters=self.max_iters,
                                projection_R=self.project_ball)


def _convert(kind, text):
    kind = str(kind)
    if text in ("", "none") and "None" in kind:
        return None
    if "bool" in kind:
        return _bool(text)
    if "int" in kind:
        return int(text)
    if "float" in kind:
        return _optional_float(text)
    return text


def provenance(cfg: RunConfig, seed: int | None) -> dict[str, str]:
    return {
        "provenance.config_sha256": cfg.digest(),
        "provenance.seed": "" if seed is None else str(seed),
        "provenance.version": __version__,
        "provenance.rng": RNG_ALGORITHM,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    sc = cfg.bundle()
    if cfg.paper_fine:
        log.warning("full-scale forward grid %dx%dx%d: expect a long run",
                    sc.paper_forward_nx, sc.paper_forward_nx, sc.paper_forward_nt)
    sim = simulate(sc, paper_fine=cfg.paper_fine)
    m = sim.measurements
    comments = {"scenario": sc.name, "letter": sc.letter, "background": repr(sc.background),
                "amplitude": repr(sc.amplitude)}
    if sc.sigma > 0:
        m = noisy_measurements(m, sc.sigma, sc.seed)
        comments.update(sigma=repr(sc.sigma), seed=str(sc.seed), rng=RNG_ALGORITHM)
    out.mkdir(parents=True, exist_ok=True)
    write_cmeas(out / "measurements.cmeas", m, comments)
    write_cfld(out / "c_true.cfld", ScalarField(sim.u.grid, sim.c_true))
    if cfg.save_field:
        write_cfld(out / "u.cfld", sim.u)
    entries = cfg.entries()
    entries.update(provenance(cfg, sc.seed))
    entries["result.measurements"] = str((out / "measurements.cmeas").resolve())
    entries["result.min_u"] = f"{float(sim.u.values.min()):.17g}"
    write_manifest(out / "manifest.txt", entries)
    print(f"SIMULATE {sc.name} g1={m.g1.shape[0]}x{m.g1.shape[1]} f0={m.nf}x{m.nf} -> {out}")
    return EXIT_OK


def _truth_from_meta(meta: dict, grid: SpaceTimeGrid):
    if "letter" not in meta:
        return None
    ph = Phantom(meta["letter"], float(meta.get("background", 0)), float(meta.get("amplitude", 1)))
    return ph, ScalarField(grid, ph.values(grid))


def run_inversion(cfg: RunConfig, m, out: Path, label: str = "c_comp"):
    sc = cfg.bundle(cfg.scenario or m.meta.get("scenario"))
    grid = SpaceTimeGrid(m.grid.A, m.grid.B, m.grid.T, cfg.inverse_nx, cfg.inverse_nt)
    smoothing = sc.smoothing if cfg.smoothing is None else cfg.smoothing
    data = cauchy_from_measurements(m, grid, sc.g0, smoothing, cfg.smoother_strength)
    params = FunctionalParams(sc.lam, sc.beta, sc.k, m.t0, cfg.penalty)
    truth = _truth_from_meta(m.meta, grid)
    report = invert(data, params, cfg.minimizer(), c_true=None if truth is None else truth[1],
                    mode=cfg.mode, gamma=cfg.gamma)
    out.mkdir(parents=True, exist_ok=True)
    write_cfld(out / f"{label}.cfld", report.c_comp)
    write_cfld(out / "w_min.cfld", report.w_min)
    write_csv(out / f"{label}.csv", report.c_comp)
    write_pgm(out / f"{label}.pgm", report.c_comp.values)
    corr = None
    if truth is not None:
        write_pgm(out / "c_true.pgm", truth[1].values)
        corr = correlation(report.c_comp, truth[0].fraction(grid))
    return report, corr


def cmd_invert(cfg: RunConfig, out: Path) -> int:
    if not cfg.measurements:
        raise ConfigError("invert needs a CMEAS file (positional argument or measurements=)")
    m = read_cmeas(cfg.measurements)
    report, corr = run_inversion(cfg, m, out)
    entries = cfg.entries()
    entries["measurements"] = str(Path(cfg.measurements).resolve())
    entries.update(provenance(cfg, None))
    entries.update({f"result.{k}": v for k, v in report.manifest().items()})
    entries["result.J_trace"] = ",".join(repr(j) for j in report.J_trace)
    if corr is not None:
        entries["result.correlation"] = f"{corr:.17g}"
    write_manifest(out / "manifest.txt", entries)
    err = "" if report.rel_l2_error is None else f" rel_error={report.rel_l2_error:.6g}"
    print(f"INVERT iterations={report.iterations} J={report.J_trace[-1]:.6g} "
          f"converged={str(report.converged).lower()}{err}")
    if not report.converged:
        print(f"INVERT not converged: {report.message}")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    lines = []
    ok = True
    g17 = SpaceTimeGrid(1.0, 2.0, 1.0, 17, 17)
    for lam, lhs, rhs, passed in lemma_suite(g17, trials=cfg.lemma_trials, seed=cfg.seed or 0):
        ok &= passed
        lines.append(f"LEMMA1 {'pass' if passed else 'fail'} lambda={lam:g} lhs={lhs:.6g} rhs={rhs:.6g}")

    sweep = carleman_sweep(SpaceTimeGrid(1.0, 2.0, 1.0, 33, 33))
    base = None
    for lam, reps in sweep.items():
        vals = [r.C_hat for r in reps]
        positive = all(v is not None and v > 0 for v in vals)
        cmin = min(v for v in vals if v is not None) if any(v is not None for v in vals) else float("nan")
        base = cmin if base is None else base
        passed = positive and cmin >= 0.5 * base
        ok &= passed
        lines.append(f"CARLEMAN {'pass' if passed else 'fail'} lambda={lam:g} Chat={cmin:.6g}")

    for gap, bound, passed in convexity_suite(SpaceTimeGrid(1.0, 2.0, 1.0, 9, 9),
                                              pairs=cfg.convexity_pairs, seed=cfg.seed or 0):
        ok &= passed
        lines.append(f"CONVEXITY {'pass' if passed else 'fail'} gap={gap:.6g} bound={bound:.6g}")

    try:
        s = theory_schedule(cfg.theory_gamma, cfg.theory_delta, 1.0, 2.0, cfg.theory_T)
        lines.append(f"SCHEDULE pass T={cfg.theory_T:g} gamma={s.gamma:g} eta1={s.eta1:.17g} "
                     f"eta2={s.eta2:.17g} rho={s.rho:.17g} lambda={s.lambda_of_delta:.6g} "
                     f"beta={s.beta_of_delta:.6g}")
    except GeometryError as exc:
        ok = False
        lines.append(f"SCHEDULE fail T={cfg.theory_T:g} min_T={exc.min_T:.17g}")
    try:
        theory_schedule(cfg.theory_gamma, cfg.theory_delta, 1.0, 2.0, 1.0)
        ok = False
        lines.append("GEOMETRY fail T=1 accepted")
    except GeometryError as exc:
        lines.append(f"GEOMETRY pass T=1 rejected min_T={exc.min_T:.17g}")

    print("\n".join(lines))
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_reproduce(cfg: RunConfig, out: Path, test: str) -> int:
    names = REPRODUCE_GROUPS.get(test, (test,) if test in SCENARIOS else None)
    if names is None:
        raise ConfigError(f"unknown test {test!r}; choose from {sorted(REPRODUCE_GROUPS) + list(SCENARIOS)}")
    rows = []
    status = EXIT_OK
    for name in names:
        sc = cfg.bundle(name)
        sim = simulate(sc, paper_fine=cfg.paper_fine)
        m = sim.measurements
        m.meta.update(letter=sc.letter, background=repr(sc.background), amplitude=repr(sc.amplitude))
        comments = {k: m.meta[k] for k in sorted(m.meta)}
        if sc.sigma > 0:
            m = noisy_measurements(m, sc.sigma, sc.seed)
            comments.update(sigma=repr(sc.sigma), seed=str(sc.seed), rng=RNG_ALGORITHM)
        sub = out / name
        sub.mkdir(parents=True, exist_ok=True)
        write_cmeas(sub / "measurements.cmeas", m, comments)
        run_cfg = dataclasses.replace(cfg, scenario=name)
        report, corr = run_inversion(run_cfg, m, sub)
        rows.append(dict(test=name, T=sc.T, t0=sc.t0, sigma=sc.sigma, rel_error=report.rel_l2_error,
                         correlation=corr, iterations=report.iterations, converged=report.converged))
        print(f"REPRODUCE {name} rel_error={report.rel_l2_error:.6g} correlation={corr:.4f} "
              f"iterations={report.iterations} converged={str(report.converged).lower()}")
        if not report.converged:
            status = max(status, EXIT_NONCONVERGED)

    with open(out / "errors.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    err = {r["test"]: r["rel_error"] for r in rows}
    if test == "test2":
        passed = err["test2_eps001"] >= err["test2_eps002"]
        print(f"ORDERING {'pass' if passed else 'fail'} eps001={err['test2_eps001']:.6g} "
              f">= eps002={err['test2_eps002']:.6g}")
        if not passed:
            status = EXIT_VERIFY
    if test == "test1":
        print(f"RECORDED T1={err['test1_T1']:.6g} T01={err['test1_T01']:.6g}")
    if not all(np.isfinite(r["rel_error"]) for r in rows):
        status = EXIT_VERIFY
    return status


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="key=value file; flags override it")
    shared.add_argument("--out", type=Path, default=Path("out"))
    shared.add_argument("--seed", type=int)
    shared.add_argument("--lambda", dest="lam", type=float)
    shared.add_argument("--beta", type=float)
    shared.add_argument("--sigma", type=float)
    shared.add_argument("--mode", choices=("slice", "average"))
    shared.add_argument("--gamma", type=float)
    shared.add_argument("--paper-fine", action="store_true", default=None)
    shared.add_argument("--project-ball", dest="project_ball", type=float, metavar="R")
    shared.add_argument("--scenario", choices=SCENARIOS)
    shared.add_argument("--letter", choices=("A", "Omega"))
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="convexcip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[shared], help="forward solve and write a CMEAS file")
    inv = sub.add_parser("invert", parents=[shared], help="reconstruct c from a CMEAS file")
    inv.add_argument("measurements", nargs="?", help="CMEAS input (or measurements= in the config)")
    sub.add_parser("verify", parents=[shared], help="numerical checks of the estimates")
    rep = sub.add_parser("reproduce", parents=[shared], help="run a test scenario end to end")
    rep.add_argument("test", help=f"one of {sorted(REPRODUCE_GROUPS)} or a scenario name")
    return p


def _config(args) -> RunConfig:
    entries = read_keyvalue(args.config) if args.config else {}
    cfg = RunConfig.from_entries(entries)
    for name in ("seed", "lam", "beta", "sigma", "mode", "gamma", "paper_fine", "project_ball",
                 "scenario", "letter"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "measurements", None):
        cfg.measurements = args.measurements
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "invert":
            return cmd_invert(cfg, args.out)
        if args.command == "verify":
            return cmd_verify(cfg, args.out)
        return cmd_reproduce(cfg, args.out, args.test)
    except (FormatError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ForwardError as exc:
        print(f"error: forward solve failed: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
