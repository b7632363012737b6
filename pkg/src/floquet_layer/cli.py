"""Command-line pipeline: periodic state, Floquet multipliers, dispersion coefficients, verification.

Subcommands ``state``, ``floquet``, ``dispersion``, ``coeffs``, ``verify`` and
``run`` share ``--config``, ``--out`` and ``--seed``.  Tables are written as
CSV, reports as JSON, figures as SVG and fields as ``.npz``.  The thread count
of the linear-algebra backend is taken from ``FLOQUET_LAYER_THREADS``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import (
    ForceMode,
    ForceSpec,
    Params,
    PressureLaw,
    build_force,
    check_regime,
    nondimensionalize,
    regime_threshold,
)
from .grid import CellGrid

log = logging.getLogger("floquet_layer")


class ConfigError(ValueError):
    pass


class ArtifactError(ValueError):
    """An artifact needed by ``verify`` is missing a field or cannot be parsed."""


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, data: dict | None = None):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage, self.data = stage, data or {}


# ---------------------------------------------------------------- configuration

DEFAULTS = {
    "grid": {"n_h": 17, "n_z": 17, "n_t": 64},
    "solver": {"tol": 1e-12, "substeps": 4, "max_periods": 400, "scheme": "cnab2",
               "steps_per_period": 16, "linear_tol": 1e-12},
    "sweep": {"fractions": [0.02, 0.04, 0.08], "direction": 0, "min_ratio": 1.5},
    "regime": {"nu0": 4.0, "gamma0": 20.0, "eps0": 0.1, "a_rate": 1.0},
    "verify": {"coef_tol": 0.05, "slope_min": 2.7, "lambda0_tol": 1e-7, "ratio_min": 1.5},
}


@dataclass
class RunConfig:
    params: Params
    grid: dict
    force: ForceSpec
    solver: dict
    sweep: dict
    regime: dict
    verify: dict
    seed: int
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def make_grid(self) -> CellGrid:
        return CellGrid(self.params.alpha, self.grid["n_h"], self.grid["n_z"])


def _section(raw: dict, name: str, required: bool = False) -> dict:
    if name not in raw or raw[name] is None:
        if required:
            raise ConfigError(f"config is missing the '{name}' section")
        return dict(DEFAULTS.get(name, {}))
    val = raw[name]
    if not isinstance(val, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    out = dict(DEFAULTS.get(name, {}))
    out.update(val)
    return out


def _params(raw: dict) -> Params:
    pr = raw.get("params")
    if not isinstance(pr, dict):
        raise ConfigError("config is missing the 'params' section")
    pr = dict(pr)
    pressure = PressureLaw(**pr.pop("pressure", {}) or {})
    dim_n = int(pr.get("dim_n", 2))
    alpha = tuple(pr.get("alpha", (0.21,) * (dim_n - 1)))
    mu_star = float(pr.get("mu_star", 2.0))
    if "dimensional" in pr:
        d = pr["dimensional"]
        try:
            p = nondimensionalize(d["mu"], d["mu_prime"], d["rho_star"], d["d"], d["T"], d["p_prime"],
                                  d.get("force_scale", 0.0), dim_n=dim_n, mu_star=mu_star,
                                  alpha=alpha, pressure=pressure)
        except KeyError as e:
            raise ConfigError(f"dimensional parameters need key {e}") from None
    else:
        try:
            p = Params(float(pr["nu"]), float(pr["nu_tilde"]), float(pr["gamma"]), 0.0,
                       mu_star, dim_n, alpha, pressure)
        except KeyError as e:
            raise ConfigError(f"params section needs key {e}") from None
        S = float(pr.get("S_force", 0.0))
        if "S_fraction" in pr:
            S = float(pr["S_fraction"]) * regime_threshold(p.nu, p.nu_tilde, p.gamma)
        p = p.with_force(S)
    return p


def _force(raw: dict, dim_n: int) -> ForceSpec:
    f = raw.get("force", "default")
    if f in (None, "default"):
        return ForceSpec.default(dim_n)
    if not isinstance(f, dict) or "modes" not in f:
        raise ConfigError("force section must be 'default' or hold a 'modes' list")
    modes = []
    for m in f["modes"]:
        amp = m.get("amplitude", 1.0)
        if isinstance(amp, (list, tuple)):
            amp = complex(amp[0], amp[1])
        modes.append(ForceMode(tuple(m["k"]), int(m["m"]), m["profile"], int(m["component"]), complex(amp)))
    return ForceSpec(tuple(modes))


def parse_config(raw: dict, seed: int | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    params = _params(raw)
    grid = _section(raw, "grid", required=True)
    return RunConfig(params, grid, _force(raw, params.dim_n), _section(raw, "solver"),
                     _section(raw, "sweep"), _section(raw, "regime"), _section(raw, "verify"),
                     int(seed if seed is not None else raw.get("seed", 0)), raw)


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        raw = default_config()
    else:
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
    return parse_config(raw, seed)


def default_config() -> dict:
    """Desk-scale configuration: nu = nu_tilde = 10, gamma = 40, force at half the regime threshold."""
    return {
        "params": {"nu": 10.0, "nu_tilde": 10.0, "gamma": 40.0, "S_fraction": 0.5,
                   "dim_n": 2, "alpha": [0.21]},
        "grid": dict(DEFAULTS["grid"]),
        "force": "default",
        "seed": 0,
    }


# ---------------------------------------------------------------- output helpers

class Outputs:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")

    def csv(self, name: str, header: list[str], rows) -> None:
        with self.path(name).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for r in rows:
                wr.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialize {type(o)}")


@dataclass
class RunManifest:
    config_hash: str
    params: dict
    versions: dict
    timings: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    status: str = "running"
    failed_stage: str | None = None

    def write(self, out: Outputs) -> None:
        self.files = sorted(set(out.files + ["manifest.json"]))
        (out.root / "manifest.json").write_text(
            json.dumps(self.__dict__, indent=2, sort_keys=True, default=_json_default) + "\n")


def _manifest(cfg: RunConfig) -> RunManifest:
    p = cfg.params
    params = {"nu": p.nu, "nu_tilde": p.nu_tilde, "gamma": p.gamma, "S_force": p.S_force,
              "mu_star": p.mu_star, "dim_n": p.dim_n, "alpha": list(p.alpha),
              "pressure": {"kind": p.pressure.kind, "kappa": p.pressure.kappa}}
    versions = {"floquet_layer": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "python": platform.python_version()}
    return RunManifest(cfg.digest, params, versions, tolerances={**cfg.solver, **cfg.verify})


# ---------------------------------------------------------------- stages

class Pipeline:
    """Shared state between stages; each stage writes its own artifacts."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = Outputs(out)
        self.grid = cfg.make_grid()
        self.manifest = _manifest(cfg)
        self.state = None
        self.force = None
        self.u0 = None
        self.coeffs = None
        self.rng = np.random.default_rng(cfg.seed)

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except StageError:
            raise
        except Exception as e:  # noqa: BLE001 - every failure is reported with its stage
            data = {"history": getattr(e, "history", None)}
            raise StageError(name, f"{type(e).__name__}: {e}", data) from e
        finally:
            self.manifest.timings[name] = time.perf_counter() - t0

    # state -------------------------------------------------------------
    def run_state(self):
        return self._timed("state", self._state)

    def _state(self):
        from .periodic_state import PeriodicState, energy_report, residual, solve_periodic_state
        from .plots import plot_defects, plot_energy

        cfg, g, p = self.cfg, self.grid, self.cfg.params
        n_t = int(cfg.grid["n_t"])
        regime = check_regime(p, **cfg.regime)
        if p.S_force == 0:
            self.force = None
            st = PeriodicState.trivial(g, p, n_t)
            st.defect_history = [0.0]
        else:
            self.force = build_force(cfg.force, g, n_t)
            st = solve_periodic_state(p, g, self.force.samples, n_t=n_t,
                                      substeps=int(cfg.solver["substeps"]), tol=float(cfg.solver["tol"]),
                                      max_periods=int(cfg.solver["max_periods"]),
                                      scheme=cfg.solver["scheme"])
        self.state = st
        en = energy_report(st)
        res = residual(st, None if self.force is None else self.force.samples)
        np.savez(self.out.path("state.npz"), phi=st.phi, w=st.w, rho=st.rho,
                 x_h=np.asarray(g.x_h[0]), z=g.z)
        self.out.csv("energy.csv", ["t", "E2", "E4"], ([r["t"], r["E2"], r["E4"]] for r in en.rows()))
        self.out.csv("defects.csv", ["period", "defect", "ratio"],
                     ([k + 1, d, st.contraction[k - 1] if 0 < k <= len(st.contraction) else ""]
                      for k, d in enumerate(st.defect_history)))
        mean_def = float(np.abs(g.mean(st.rho) - 1.0).max())
        contraction = float(np.median(st.contraction[-5:])) if st.contraction else 0.0
        rep = {
            "regime": regime.as_dict(),
            "residual": res.as_dict(),
            "energy": {"E2_max": float(en.E2.max()), "E4_max": float(en.E4.max()),
                       "D2": en.D2, "D4": en.D4, "E4_ratio": en.E4_ratio, "D4_ratio": en.D4_ratio},
            "rho_min": st.rho_min,
            "mean_density_defect": mean_def,
            "periods": len(st.defect_history),
            "contraction": contraction,
            "force_raw_norm": None if self.force is None else self.force.raw_norm,
            "regime_vs_observed_agree": bool(regime.S_ok == (contraction < 1.0)),
        }
        self.out.json("state_report.json", rep)
        plot_defects(st.defect_history, self.out.path("defects.svg"))
        plot_energy(st.times, en.E2, en.E4, self.out.path("energy.svg"))
        return rep

    # floquet -----------------------------------------------------------
    def run_floquet(self, etas):
        return self._timed("floquet", lambda: self._floquet(etas))

    def _floquet(self, etas):
        from .floquet import monodromy
        from .plots import plot_multipliers

        spp = int(self.cfg.solver["steps_per_period"])
        summary = []
        for i, eta in enumerate(etas):
            res = monodromy(eta, self.state, steps_per_period=spp, keep_matrix=False)
            tag = f"eta{i}"
            self.out.csv(f"multipliers_{tag}.csv", ["index", "re_mu", "im_mu", "abs_mu", "re_lambda", "im_lambda"],
                         ([k, m.real, m.imag, abs(m), lam.real, lam.imag]
                          for k, (m, lam) in enumerate(zip(res.multipliers, res.exponents))))
            plot_multipliers(res.multipliers, self.out.path(f"multipliers_{tag}.svg"), f"eta' = {list(eta)}")
            lam0 = complex(res.exponents[0])
            summary.append({"eta": list(eta), "lambda0": [lam0.real, lam0.imag], "ratio": res.ratio,
                            "beta_gap": res.beta_gap, "abs_mu2": float(abs(res.multipliers[1])),
                            "max_abs_mu": float(abs(res.multipliers[0]))})
        self.out.json("floquet.json", {"points": summary})
        return summary

    # coefficients ------------------------------------------------------
    def run_coeffs(self):
        return self._timed("coeffs", self._coeffs)

    def _coeffs(self):
        from .dispersion import perturbation_coefficients
        from .floquet import eigenfunction_u0, u0_size

        st = self.state
        tol = float(self.cfg.solver["linear_tol"])
        self.u0 = eigenfunction_u0(st, tol=tol)
        self.coeffs = perturbation_coefficients(st, tol=tol, u0=self.u0)
        d = self.coeffs.as_dict()
        d["u0_size"] = u0_size(st, self.u0)
        d["u0_size_reference"] = 1.0 / (st.params.nu * st.params.gamma**2)
        self.out.json("coeffs.json", d)
        return d

    # dispersion --------------------------------------------------------
    def run_dispersion(self, etas=None):
        return self._timed("dispersion", lambda: self._dispersion(etas))

    def _dispersion(self, etas):
        from .dispersion import default_sweep, dispersion_sweep, model_exponent
        from .plots import plot_dispersion

        cfg, p = self.cfg, self.cfg.params
        if self.coeffs is None:
            self._coeffs()
        if etas is None:
            etas = default_sweep(p.alpha, cfg.sweep["fractions"], int(cfg.sweep["direction"]))
        rep = dispersion_sweep(etas, self.state, self.coeffs,
                               steps_per_period=int(cfg.solver["steps_per_period"]))
        co = self.coeffs
        rows = []
        for eta, lam, simple in zip(rep["eta"], rep["lambda"], rep["simple"]):
            m = model_exponent(eta, co.a, co.A)
            rows.append(list(eta) + [lam[0], lam[1], m.real, m.imag, abs(complex(*lam) - m), int(simple)])
        d = p.dim_n - 1
        hdr = [f"eta_{j + 1}" for j in range(d)] + ["re_lambda", "im_lambda", "re_model", "im_model",
                                                     "remainder", "simple"]
        self.out.csv("sweep.csv", hdr, rows)
        self.out.json("dispersion.json", rep)
        A = float(np.linalg.eigvalsh(0.5 * (co.A + co.A.T)).min())
        plot_dispersion(rep, co.kappa0_hat, p.gamma, p.nu, A, self.out.path("dispersion.svg"))
        return rep


# ---------------------------------------------------------------- verification

_REQUIRED = {
    "state_report.json": ("mean_density_defect", "rho_min", "contraction"),
    "coeffs.json": ("a", "A", "kappa0_hat", "sign", "cell_residuals"),
    "dispersion.json": ("a_fit", "A_fit", "remainder_slope", "bound_ok", "matching_sign"),
    "floquet.json": ("points",),
}


def _load_artifact(out: Path, name: str) -> dict:
    try:
        data = json.loads((out / name).read_text())
    except json.JSONDecodeError as e:
        raise ArtifactError(f"artifact {name} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ArtifactError(f"artifact {name} must hold a JSON object")
    missing = [k for k in _REQUIRED[name] if k not in data]
    if missing:
        raise ArtifactError(f"artifact {name} lacks field(s) {', '.join(missing)}")
    return data


def verify(out: Path, cfg: RunConfig) -> dict:
    """Pass/fail per check from the artifacts in ``out``.

    Raises ``FileNotFoundError`` for a missing artifact and :class:`ArtifactError`
    for one that cannot be parsed or lacks a field.
    """
    out = Path(out)
    need = ["state_report.json", "coeffs.json", "dispersion.json", "floquet.json"]
    missing = [n for n in need if not (out / n).exists()]
    if missing:
        raise FileNotFoundError(f"missing artifacts: {', '.join(missing)}")
    st, co, dp, fq = (_load_artifact(out, n) for n in need)
    v = cfg.verify
    p = cfg.params
    checks = {}

    def add(name, ok, value):
        checks[name] = {"passed": bool(ok), "value": value}

    add("mean_density", st["mean_density_defect"] < 1e-10, st["mean_density_defect"])
    add("density_positive", st["rho_min"] > 0.5, st["rho_min"])
    add("contraction", st["contraction"] < 0.9, st["contraction"])
    zero = [q for q in fq["points"] if not any(q["eta"])]
    if zero:
        lam0 = float(np.hypot(*zero[0]["lambda0"]))
        add("kernel_eigenvalue", lam0 < v["lambda0_tol"], lam0)
        add("simplicity_ratio", zero[0]["ratio"] >= v["ratio_min"], zero[0]["ratio"])
        add("spectral_gap", zero[0]["abs_mu2"] < 1.0, zero[0]["abs_mu2"])
    A = np.asarray(co["A"], float)
    A_fit = np.asarray(dp["A_fit"], float)
    A_err = float(np.abs(A - A_fit).max() / np.abs(A_fit).max())
    add("coefficient_agreement", A_err <= v["coef_tol"], A_err)
    a = np.asarray(co["a"], float)
    a_fit = np.asarray(dp["a_fit"], float)
    a_err = float(np.abs(a - a_fit).max() / max(np.abs(a).max(), 1e-6 * np.abs(A).max()))
    add("drift_agreement", a_err <= v["coef_tol"], a_err)
    add("remainder_slope", dp["remainder_slope"] >= v["slope_min"], dp["remainder_slope"])
    add("decay_bound", dp["bound_ok"], dp["bound_ok"])
    g2nu = p.gamma**2 / p.nu
    lam_min = float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())
    slack = (co["kappa0_hat"] - p.nu / p.gamma**2) * g2nu
    add("definiteness", co["kappa0_hat"] > 0 and lam_min >= slack, {"min_eig": lam_min, "bound": slack})
    add("sign_calibration", dp["matching_sign"] == co["sign"], dp["matching_sign"])
    add("cell_residual", max(co["cell_residuals"]) < 1e-7, max(co["cell_residuals"]))
    passed = all(c["passed"] for c in checks.values())
    report = {"passed": passed, "checks": checks}
    (out / "verify.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
    return report


# ---------------------------------------------------------------- entry point

def _etas(text: str | None, dim_n: int):
    if not text:
        return None
    vals = [float(s) for s in text.split(",") if s.strip()]
    d = dim_n - 1
    if d == 1:
        return [(v,) for v in vals]
    if len(vals) % d:
        raise ConfigError("--eta needs a multiple of n-1 values")
    return [tuple(vals[i:i + d]) for i in range(0, len(vals), d)]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="floquet-layer", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("state", "compute the periodic base state"),
                        ("floquet", "Floquet multipliers at given eta'"),
                        ("coeffs", "perturbation coefficients a, A and the Stokes reference"),
                        ("dispersion", "sweep of the leading exponent and comparison with the coefficients"),
                        ("verify", "pass/fail report from existing artifacts"),
                        ("run", "full pipeline followed by verification")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, default=None, help="YAML configuration (default: desk scale)")
        sp.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        sp.add_argument("--eta", type=str, default=None, help="comma-separated eta' values")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.command == "verify":
        try:
            rep = verify(args.out, cfg)
        except (FileNotFoundError, ArtifactError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        _print_verify(rep)
        return 0 if rep["passed"] else 1
    pipe = Pipeline(cfg, args.out)
    etas = _etas(args.eta, cfg.params.dim_n)
    code = 0
    try:
        pipe.run_state()
        if args.command in ("floquet", "run"):
            zero = (0.0,) * (cfg.params.dim_n - 1)
            pts = etas or [zero]
            if args.command == "run" and zero not in pts:
                pts = [zero] + pts
            pipe.run_floquet(pts)
        if args.command in ("coeffs", "dispersion", "run"):
            pipe.run_coeffs()
        if args.command in ("dispersion", "run"):
            pipe.run_dispersion(etas if args.command == "dispersion" else None)
        pipe.manifest.status = "complete"
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        pipe.out.json(f"failure_{e.stage}.json", {"stage": e.stage, "message": str(e), **e.data})
        pipe.manifest.status = "failed"
        pipe.manifest.failed_stage = e.stage
        code = 1
    if code == 0 and args.command == "run":
        rep = verify(args.out, cfg)
        pipe.out.files.append("verify.json")
        _print_verify(rep)
        code = 0 if rep["passed"] else 1
    pipe.manifest.write(pipe.out)
    return code


def _print_verify(rep: dict) -> None:
    for name, c in rep["checks"].items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']}")
    print("verify:", "PASS" if rep["passed"] else "FAIL")


if __name__ == "__main__":
    raise SystemExit(main())
