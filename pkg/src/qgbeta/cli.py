"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 certificate or precondition error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .effective import ou_catalytic_moments
from .integrator import NumericalBlowUp, manifest, run_ensemble
from .resonance import NONRESONANT, classify_triple, is_strongly_resonant_pair
from .statistics import (
    CertificateError,
    action_law_distance,
    beta_convergence_study,
    stationary_action_law,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERTIFICATE = 3
EXIT_NUMERICAL = 4


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_manifest(cfg: ExperimentConfig, **extra) -> dict:
    body = manifest(cfg.model_params(), cfg.integrator_config(), **extra)
    body["experiment"] = cfg.experiment
    body["integrator"] = body.pop("config")
    body["config"] = cfg.raw
    body["config_hash"] = cfg.config_hash()
    body["version"] = __version__
    return body


def _certificate(cfg: ExperimentConfig):
    params = cfg.model_params()
    return is_strongly_resonant_pair(cfg.resonance_params(), params.cutoff)


def cmd_resonances(cfg: ExperimentConfig, out: Path, require_nonresonant: bool = False) -> int:
    params = cfg.model_params()
    rp = cfg.resonance_params()
    lattice = params.lattice
    rows = []
    full = lattice.full_modes
    for j in full:
        for n in full:
            if (n.kx, n.ky) < (j.kx, j.ky):
                continue
            k = (j.kx + n.kx, j.ky + n.ky)
            if k == (0, 0) or not lattice.contains(k):
                continue
            t = classify_triple(j, n, rp)
            if t.cls != NONRESONANT:
                rows.append(t)
    with open(out / "triples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["jx", "jy", "nx", "ny", "kx", "ky", "class", "defect"])
        for t in rows:
            w.writerow(t.row())
    cert = _certificate(cfg)
    _write_json(out / "certificate.json", cert.to_json())
    _write_json(out / "manifest.json", _run_manifest(cfg))
    if require_nonresonant and cert.strongly_resonant:
        print("strong resonances found within the cutoff", file=sys.stderr)
        return EXIT_CERTIFICATE
    return EXIT_OK


def _simulate(cfg: ExperimentConfig, out: Path, system: str) -> int:
    params = cfg.model_params()
    icfg = cfg.integrator_config()
    ens = run_ensemble(cfg.initial_state(), params, icfg, cfg.ensemble.n_paths, system)
    width = max(4, len(str(ens.n_paths - 1)))
    for traj in ens:
        traj.write_csv(out / f"trajectory_{traj.path:0{width}d}.csv")
    _write_json(out / "manifest.json", _run_manifest(cfg, system=system,
                                                      n_paths=ens.n_paths))
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    return _simulate(cfg, out, cfg.ensemble.system)


def cmd_effective(cfg: ExperimentConfig, out: Path) -> int:
    return _simulate(cfg, out, "effective")


def _require_certificate(cfg: ExperimentConfig, override: bool):
    cert = _certificate(cfg)
    if cert.strongly_resonant and not override:
        raise CertificateError("strongly resonant (L, K) within the cutoff; "
                               "rerun with --override-resonant for an exploratory study")
    return cert


def _per_mode_rows(report, **keys):
    for k, w in report.per_mode_w1.items():
        yield {**keys, "kx": k[0], "ky": k[1], "w1": w, "weight": report.weights[k]}


def _write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_compare(cfg: ExperimentConfig, out: Path, override: bool = False) -> int:
    cert = _require_certificate(cfg, override)
    s = cfg.study
    res = beta_convergence_study(
        cfg.model_params(), s.betas, cfg.integrator_config(), cfg.ensemble.n_paths,
        initial=cfg.initial_state(), kappas=s.kappas, uniformity_beta=s.uniformity_beta,
        times=s.times, coupling=s.coupling, null_seed=s.null_seed, n_boot=s.n_boot,
        certificate=cert, override_resonant=override,
    )
    _write_rows(out / "distances.csv", [r.as_dict() for r in res.rows])
    per_mode = [row for r in res.rows for row in _per_mode_rows(r.report, beta=r.beta,
                                                                  kappa=r.kappa)]
    _write_rows(out / "per_mode.csv", per_mode)
    summary = {"verdicts": res.verdicts(), "certificate": cert.to_json(),
               "rows": [r.as_dict() for r in res.rows]}
    if res.null is not None:
        summary["null"] = res.null.to_json()
    _write_json(out / "summary.json", summary)
    _write_json(out / "manifest.json", _run_manifest(cfg, n_paths=cfg.ensemble.n_paths))
    return EXIT_OK


def cmd_stationary(cfg: ExperimentConfig, out: Path, override: bool = False) -> int:
    cert = _require_certificate(cfg, override)
    params = cfg.model_params()
    icfg = cfg.integrator_config()
    st = cfg.stationary
    n = cfg.ensemble.n_paths
    laws = {}
    for system in ("interaction", "effective"):
        laws[system] = stationary_action_law(params, icfg, st.burn_in, n, cfg.initial_state(),
                                             system, st.stride)
    report = action_law_distance(laws["interaction"], laws["effective"],
                                 cfg.study.n_boot, paired=True)
    rows = []
    eff = laws["effective"]
    means = {s: (law.mean_action(), law.mean_action_se()) for s, law in laws.items()}
    for i, k in enumerate(eff.modes):
        row = {"kx": k.kx, "ky": k.ky}
        for s, (m, se) in means.items():
            row[f"mean_action_{s}"] = float(m[i])
            row[f"se_{s}"] = float(se[i])
        if k.kx == 0 and k.ky % 2 == 0:
            row["ou_mean_action"] = ou_catalytic_moments(k, params).stationary_mean_action
        else:
            row["ou_mean_action"] = ""
        rows.append(row)
    _write_rows(out / "stationary.csv", rows)
    summary = {"distance": report.to_json(), "certificate": cert.to_json()}
    if st.second_initial_scale is not None:
        # independent increments: shared ones would synchronise the two ensembles
        other = stationary_action_law(params, icfg.replace(seed=icfg.seed + 1), st.burn_in, n,
                                      cfg.initial_state(st.second_initial_scale),
                                      "effective", st.stride)
        mix = action_law_distance(eff, other, cfg.study.n_boot)
        summary["initial_condition_check"] = {
            "aggregate": mix.aggregate, "ci_width": mix.ci_width,
            "ok": mix.aggregate < 2 * mix.ci_width,
        }
    _write_json(out / "summary.json", summary)
    _write_json(out / "manifest.json", _run_manifest(cfg, n_paths=n))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgbeta", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=EXPERIMENTS, nargs="?",
                    help="experiment to run (default: the config's 'experiment')")
    ap.add_argument("--config", "-c", help="JSON config file")
    ap.add_argument("--output", "-o", default="out", help="output directory")
    ap.add_argument("--override-resonant", action="store_true",
                    help="run compare/stationary without a non-resonance certificate")
    ap.add_argument("--require-nonresonant", action="store_true",
                    help="resonances: exit 3 if a strong resonance is found")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig.from_dict({})
        command = args.command or cfg.experiment
        if args.command and args.command != cfg.experiment and "experiment" in cfg.raw:
            raise ConfigError(f"command {args.command!r} does not match the config's "
                              f"experiment {cfg.experiment!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if command == "resonances":
            return cmd_resonances(cfg, out, args.require_nonresonant)
        if command == "simulate":
            return cmd_simulate(cfg, out)
        if command == "effective":
            return cmd_effective(cfg, out)
        if command == "compare":
            return cmd_compare(cfg, out, args.override_resonant)
        return cmd_stationary(cfg, out, args.override_resonant)
    except CertificateError as exc:
        print(f"certificate error: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except NumericalBlowUp as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError) as exc:
        # invalid parameter combinations discovered only when running
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
