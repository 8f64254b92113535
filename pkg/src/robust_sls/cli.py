"""Command-line front end.

Commands::

    robust-sls synth <config>
    robust-sls verify <config> <result>
    robust-sls simulate <config> <result> --input impulse|step|<file.csv> [--seed N]
    robust-sls norm <result>

Exit codes: 0 success, 2 infeasible at every gamma, 3 configuration or
input error, 4 LP fault, 5 verification violation. Relative output
directories are resolved against the directory holding the config file.
"""

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .lp import LpIterationLimit, LpNumericalError
from .operators import FirResponse, fir_l1_norm
from .sls import Plant, SystemResponse, UncertainPlant, achievability_residual, predicted_response, simulate_closed_loop
from .structure import SupportGraph, locality_mask
from .synthesis import CertificateError, CostOutput, InfeasibleAtAllGamma, SynthesisProblem, bisect_gamma
from .verify import (
    PerturbationKind,
    PerturbationSpec,
    horizon_self_check,
    run_samples,
    sample_perturbation,
    write_gains_csv,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3
EXIT_LP = 4
EXIT_VIOLATION = 5

RESIDUAL_TOL = 1e-8


class ConfigError(ValueError):
    """Unreadable or invalid configuration or result file."""


class VerificationFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    plant: Plant
    cost: CostOutput
    epsilon: float
    fir_horizon: int
    locality: dict = None
    gamma_tol: float = 1e-4
    margin: float = 1e-6
    gamma_hi: float = None
    solver: str = "auto"
    samples: int = 200
    verify_horizon: int = None
    seed: int = 0
    kinds: list = field(default_factory=lambda: [k.value for k in PerturbationKind])
    output_dir: Path = Path(".")

    def problem(self):
        mask = None
        if self.locality is not None:
            graph = SupportGraph.from_plant(self.plant)
            mask = locality_mask(graph, self.locality["d"], self.fir_horizon, self.locality.get("tau", 0))
        return SynthesisProblem(
            self.plant, self.cost, self.epsilon, self.fir_horizon, mask,
            self.margin, self.gamma_tol, self.gamma_hi, self.solver,
        )


def _schema():
    text = resources.files(__package__).joinpath("run_config.schema.json").read_text()
    return json.loads(text)


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


def load_config(path):
    """Read, schema-check and convert a run configuration."""
    path = Path(path)
    data = _read_json(path, "config")
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {path}: {where}: {exc.message}") from exc
    syn = data["synthesis"]
    ver = data.get("verify", {})
    try:
        plant = Plant(data["plant"]["A"], data["plant"]["B"])
        cost = CostOutput(data["cost"]["C"], data["cost"]["D"])
        gamma_hi = syn.get("gamma_hi", "auto")
        cfg = RunConfig(
            plant=plant,
            cost=cost,
            epsilon=float(data["uncertainty"]["epsilon"]),
            fir_horizon=syn["fir_horizon"],
            locality=syn.get("locality"),
            gamma_tol=syn.get("gamma_tol", 1e-4),
            margin=syn.get("margin", 1e-6),
            gamma_hi=None if gamma_hi == "auto" else float(gamma_hi),
            solver=syn.get("solver", "auto"),
            samples=ver.get("samples", 200),
            verify_horizon=ver.get("horizon", 4 * syn["fir_horizon"]),
            seed=ver.get("seed", 0),
            output_dir=path.parent / data.get("output", {}).get("dir", "."),
        )
        if "kinds" in ver:
            cfg.kinds = list(ver["kinds"])
        cfg.problem()
    except ValueError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    if cfg.verify_horizon < cfg.fir_horizon + 1:
        raise ConfigError(f"config {path}: verify horizon must be at least fir_horizon + 1")
    return cfg


def _taps(fir):
    return [[[float(v) for v in row] for row in tap] for tap in fir.taps]


def _write_json(obj, path):
    # Python's float repr is the shortest string that round-trips exactly.
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")


def result_document(result):
    return {
        "gamma_star": float(result.gamma_star),
        "epsilon": float(result.epsilon),
        "margin": float(result.margin),
        "norms": {"q_phi": float(result.norm_qphi), "phi": float(result.norm_phi)},
        "eq22_lhs": float(result.certificate_lhs),
        "residual_max": float(result.residual_max),
        "cost": {"C": result.cost.C.tolist(), "D": result.cost.D.tolist()},
        "phi_x": _taps(result.response.phi_x),
        "phi_u": _taps(result.response.phi_u),
        "bisection_trace": [[float(g), bool(ok)] for g, ok in result.bisection_trace],
        "verify": None,
    }


def load_result(path):
    """Read a result file; returns ``(document, phi_x taps, phi_u taps)``."""
    doc = _read_json(path, "result")
    try:
        gamma = float(doc["gamma_star"])
        px = np.array(doc["phi_x"], dtype=float)
        pu = np.array(doc["phi_u"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"result {path} is malformed: {exc}") from exc
    if px.ndim != 3 or pu.ndim != 3 or px.shape[0] != pu.shape[0] or px.shape[1:] != (px.shape[1], px.shape[1]):
        raise ConfigError(f"result {path}: phi_x / phi_u tap tensors have inconsistent shapes")
    if not gamma > 0:
        raise ConfigError(f"result {path}: gamma_star must be positive")
    return doc, px, pu


def _response(px, pu):
    """SystemResponse from stored taps, and the worst deviation of tap 1 from I."""
    first = float(np.abs(px[0] - np.eye(px.shape[1])).max())
    px = px.copy()
    px[0] = np.eye(px.shape[1])
    return SystemResponse(FirResponse(px), FirResponse(pu)), first


def _check_against(cfg, resp):
    if (resp.n_states, resp.n_inputs) != (cfg.plant.n_states, cfg.plant.n_inputs):
        raise ConfigError("result dimensions do not match the config plant")


def cmd_synth(config_path):
    cfg = load_config(config_path)
    result = bisect_gamma(cfg.problem())
    out = cfg.output_dir / "result.json"
    _write_json(result_document(result), out)
    print(f"gamma_star = {result.gamma_star:.17g}  ({out})")
    return EXIT_OK


def cmd_verify(config_path, result_path):
    cfg = load_config(config_path)
    doc, px, pu = load_result(result_path)
    resp, first_tap = _response(px, pu)
    _check_against(cfg, resp)
    gamma = float(doc["gamma_star"])
    eps = cfg.epsilon

    residual = max(first_tap, float(np.abs(achievability_residual(cfg.plant, resp).taps).max()))
    norm_q = fir_l1_norm(cfg.cost.apply(resp))
    norm_phi = fir_l1_norm(resp.stacked)
    lhs = norm_q + gamma * eps * norm_phi
    records = run_samples(cfg.plant, resp, cfg.cost, eps, gamma, cfg.samples, cfg.verify_horizon, cfg.seed, cfg.kinds)
    spec = PerturbationSpec(PerturbationKind.LTI_STATIC, eps, cfg.verify_horizon, cfg.seed)
    gain_n, gain_2n, agree = horizon_self_check(cfg.plant, resp, cfg.cost, spec)

    violations = sum(r.exact_gain >= gamma for r in records)
    problems = []
    if residual > RESIDUAL_TOL:
        problems.append(f"achievability residual {residual:.3g} exceeds {RESIDUAL_TOL:g}")
    if not lhs < gamma:
        problems.append(f"certificate lhs {lhs:.17g} >= gamma {gamma:.17g}")
    if violations:
        problems.append(f"{violations} of {len(records)} sampled gains reach gamma")

    summary = {
        "max_gain": max(r.exact_gain for r in records),
        "min_margin": min(r.margin for r in records),
        "samples": len(records),
    }
    report = {
        "gamma_star": gamma,
        "epsilon": eps,
        "residual_max": residual,
        "norms": {"q_phi": norm_q, "phi": norm_phi},
        "eq22_lhs": lhs,
        "certificate_holds": bool(lhs < gamma),
        **summary,
        "violations": int(violations),
        "horizon": cfg.verify_horizon,
        "horizon_check": {"gain_n": gain_n, "gain_2n": gain_2n, "agree": bool(agree)},
        "problems": problems,
    }
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_gains_csv(records, cfg.output_dir / "gains.csv")
    _write_json(report, cfg.output_dir / "verify.json")
    doc["verify"] = summary
    _write_json(doc, Path(result_path))
    if problems:
        raise VerificationFailure("; ".join(problems))
    print(f"verified {len(records)} samples: max gain {summary['max_gain']:.17g} < gamma {gamma:.17g}")
    return EXIT_OK


def _disturbance(source, n, horizon):
    if source == "impulse":
        w = np.zeros((horizon, n))
        w[0] = 1.0
        return w
    if source == "step":
        return np.ones((horizon, n))
    try:
        with open(source, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ConfigError(f"cannot read disturbance file {source}: {exc.strerror}") from exc
    try:
        float(rows[0][0])
    except (IndexError, ValueError):
        rows = rows[1:]
    try:
        w = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ConfigError(f"disturbance file {source}: {exc}") from exc
    if w.ndim != 2 or w.shape[1] != n or w.shape[0] == 0:
        raise ConfigError(f"disturbance file {source} must have {n} numeric columns")
    return w


def _svg(t, series, path):
    """One panel per channel; simulated solid, predicted dashed."""
    width, panel, pad = 640, 120, 40
    height = pad + len(series) * (panel + pad)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    span = max(t[-1] - t[0], 1)
    for i, (label, sim, pred) in enumerate(series):
        top = pad + i * (panel + pad)
        lo = min(sim.min(), pred.min())
        hi = max(sim.max(), pred.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0

        def points(y):
            xs = pad + (t - t[0]) / span * (width - 2 * pad)
            ys = top + panel - (y - lo) / (hi - lo) * panel
            return " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(xs, ys))

        parts.append(f'<text x="{pad}" y="{top - 6}">{label}</text>')
        parts.append(f'<rect x="{pad}" y="{top}" width="{width - 2 * pad}" height="{panel}" fill="none" stroke="#bbb"/>')
        parts.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{points(sim)}"/>')
        parts.append(
            f'<polyline fill="none" stroke="#d62728" stroke-width="1" stroke-dasharray="4 3" points="{points(pred)}"/>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def cmd_simulate(config_path, result_path, source="impulse", seed=None):
    cfg = load_config(config_path)
    _, px, pu = load_result(result_path)
    resp, _ = _response(px, pu)
    _check_against(cfg, resp)
    n, p = resp.n_states, resp.n_inputs
    w = _disturbance(source, n, cfg.verify_horizon)
    N = w.shape[0]
    if N < resp.length + 1:
        raise ConfigError(f"disturbance horizon {N} is shorter than T + 1 = {resp.length + 1}")
    if seed is None:
        plant = UncertainPlant.nominal_only(cfg.plant, N)
    else:
        spec = PerturbationSpec(cfg.kinds[0], cfg.epsilon, N, seed)
        plant = UncertainPlant(cfg.plant, *sample_perturbation(spec, (n, p)), cfg.epsilon)
    x, u, w_hat = simulate_closed_loop(plant, resp, w)
    pred_x, pred_u = predicted_response(plant, resp, w)

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(p)] + [f"w_hat{i}" for i in range(n)]
              + [f"predicted_x{i}" for i in range(n)] + [f"predicted_u{i}" for i in range(p)])
    with open(cfg.output_dir / "traces.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(N):
            values = np.concatenate([x[t], u[t], w_hat[t], pred_x[t], pred_u[t]])
            writer.writerow([t] + [f"{v:.17g}" for v in values])
    t = np.arange(N, dtype=float)
    series = [(f"x{i}", x[:, i], pred_x[:, i]) for i in range(n)] + [(f"u{i}", u[:, i], pred_u[:, i]) for i in range(p)]
    _svg(t, series, cfg.output_dir / "traces.svg")
    gap = max(np.abs(x - pred_x).max(), np.abs(u - pred_u).max())
    print(f"simulated {N} steps; max |simulated - predicted| = {gap:.3g}")
    return EXIT_OK


def cmd_norm(result_path):
    doc, px, pu = load_result(result_path)
    resp, _ = _response(px, pu)
    gamma, eps = float(doc["gamma_star"]), float(doc.get("epsilon", 0.0))
    try:
        cost = CostOutput(doc["cost"]["C"], doc["cost"]["D"])
        norm_q = fir_l1_norm(cost.apply(resp))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"result {result_path}: unusable cost block: {exc}") from exc
    norm_phi = fir_l1_norm(resp.stacked)
    lhs = norm_q + gamma * eps * norm_phi
    holds = lhs < gamma
    print(
        f"||Q Phi|| + gamma*eps*||Phi|| = {norm_q:.17g} + {gamma:.17g}*{eps:.17g}*{norm_phi:.17g} "
        f"= {lhs:.17g} {'<' if holds else '>='} gamma = {gamma:.17g}"
    )
    return EXIT_OK if holds else EXIT_VIOLATION


def build_parser():
    parser = argparse.ArgumentParser(prog="robust-sls", description="Robust L1 system level synthesis")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", help="synthesize a certified response")
    p.add_argument("config")
    p = sub.add_parser("verify", help="check a result against sampled perturbations")
    p.add_argument("config")
    p.add_argument("result")
    p = sub.add_parser("simulate", help="simulate the realized controller")
    p.add_argument("config")
    p.add_argument("result")
    p.add_argument("--input", default="impulse", help="impulse, step, or a CSV file with one column per state")
    p.add_argument("--seed", type=int, default=None, help="sample a perturbation with this seed")
    p = sub.add_parser("norm", help="print the robust performance certificate")
    p.add_argument("result")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args.config)
        if args.command == "verify":
            return cmd_verify(args.config, args.result)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.result, args.input, args.seed)
        return cmd_norm(args.result)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleAtAllGamma as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (LpIterationLimit, LpNumericalError, CertificateError) as exc:
        print(f"LP fault: {exc}", file=sys.stderr)
        return EXIT_LP
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
