"""RateReport assembly and rendering (JSON is canonical, text is a summary)."""

import math
from dataclasses import dataclass, field
from typing import Optional

from .processing import PipelineResult
from .rate_objective import objective_terms
from .utils import digest, dumps, matrix_map, matrix_to_list, node_key

NATS_PER_BIT = math.log(2.0)


def instance_digest(inst) -> dict:
    return {
        "m": inst.m,
        "L": inst.L,
        "M": inst.M,
        "sigma_x": digest(inst.sigma_x),
        "distortions": {node_key(node): digest(d) for node, d in inst.distortion_map().items()},
    }


def _mc_section(mc) -> dict:
    return {
        "n_samples": mc.n_samples,
        "seed": mc.seed,
        "shards": mc.shards,
        "u_cov_deviation": mc.u_cov_deviation,
        "u_cov_bound": mc.u_cov_bound,
        "cross_moment": mc.cross_moment,
        "cross_moment_bound": mc.cross_moment_bound,
        "distortion_deviation": mc.distortion_deviation,
        "distortion_bound": mc.distortion_bound,
        "empirical_distortion": {k: matrix_to_list(v) for k, v in mc.empirical_distortion.items()},
        "within_bounds": mc.within_bounds,
    }


@dataclass
class RateReport:
    payload: dict
    bits: bool = False
    status: str = field(init=False)

    def __post_init__(self):
        self.status = self.payload["certificate_status"]

    def to_json(self) -> str:
        return dumps(self.payload)

    def to_text(self) -> str:
        return render_text(self.payload, self.bits)


def build_report(result: PipelineResult, bits=False, timings=False) -> RateReport:
    """Serializes a pipeline result; values stay in nats, --bits only adds value_bits."""
    rep = result.solve
    work = result.solved_instance
    payload = {
        "instance": instance_digest(result.instance),
        "value_nats": rep.value,
    }
    if bits:
        payload["value_bits"] = rep.value / NATS_PER_BIT
    payload.update(
        {
            "certificate_status": result.certificate,
            "reasons": list(result.reasons),
            "converged": rep.converged,
            "seed": rep.seed,
            "restarts": rep.restarts,
            "iterations": rep.iterations,
            "runs": rep.runs,
            "theta_star": matrix_map(rep.theta_star.as_map()),
            "multipliers": matrix_map(rep.multipliers.as_map()),
            "rate_terms": objective_terms(work, rep.theta_star),
            "kkt_residuals": rep.kkt_residuals.to_dict(),
        }
    )
    if result.enhanced is not None:
        payload["sig_tilde"] = matrix_map(result.enhanced.as_map())
    if result.construction is not None:
        sc = result.construction
        payload["enhancement_residuals"] = result.enhancement_residuals
        payload["lambda_min_eigs"] = {node_key(n): v for n, v in sorted(sc.lambda_min_eigs.items())}
        payload["structure_residuals"] = sc.structure_residuals
        payload["achievable_rate"] = result.achievable.path_a
        payload["achievable_terms"] = {
            "entropy_path": result.achievable.path_a,
            "telescoping_path": result.achievable.path_b,
            "per_node": result.achievable.terms,
        }
        payload["distortions"] = {
            node_key(node): {
                "required": matrix_to_list(entry.required),
                "achieved": matrix_to_list(entry.achieved),
                "closed_form": matrix_to_list(entry.closed_form),
                "path_gap": entry.path_gap,
                "satisfied": entry.satisfied,
            }
            for node, entry in sorted(result.distortions.items())
        }
    if result.epsilon_used is not None:
        payload["epsilon_used"] = result.epsilon_used
        payload["epsilon_schedule"] = result.epsilon_schedule
    if result.boundary_value is not None:
        payload["boundary_value_nats"] = result.boundary_value
    if result.retried:
        payload["retried_multistart"] = True
    if result.padding is not None:
        payload["padding"] = {
            "relabeling": {str(k): v for k, v in sorted(result.padding.relabeling.items())},
            "dummy_nodes": [node_key(n) for n in result.padding.dummy_nodes],
        }
    if result.monte_carlo is not None:
        payload["mc"] = _mc_section(result.monte_carlo)
    if timings:
        payload["wall_times"] = result.wall_times
    return RateReport(payload=payload, bits=bits)


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return "-"
    return f"{value:.3e}"


def render_text(payload: dict, bits=False) -> str:
    unit = "bits" if bits else "nats"
    value = payload["value_bits"] if bits and "value_bits" in payload else payload["value_nats"]
    inst = payload["instance"]
    lines = [
        f"Instance       m={inst['m']} L={inst['L']} M={inst['M']} (sigma_x {inst['sigma_x']})",
        f"Sum rate       {value:.10f} {unit}",
        f"Certificate    {payload['certificate_status']}",
        f"Converged      {payload['converged']} (seed {payload['seed']}, {payload['restarts']} runs, "
        f"{payload['iterations']} iterations)",
    ]
    if "achievable_rate" in payload:
        ach = payload["achievable_rate"] / (NATS_PER_BIT if bits else 1.0)
        lines.append(f"Achievable     {ach:.10f} {unit}")
    if "epsilon_used" in payload:
        lines.append(f"Epsilon        {payload['epsilon_used']:g} x lambda_min(sigma_x)")
        for row in payload["epsilon_schedule"]:
            lines.append(f"  eps={row['epsilon']:<8g} value={row['value_nats']:.10f} nats")
    kkt = payload["kkt_residuals"]
    lines.append("")
    lines.append(f"{'node':<8}{'stationarity':>14}{'compl.slack':>14}{'distortion ok':>15}")
    dist = payload.get("distortions", {})
    for key in dist or kkt["complementary_slackness"]:
        lines.append(
            f"{key:<8}{_fmt(kkt['stationarity'].get(key)):>14}"
            f"{_fmt(kkt['complementary_slackness'].get(key)):>14}"
            f"{str(dist.get(key, {}).get('satisfied', '-')):>15}"
        )
    if "enhancement_residuals" in payload:
        lines.append("")
        lines.append("Enhancement residuals")
        for key, value in payload["enhancement_residuals"].items():
            lines.append(f"  {key:<26}{_fmt(value)}")
    if "mc" in payload:
        mc = payload["mc"]
        lines.append("")
        lines.append(
            f"Monte Carlo    N={mc['n_samples']} seed={mc['seed']} "
            f"u_cov dev {_fmt(mc['u_cov_deviation'])} (bound {_fmt(mc['u_cov_bound'])}) "
            f"within bounds: {mc['within_bounds']}"
        )
    for reason in payload.get("reasons", []):
        lines.append(f"! {reason}")
    return "\n".join(lines)
