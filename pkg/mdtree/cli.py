import argparse
import logging
import sys

from pydantic import ValidationError

from . import constants as C
from .config import GeneralTreeFile, SolverConfig, ToleranceConfig, parse_instance_document
from .errors import InputError, InstanceFormatError, MdtreeError
from .oracle import GridSpec, known_closedforms, scalar_grid_max
from .processing import run_pipeline
from .report import build_report
from .tree_model import pad_to_perfect_binary
from .utils import dumps, load_json, node_key, setup_logging

logger = logging.getLogger(__name__)


def _seed_list(text):
    try:
        seeds = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got '{text}'")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mdtree",
        description="Minimum sum rate of vector Gaussian multiple descriptions with tree-structured distortions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("file", help="instance JSON file")
    common.add_argument("--bits", action="store_true", help="also report the sum rate in bits")
    common.add_argument("--eps", type=float, help="single ε shrink, as a multiple of λ_min(Σ_X)")
    common.add_argument("--seeds", type=_seed_list, help="multistart seeds, e.g. 0,1,2")
    common.add_argument("--text", action="store_true", help="human-readable summary instead of JSON")
    common.add_argument("--psd-eps", type=float, help="absolute eigenvalue slack for PSD tests")
    common.add_argument("--eq-eps", type=float, help=f"identity residual slack (default {C.EQ_EPS:g})")
    common.add_argument("--grad-tol", type=float, help=f"inner-loop gradient tolerance (default {C.GRAD_TOL:g})")
    common.add_argument("--slack-tol", type=float, help=f"complementary slackness tolerance (default {C.SLACK_TOL:g})")
    common.add_argument("--config", help="JSON file with a 'solver' block")
    common.add_argument("--workers", type=int, help="threads for multistart runs and Monte Carlo shards")
    common.add_argument("--timings", action="store_true", help="include wall times in the report")

    sub.add_parser("solve", parents=[common], help="solve and certify an instance")
    verify = sub.add_parser("verify", parents=[common], help="solve, certify and Monte Carlo-validate")
    verify.add_argument("--mc-samples", type=int, required=True)
    verify.add_argument("--seed", type=int, default=0)

    oracle = sub.add_parser("oracle", help="scalar grid-search reference value")
    oracle.add_argument("file")
    oracle.add_argument("--resolution", type=float, default=C.ORACLE_DEFAULT_RESOLUTION)
    oracle.add_argument("--refine", type=int, default=0, help="number of ×10 zoom passes")

    pad = sub.add_parser("pad", help="pad a general tree to a perfect binary tree")
    pad.add_argument("file")
    return parser


def _load(path):
    """Returns (ProblemInstance, PaddedInstance or None, solver block or None)."""
    model = parse_instance_document(load_json(path))
    if isinstance(model, GeneralTreeFile):
        padded = pad_to_perfect_binary(model.to_spec())
        return padded.instance, padded, model.solver
    return model.to_instance(), None, model.solver


def _solver_config(args, file_block):
    cfg = file_block or SolverConfig()
    if args.config:
        document = load_json(args.config)
        block = document.get("solver", document) if isinstance(document, dict) else None
        if not isinstance(block, dict):
            raise InstanceFormatError(f"{args.config} must contain a JSON object")
        cfg = cfg.with_overrides(**block)
    return cfg.with_overrides(
        multistart_seeds=args.seeds,
        grad_tol=args.grad_tol,
        slack_tol=args.slack_tol,
        workers=args.workers,
    )


def _emit(payload_text):
    sys.stdout.write(payload_text + "\n")


def _emit_error(exc):
    _emit(dumps(exc.to_dict()))


def cmd_solve(args, mc_samples=None, mc_seed=0):
    inst, padded, block = _load(args.file)
    cfg = _solver_config(args, block)
    tol = ToleranceConfig(psd_eps=args.psd_eps, eq_eps=args.eq_eps if args.eq_eps is not None else C.EQ_EPS)
    result = run_pipeline(
        inst,
        cfg,
        tol.to_tolerance(),
        eps=args.eps,
        mc_samples=mc_samples,
        mc_seed=mc_seed,
        padding=padded,
    )
    report = build_report(result, bits=args.bits, timings=args.timings)
    _emit(report.to_text() if args.text else report.to_json())
    return C.EXIT_VERIFIED if report.status == C.CERT_VERIFIED else C.EXIT_UNVERIFIED


def cmd_verify(args):
    return cmd_solve(args, mc_samples=args.mc_samples, mc_seed=args.seed)


def cmd_oracle(args):
    inst, _, _ = _load(args.file)
    try:
        grid = GridSpec(resolution=args.resolution, refine_levels=args.refine)
    except ValueError as exc:
        raise InstanceFormatError(str(exc)) from exc
    theta, value = scalar_grid_max(inst, grid)
    payload = {
        "resolution": grid.resolution,
        "refine_levels": grid.refine_levels,
        "theta": {node_key(node): t for node, t in sorted(theta.items())},
        "value_nats": value,
    }
    closed = known_closedforms(inst)
    if closed is not None:
        payload["known_closedform_nats"] = closed
    _emit(dumps(payload))
    return C.EXIT_VERIFIED


def cmd_pad(args):
    model = parse_instance_document(load_json(args.file))
    if isinstance(model, GeneralTreeFile):
        payload = pad_to_perfect_binary(model.to_spec()).to_dict()
    else:
        inst = model.to_instance()
        payload = {
            "instance": inst.to_dict(),
            "relabeling": {str(j): j for j in range(1, inst.M + 1)},
            "dummy_descriptions": [],
            "dummy_nodes": [],
        }
    _emit(dumps(payload))
    return C.EXIT_VERIFIED


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "oracle": cmd_oracle, "pad": cmd_pad}


def main(argv=None):
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        logger.error("Input error: %s", exc)
        _emit_error(exc)
        return C.EXIT_INPUT_ERROR
    except (ValidationError, ValueError) as exc:
        logger.error("Invalid option: %s", exc)
        _emit_error(InstanceFormatError(str(exc).splitlines()[0]))
        return C.EXIT_INPUT_ERROR
    except MdtreeError as exc:
        logger.error("Computation failed: %s", exc)
        _emit_error(exc)
        return C.EXIT_UNVERIFIED
