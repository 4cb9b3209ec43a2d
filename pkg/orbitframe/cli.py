"""
Command-line entry point.

Every command reads tuple files (or builds a preset), runs one pipeline and writes a
JSON report envelope into the output directory. Timings and memory go to a separate
run_metadata.json so the reports stay byte-identical across reruns.

Exit codes: 0 success, 1 mathematical failure, 2 configuration or I/O error.
"""

import argparse
import json
import re
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, field_validator

from . import __version__
from .errors import ConfigurationError, OrbitFrameError, PreconditionError, exit_code_for
from .fibers import (
    chi_E_detect,
    complement,
    extract_inner_factor,
    helson_projection_check,
    projector_distance,
    range_function_of_subspace,
    resynthesize,
    subspace_basis,
)
from .genlab import class_census, counterexample_multigen, factor_label, sample_membership, scaled_pair_family
from .lattice import Mode, Universe, coords_to_field, make_universe, random_field
from .model import (
    build_basic_tuple,
    compression_intertwining,
    kernel_structure,
    riesz_classify,
    similarity,
    verify_intertwining,
    verify_parseval_basic,
)
from .monitoring import operation_timer, run_metadata, setup_logging
from .presets import PRESET_ALIASES, PresetName, build_preset, resolve_preset
from .serialization import encode_complex, matrix_rows, spectrum_rows, write_csv, write_json
from .settings import Tolerances, load_settings
from .tuples import (
    Iteration,
    IterationMode,
    OrbitTuple,
    frame_bounds,
    load_tuple,
    save_tuple,
    tuple_digest,
    universe_for,
    validate_tuple,
)

logger = structlog.get_logger(__name__)

TOLERANCE_NAMES = list(Tolerances.model_fields)


class Command(str, Enum):
    ANALYZE = "analyze"
    MODEL = "model"
    SIMILAR = "similar"
    FIBERS = "fibers"
    INNER = "inner"
    CHI_E = "chi-e"
    GENLAB = "genlab"
    PRESET = "preset"


class Experiment(str, Enum):
    MEMBERSHIP = "membership"
    MULTIGEN = "multigen"
    SCALED = "scaled"


class RunConfig(BaseModel):
    """One CLI invocation, validated."""

    model_config = ConfigDict(frozen=True)

    command: Command
    tuple_path: Optional[Path] = None
    a_path: Optional[Path] = None
    b_path: Optional[Path] = None
    universe: Optional[Tuple[int, int, int]] = None
    mode: Optional[Mode] = None
    iteration: Optional[IterationMode] = None
    K: Optional[int] = Field(None, ge=0)
    J: Optional[int] = Field(None, ge=0)
    tolerance_overrides: Dict[str, PositiveFloat] = Field(default_factory=dict)
    seed: Optional[int] = None
    out: Path = Path("out")
    format: str = "json"
    preset: Optional[PresetName] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    experiment: Experiment = Experiment.MEMBERSHIP
    samples: int = Field(50, ge=1)
    factors: List[Tuple[float, float]] = Field(default_factory=lambda: [(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])
    commuting: bool = True
    log_level: str = "INFO"
    log_json: bool = True

    @field_validator("format")
    @classmethod
    def _known_format(cls, v: str) -> str:
        if v not in ("json", "csv"):
            raise ValueError("format must be json or csv")
        return v

    @field_validator("tolerance_overrides")
    @classmethod
    def _known_tolerances(cls, v: Dict[str, float]) -> Dict[str, float]:
        unknown = sorted(set(v) - set(TOLERANCE_NAMES))
        if unknown:
            raise ValueError(f"unknown tolerances {unknown}")
        return v


class RunContext:
    """Resolved settings plus the report files written so far."""

    def __init__(self, config: RunConfig, tol: Tolerances, max_dim: int):
        self.config = config
        self.tol = tol
        self.max_dim = max_dim
        self.inputs: Dict[str, str] = {}
        self.files: List[str] = []

    @property
    def csv(self) -> bool:
        return self.config.format == "csv"

    def path(self, name: str) -> Path:
        return self.config.out / name

    def write_csv(self, name: str, header: Sequence[str], rows: List[List[Any]]):
        if self.csv:
            self.files.append(str(write_csv(self.path(name), header, rows)))

    def load(self, path: Optional[Path], flag: str) -> OrbitTuple:
        if path is None:
            raise ConfigurationError(f"{self.config.command.value} needs {flag}", flag, None)
        t = load_tuple(path)
        t = _apply_iteration(t, self.config)
        self.inputs[flag] = tuple_digest(t)
        return t

    def universe(self, t: OrbitTuple) -> Universe:
        cfg = self.config
        if cfg.universe is None:
            return universe_for(t, self.max_dim)
        mode = cfg.mode or Mode(t.variant.value)
        return make_universe(mode, *cfg.universe, max_dim=self.max_dim)


def _apply_iteration(t: OrbitTuple, config: RunConfig) -> OrbitTuple:
    if config.iteration is IterationMode.TRUNCATED:
        if config.K is None or config.J is None:
            raise ConfigurationError("Truncated iteration needs --K and --J", "iteration", [config.K, config.J])
        return t.with_iteration(Iteration.truncated(config.K, config.J))
    if config.iteration is IterationMode.CYCLIC and config.universe is not None:
        return t.with_iteration(Iteration.cyclic(config.universe[0], config.universe[1]))
    return t


def _analyze(ctx: RunContext) -> Dict[str, Any]:
    t = ctx.load(ctx.config.tuple_path, "--tuple")
    u = ctx.universe(t)
    diagnostics = validate_tuple(t, ctx.tol)
    report = frame_bounds(t, u, ctx.tol)
    ctx.write_csv("spectrum.csv", ["index", "value"], spectrum_rows(report.singular_spectrum))
    return {
        "universe": u.to_dict(),
        "diagnostics": diagnostics.model_dump(),
        "frame_report": report.model_dump(),
        "classification": riesz_classify(t, u, ctx.tol).value,
    }


def _model(ctx: RunContext) -> Dict[str, Any]:
    t = ctx.load(ctx.config.tuple_path, "--tuple")
    b = build_basic_tuple(t, ctx.universe(t), ctx.tol)
    ctx.write_csv("spectrum.csv", ["index", "value"], spectrum_rows(b.singular_values))
    return {
        "universe": b.universe.to_dict(),
        "classification": riesz_classify(t, b.universe, ctx.tol).value,
        "basic_tuple": b.to_dict(),
        "intertwining": verify_intertwining(t, b, tol=ctx.tol).model_dump(),
        "parseval": verify_parseval_basic(b, ctx.tol).model_dump(),
        "kernel_structure": kernel_structure(t, b.universe, ctx.tol).model_dump(),
    }


def _similar(ctx: RunContext) -> Dict[str, Any]:
    a = ctx.load(ctx.config.a_path, "-a")
    b = ctx.load(ctx.config.b_path, "-b")
    u = ctx.universe(a)
    verdict = similarity(a, b, u, ctx.tol)
    result: Dict[str, Any] = {"universe": u.to_dict(), "verdict": verdict.model_dump(),
                              "similar": verdict.similar}
    if a.n_gen == 1 and np.array_equal(a.T, b.T) and np.array_equal(a.L, b.L):
        compression = compression_intertwining(build_basic_tuple(a, u, ctx.tol), build_basic_tuple(b, u, ctx.tol))
        result["compression"] = compression.model_dump()
    return result


def _fibers(ctx: RunContext) -> Dict[str, Any]:
    t = ctx.load(ctx.config.tuple_path, "--tuple")
    b = build_basic_tuple(t, ctx.universe(t), ctx.tol)
    u = b.universe
    rf = range_function_of_subspace(b.N_basis, u, ctx.tol)
    ctx.write_csv("fiber_dims.csv", ["t", "dim", "in_support"], rf.dims_rows())
    sample_field = random_field(u, np.random.default_rng(ctx.config.seed or 0))
    helson = helson_projection_check([coords_to_field(u, q) for q in b.N_basis.T], sample_field, rf, ctx.tol)
    return {"universe": u.to_dict(), "range_function": rf.to_dict(), "helson_residual": helson}


def _inner(ctx: RunContext) -> Dict[str, Any]:
    t = ctx.load(ctx.config.tuple_path, "--tuple")
    b = build_basic_tuple(t, ctx.universe(t), ctx.tol)
    n_perp = complement(range_function_of_subspace(b.N_basis, b.universe, ctx.tol))
    inner = extract_inner_factor(n_perp, b.universe, ctx.tol)
    distance = projector_distance(subspace_basis(resynthesize(inner)), subspace_basis(n_perp))
    return {"universe": b.universe.to_dict(), "inner_factor": inner.to_dict(),
            "resynthesis_distance": distance}


def _chi_e(ctx: RunContext) -> Dict[str, Any]:
    t = ctx.load(ctx.config.tuple_path, "--tuple")
    b = build_basic_tuple(t, ctx.universe(t), ctx.tol)
    mask = chi_E_detect(b.N_basis, b.universe, ctx.tol)
    ctx.write_csv("chi_e_mask.csv", ["t1"] + [f"t2_{q}" for q in range(b.universe.N2)],
                  matrix_rows(mask.mask.astype(int)))
    return {"universe": b.universe.to_dict(), "chi_e": mask.to_dict()}


def _genlab(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    if cfg.experiment is Experiment.MEMBERSHIP:
        base = ctx.load(cfg.tuple_path, "--tuple")
        results = sample_membership(base, cfg.samples, cfg.seed, cfg.commuting, ctx.tol)
        rows = []
        for B, verdict in results:
            recovered = verdict.similarity.connecting_matrix()
            error = None
            if recovered is not None:
                error = float(np.linalg.norm(recovered - B, 2) / np.linalg.norm(B, 2))
            rows.append({"in_V": verdict.in_V, "consistent": verdict.consistent,
                         "lower_bound": verdict.frame_report.lower_bound,
                         "kernel_distance": verdict.similarity.kernel_distance,
                         "status": verdict.similarity.status.value,
                         "certification_residuals": verdict.similarity.certification_residuals,
                         "map_recovery_error": error, "map": encode_complex(B)})
        return {"experiment": cfg.experiment.value, "commuting": cfg.commuting, "samples": rows,
                "all_consistent": all(r["consistent"] for r in rows)}

    if cfg.experiment is Experiment.MULTIGEN:
        if cfg.a_path is not None and cfg.b_path is not None:
            pair = [ctx.load(cfg.a_path, "-a"), ctx.load(cfg.b_path, "-b")]
            report = class_census(pair, ctx.tol, cfg.seed, stems=[cfg.a_path.stem, cfg.b_path.stem])
        else:
            report = counterexample_multigen(ctx.load(cfg.tuple_path, "--tuple"), ctx.tol, cfg.seed)
    else:
        base = ctx.load(cfg.tuple_path, "--tuple")
        if base.n_gen != 1:
            raise PreconditionError("Scaled pairs need a single-generator base", "single_generator",
                                    n_gen=base.n_gen)
        factors = [complex(real, imag) for real, imag in cfg.factors]
        report = class_census(scaled_pair_family(base, factors), ctx.tol, cfg.seed,
                              stems=[factor_label(a) for a in factors])
    ctx.write_csv("distance_matrix.csv", ["row"] + report.stems, matrix_rows(np.array(report.distance_matrix)))
    return {"experiment": cfg.experiment.value, "census": report.model_dump()}


def _preset(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    if cfg.preset is None:
        raise ConfigurationError("preset needs a preset name", "preset", None)
    output = build_preset(cfg.preset, cfg.params, ctx.tol)
    tuples = {}
    for stem, t in sorted(output.tuples.items()):
        ctx.files.append(str(save_tuple(ctx.path(f"{stem}.json"), t)))
        tuples[stem] = tuple_digest(t)
    result: Dict[str, Any] = {"preset": output.preset.model_dump(mode="json"), "tuples": tuples}
    if output.subspace is not None:
        ctx.files.append(str(write_json(ctx.path("subspace.json"),
                                        {"universe": output.universe.to_dict(),
                                         "basis": encode_complex(output.subspace)})))
        result["subspace_rank"] = int(output.subspace.shape[1])
    return result


PIPELINES = {
    Command.ANALYZE: _analyze,
    Command.MODEL: _model,
    Command.SIMILAR: _similar,
    Command.FIBERS: _fibers,
    Command.INNER: _inner,
    Command.CHI_E: _chi_e,
    Command.GENLAB: _genlab,
    Command.PRESET: _preset,
}


def run(config: RunConfig) -> int:
    """
    Execute one pipeline and write its report.

    Returns:
        The exit code (0, 1 or 2)
    """
    try:
        tol, runtime = load_settings(**config.tolerance_overrides)
        setup_logging(config.log_level, config.log_json, runtime.log_file)
        ctx = RunContext(config, tol, runtime.max_dim)
        with operation_timer.time(config.command.value):
            result = PIPELINES[config.command](ctx)
        report_name = f"{config.command.value.replace('-', '_')}_report.json"
        envelope = {
            "command": config.command.value,
            "version": __version__,
            "seed": config.seed,
            "tolerances": tol.model_dump(),
            "inputs": ctx.inputs,
            "result": result,
            "files": sorted(Path(f).name for f in ctx.files),
        }
        write_json(config.out / report_name, envelope)
        write_json(config.out / "run_metadata.json", run_metadata(operation_timer, config.command.value))
    except OrbitFrameError as e:
        code = exit_code_for(e)
        logger.error("run_failed", command=config.command.value, error=type(e).__name__,
                     invariant=e.invariant, category=e.category.value, message=e.message)
        print(f"{type(e).__name__}: {e.message} [invariant={e.invariant}]", file=sys.stderr)
        return code
    except (ValidationError, ValueError, OSError) as e:
        logger.error("run_failed", command=config.command.value, error=type(e).__name__, message=str(e))
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return exit_code_for(e)
    logger.info("run_completed", command=config.command.value, report=report_name)
    return 0


def _parse_triple(text: str) -> Tuple[int, int, int]:
    try:
        values = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,M,n integers, got {text!r}")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return values  # type: ignore[return-value]


def _parse_param(text: str) -> Tuple[str, Any]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _parse_factor(text: str) -> complex:
    try:
        literal = text.strip().replace(" ", "").replace("i", "j")
        return complex(re.sub(r"(^|[+-])j$", r"\g<1>1j", literal))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a real or complex number, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tuple", dest="tuple_path", type=Path, help="Tuple JSON file")
    common.add_argument("-a", dest="a_path", type=Path, help="First tuple JSON file")
    common.add_argument("-b", dest="b_path", type=Path, help="Second tuple JSON file")
    common.add_argument("--universe", type=_parse_triple, help="N,M,n (unilateral) or N1,N2,n (bilateral)")
    common.add_argument("--mode", choices=[m.value for m in Mode])
    common.add_argument("--iteration", choices=[m.value for m in IterationMode])
    common.add_argument("--K", type=int)
    common.add_argument("--J", type=int)
    for name in TOLERANCE_NAMES:
        common.add_argument(f"--tol-{name.replace('_', '-')}", dest=f"tol_{name}", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, default=None, help="Output directory")
    common.add_argument("--format", choices=["json", "csv"], default="json",
                        help="csv also writes CSV side files")
    common.add_argument("--log-level", default=None)
    common.add_argument("--log-json", action=argparse.BooleanOptionalAction, default=None)

    parser = argparse.ArgumentParser(prog="orbitframe", description="Frame-tuple analysis and models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        p = sub.add_parser(command.value, parents=[common])
        if command is Command.PRESET:
            p.add_argument("name", choices=[n.value for n in PresetName] + sorted(PRESET_ALIASES))
            p.add_argument("--param", action="append", type=_parse_param, default=[],
                           help="key=value, value parsed as JSON when possible")
        if command is Command.GENLAB:
            p.add_argument("--experiment", choices=[e.value for e in Experiment], default="membership")
            p.add_argument("--samples", type=int, default=50)
            p.add_argument("--factors", type=_parse_factor, nargs="+", default=None,
                           help="Scale factors a, complex literals allowed (2, i, 1+2j)")
            p.add_argument("--non-commuting", dest="commuting", action="store_false")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    _, runtime = load_settings()
    values = vars(args)
    overrides = {name: values[f"tol_{name}"] for name in TOLERANCE_NAMES if values.get(f"tol_{name}") is not None}
    return RunConfig(
        command=Command(args.command),
        tuple_path=args.tuple_path,
        a_path=args.a_path,
        b_path=args.b_path,
        universe=args.universe,
        mode=args.mode,
        iteration=args.iteration,
        K=args.K,
        J=args.J,
        tolerance_overrides=overrides,
        seed=args.seed,
        out=args.out or Path(runtime.output_dir),
        format=args.format,
        preset=resolve_preset(values["name"]) if values.get("name") else None,
        params=dict(values.get("param") or []),
        experiment=values.get("experiment") or Experiment.MEMBERSHIP,
        samples=values.get("samples") or 50,
        factors=[(a.real, a.imag) for a in values.get("factors") or [1, 2, 3]],
        commuting=values.get("commuting", True),
        log_level=args.log_level or runtime.log_level,
        log_json=runtime.log_json if args.log_json is None else args.log_json,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except (ValidationError, OrbitFrameError) as e:
        print(f"Invalid configuration: {e}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
