"""Command-line interface: ``weights``, ``estimate``, ``simulate``, ``kernel-check``.

Exit codes: 0 success, 2 validation error, 3 numerical failure. Errors are
written to stderr as a JSON object ``{"error": {"type", "code", "message"}}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .balance import BalanceConfig, balance_gram, balance_weights
from .errors import (
    CfdError,
    ColumnError,
    MissingValueError,
    NumericalError,
    ParameterError,
    ParseError,
    ScalingError,
    ValidationError,
)
from .estimators import Dataset, ate_weighted, late_weighted
from .inference import (
    WeightingPipeline,
    bootstrap_ci,
    select_subsample_size,
    subsample_ci,
)
from .kernels import DEFAULT_N_FREQUENCIES, kernel_eval, parse_density, rf_gram, sample_frequencies
from .qp import QpSettings
from .sim import ScenarioConfig, run_study, write_study

log = logging.getLogger("cfdbal")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


@dataclass(frozen=True)
class ColumnSpec:
    """Column roles in the input CSV; ``continuous`` columns get min-max scaling."""

    outcome: str | None = None
    treatment: str = "z"
    receipt: str | None = None
    covariates: tuple = ()
    continuous: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "continuous", tuple(self.continuous))
        if not self.covariates:
            raise ParameterError("at least one covariate column is required")
        roles = [c for c in (self.outcome, self.treatment, self.receipt) if c] + list(self.covariates)
        dup = sorted({c for c in roles if roles.count(c) > 1})
        if dup:
            raise ParameterError(f"column names used twice: {dup}")
        extra = [c for c in self.continuous if c not in self.covariates]
        if extra:
            raise ParameterError(f"continuous columns must be covariates: {extra}")

    def required(self) -> list[str]:
        return [c for c in (self.outcome, self.treatment, self.receipt) if c] + list(self.covariates)


def _binary(values: pd.Series, name: str) -> np.ndarray:
    v = pd.to_numeric(values, errors="coerce")
    bad = ~v.isin([0, 1])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            f"column {name!r} must be binary (0/1); row {row + 1} holds {values.iloc[row]!r}"
        )
    return v.to_numpy(dtype=np.float64)


def _numeric(values: pd.Series, name: str) -> np.ndarray:
    v = pd.to_numeric(values, errors="coerce")
    bad = v.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(f"column {name!r} row {row + 1} is not numeric: {values.iloc[row]!r}")
    return v.to_numpy(dtype=np.float64)


def ingest_csv(path, spec: ColumnSpec) -> tuple[Dataset, dict]:
    """Read a CSV into a :class:`Dataset`, min-max scaling continuous covariates.

    Row numbers in error messages count data rows from 1 (header excluded).
    Returns the dataset and metadata holding the scaling parameters.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"data file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=True, skipinitialspace=True)
    missing = [c for c in spec.required() if c not in df.columns]
    if missing:
        raise ColumnError(f"columns not in the CSV header: {missing}")
    sel = df[spec.required()]
    na_rows = np.flatnonzero(sel.isna().any(axis=1).to_numpy())
    if na_rows.size:
        shown = ", ".join(str(r + 1) for r in na_rows[:20])
        more = "" if na_rows.size <= 20 else f" (+{na_rows.size - 20} more)"
        raise MissingValueError(f"missing values in rows {shown}{more}")
    z = _binary(sel[spec.treatment], spec.treatment)
    a = None if spec.receipt is None else _binary(sel[spec.receipt], spec.receipt)
    y = np.zeros(len(sel)) if spec.outcome is None else _numeric(sel[spec.outcome], spec.outcome)
    cols = []
    scaling = {}
    for c in spec.covariates:
        v = _numeric(sel[c], c)
        if c in spec.continuous:
            lo, hi = float(v.min()), float(v.max())
            if not hi > lo:
                raise ScalingError(f"continuous column {c!r} is constant; cannot scale to [0, 1]")
            v = (v - lo) / (hi - lo)
            scaling[c] = {"min": lo, "max": hi}
        cols.append(v)
    X = np.column_stack(cols)
    meta = {
        "path": str(path),
        "n": int(len(sel)),
        "covariates": list(spec.covariates),
        "scaling": scaling,
    }
    return Dataset(y=y, z=z, X=X, a=a), meta


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; echoed into every JSON output."""

    data: str | None = None
    outcome: str | None = None
    treatment: str = "z"
    receipt: str | None = None
    covariates: list = field(default_factory=list)
    continuous: list = field(default_factory=list)
    id_column: str | None = None
    density: str = "gaussian"
    mode: str = "three_way"
    lam: str | float = "auto"
    estimand: str = "late"
    weights: str = "cfd"
    ci: str = "subsampling"
    alpha: float = 0.05
    subsample_size: str | int = "auto"
    replications: int = 500
    seed: int = 0
    threads: int = 1
    qp_eps: float = 1e-6
    qp_max_iter: int = 20000
    qp_polish: bool = True
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def column_spec(self) -> ColumnSpec:
        return ColumnSpec(
            outcome=self.outcome,
            treatment=self.treatment,
            receipt=self.receipt,
            covariates=tuple(self.covariates),
            continuous=tuple(self.continuous),
        )

    def lam_value(self) -> float | None:
        if self.lam is None or str(self.lam).lower() == "auto":
            return None
        try:
            return float(self.lam)
        except ValueError:
            raise ParameterError(f"lam must be 'auto' or a number, got {self.lam!r}") from None

    def balance_config(self) -> BalanceConfig:
        density, extras = parse_density(self.density)
        settings = QpSettings(eps_abs=self.qp_eps, eps_rel=self.qp_eps,
                              max_iter=self.qp_max_iter, polish=self.qp_polish)
        return BalanceConfig(
            density=density,
            mode=self.mode,
            lam=self.lam_value(),
            settings=settings,
            n_frequencies=extras.get("L", DEFAULT_N_FREQUENCIES),
            frequency_seed=self.seed,
        )


def _split(text):
    if text is None or isinstance(text, list):
        return text
    return [t.strip() for t in text.split(",") if t.strip()]


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            import yaml
        except ImportError:
            raise ValidationError("YAML configs need the optional 'pyyaml' package") from None
        d = yaml.safe_load(text) or {}
    else:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ParseError("config file must hold a mapping")
    # a previous run's JSON output carries its settings under "config"
    if isinstance(d.get("config"), dict):
        return d["config"]
    return d


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then flags given on the command line."""
    base = load_config_file(args.config) if args.config else {}
    cfg = RunConfig.from_dict(base)
    overrides = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name in ("covariates", "continuous"):
            v = _split(v)
        overrides[f.name] = v
    return replace(cfg, **overrides)


def _dump(obj, out) -> None:
    text = json.dumps(obj, indent=2, default=_json_default)
    if out in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _envelope(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "version": __version__, "config": cfg.to_dict()}


# ---------------------------------------------------------------------------
# subcommands


def cmd_weights(args) -> int:
    cfg = build_run_config(args)
    if not cfg.data:
        raise ParameterError("--data is required")
    data, meta = ingest_csv(cfg.data, cfg.column_spec())
    res = balance_weights(data.X, data.z, cfg.balance_config())
    if cfg.id_column:
        ids = pd.read_csv(cfg.data, usecols=[cfg.id_column])[cfg.id_column].to_numpy()
    else:
        ids = np.arange(1, data.n + 1)
    out_csv = cfg.out or "weights.csv"
    pd.DataFrame({"row_id": ids, "weight": res.w}).to_csv(out_csv, index=False)
    result = _envelope(cfg, "weights")
    result.update(weights_csv=str(out_csv), data=meta, diagnostics=res.to_dict())
    _dump(result, args.json)
    return EXIT_OK


def run_estimate(cfg: RunConfig) -> dict:
    """Full pipeline from a :class:`RunConfig` to a JSON-ready result."""
    if not cfg.data:
        raise ParameterError("data path is required")
    if cfg.estimand == "late" and not cfg.receipt:
        raise ParameterError("estimand 'late' needs a receipt column")
    if cfg.ci not in ("subsampling", "bootstrap", "both", "none"):
        raise ParameterError("ci must be subsampling, bootstrap, both or none")
    spec = cfg.column_spec()
    if spec.outcome is None:
        raise ParameterError("outcome column is required")
    data, meta = ingest_csv(cfg.data, spec)
    pipe = WeightingPipeline(weights=cfg.weights, estimand=cfg.estimand,
                             config=cfg.balance_config())
    result = _envelope(cfg, "estimate")
    result["data"] = meta
    diagnostics = None
    if cfg.weights == "cfd":
        bal = balance_weights(data.X, data.z, pipe.config)
        w = bal.w
        diagnostics = bal.to_dict()
    else:
        w = pipe.compute_weights(data)
    est = late_weighted(data, w) if cfg.estimand == "late" else ate_weighted(data, w)
    point = est.value
    result["estimate"] = {
        "estimand": cfg.estimand,
        "value": point,
        "denominator": est.denominator,
        "weights": cfg.weights,
    }
    result["diagnostics"] = diagnostics
    cis = {}
    if cfg.ci in ("subsampling", "both"):
        b = cfg.subsample_size
        selection = None
        if str(b).lower() == "auto":
            b = select_subsample_size(data, pipe, alpha=cfg.alpha, B_s=cfg.replications,
                                      seed=cfg.seed, n_jobs=cfg.threads)
            selection = "minimum_volatility"
        ci = subsample_ci(data, pipe, int(b), cfg.replications, cfg.alpha, cfg.seed,
                          point=point, n_jobs=cfg.threads)
        cis["subsampling"] = dict(ci.to_dict(), selection=selection or "fixed")
    if cfg.ci in ("bootstrap", "both"):
        ci = bootstrap_ci(data, pipe, cfg.replications, cfg.alpha, cfg.seed,
                          point=point, n_jobs=cfg.threads)
        cis["bootstrap"] = ci.to_dict()
    result["intervals"] = cis
    return result


def cmd_estimate(args) -> int:
    cfg = build_run_config(args)
    _dump(run_estimate(cfg), cfg.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    methods = tuple(_split(args.methods))
    sizes = [int(s) for s in _split(args.n)]
    out_dir = Path(args.out or "study")
    sub = args.subsample_size
    if sub is not None and sub != "auto":
        sub = int(sub)
    all_rows = []
    for n in sizes:
        sc = ScenarioConfig(
            propensity=args.scenario,
            n=n,
            reps=args.reps,
            methods=methods,
            estimand=args.estimand or "late",
            ci=args.ci or "both",
            B_s=args.replications,
            B=args.replications,
            subsample_size=sub,
            alpha=args.alpha if args.alpha is not None else 0.05,
            seed=args.seed if args.seed is not None else 2024,
            oracle_M=args.oracle_m,
            n_jobs=args.threads or 1,
        )

        def progress(k, total, n=n):
            if k % max(1, total // 10) == 0 or k == total:
                log.info("n=%d: %d/%d replications", n, k, total)

        res = run_study(sc, progress=progress)
        target = out_dir if len(sizes) == 1 else out_dir / f"n{n}"
        csv_path, json_path = write_study(res, target)
        all_rows.extend(r.table_dict() for r in res.rows)
        log.info("wrote %s and %s", csv_path, json_path)
    _dump({"command": "simulate", "version": __version__, "oracle_late": res.oracle,
           "oracle_se": res.oracle_se, "table": all_rows}, "-")
    return EXIT_OK


def cmd_kernel_check(args) -> int:
    cfg = build_run_config(args)
    if not cfg.data:
        raise ParameterError("--data is required")
    spec = ColumnSpec(treatment=cfg.treatment, covariates=tuple(cfg.covariates),
                      continuous=tuple(cfg.continuous))
    data, meta = ingest_csv(cfg.data, spec)
    bcfg = cfg.balance_config()
    G, density = balance_gram(data.X, bcfg)
    report = {"density": density.to_dict(), "n": data.n, "d": data.X.shape[1]}
    if G is None:
        report["note"] = "all covariate rows identical; gram is constant"
    else:
        K = G.K
        eig = np.linalg.eigvalsh(K)
        off = K[~np.eye(data.n, dtype=bool)] if data.n > 1 else np.empty(0)
        report.update(
            source=G.source,
            diag_min=float(np.diag(K).min()),
            diag_max=float(np.diag(K).max()),
            offdiag_min=float(off.min()) if off.size else None,
            offdiag_max=float(off.max()) if off.size else None,
            min_eigenvalue=float(eig[0]),
            max_eigenvalue=float(eig[-1]),
            psd=bool(eig[0] >= -1e-8 * max(1.0, abs(eig[-1]))),
            symmetric=bool(np.array_equal(K, K.T)),
        )
        if density.is_proper and density.has_closed_form and args.rf_check:
            freq = sample_frequencies(density, bcfg.n_frequencies, cfg.seed)
            Kr = rf_gram(data.X, freq).K
            report["rf_max_abs_error"] = float(np.max(np.abs(Kr - K)))
            report["rf_frequencies"] = bcfg.n_frequencies
        if data.n >= 2:
            report["k_row1_row2"] = kernel_eval(density, data.X[0], data.X[1]) \
                if density.has_closed_form else None
    result = _envelope(cfg, "kernel-check")
    result.update(data=meta, gram=report)
    _dump(result, cfg.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _data_args(p: argparse.ArgumentParser, outcome: bool = True) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="input CSV (header, comma-delimited, UTF-8)")
    if outcome:
        g.add_argument("--outcome", help="outcome column")
        g.add_argument("--receipt", help="treatment-receipt column (IV mode)")
    g.add_argument("--treatment", help="binary treatment or instrument column")
    g.add_argument("--covariates", help="comma-separated covariate columns")
    g.add_argument("--continuous", "--scale", dest="continuous",
                   help="comma-separated covariates to min-max scale to [0, 1]")


def _balance_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("balancing")
    g.add_argument("--density", help="density spec, e.g. gaussian, energy, matern(nu=2.5), "
                                     "student(s=3,L=10000); bandwidth gamma=auto by default")
    g.add_argument("--mode", choices=["two_way", "three_way"])
    g.add_argument("--lam", help="ridge parameter: auto (= n^-2) or a number")
    g.add_argument("--qp-eps", dest="qp_eps", type=float)
    g.add_argument("--qp-max-iter", dest="qp_max_iter", type=int)
    g.add_argument("--qp-polish", dest="qp_polish", action=argparse.BooleanOptionalAction,
                   default=None)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--threads", type=int, help="worker count for resampling loops")
    common.add_argument("--config", help="JSON (or YAML) file with RunConfig keys")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="cfdbal",
        description="Characteristic-function-distance balancing weights and "
                    "weighting estimators of the ATE and LATE.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", parents=[common], help="compute balancing weights")
    _data_args(p, outcome=False)
    _balance_args(p)
    p.add_argument("--id-column", dest="id_column", help="column written as row_id")
    p.add_argument("--json", help="path for the diagnostics JSON (default stdout)")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("estimate", parents=[common], help="point estimate and intervals")
    _data_args(p)
    _balance_args(p)
    p.add_argument("--estimand", choices=["ate", "late"])
    p.add_argument("--weights", choices=["cfd", "ipw", "uniform"])
    p.add_argument("--ci", choices=["subsampling", "bootstrap", "both", "none"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--subsample-size", dest="subsample_size", help="auto or an integer")
    p.add_argument("--replications", type=int, help="subsample draws / bootstrap resamples")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", parents=[common], help="run the simulation study")
    p.add_argument("--scenario", choices=["linear", "nonlinear"], default="nonlinear")
    p.add_argument("--n", default="400", help="sample size(s), comma-separated")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--methods", default="gaussian,energy,ipw",
                   help="density specs, ipw, uniform or oracle (comma-separated)")
    p.add_argument("--estimand", choices=["ate", "late"])
    p.add_argument("--ci", choices=["subsampling", "bootstrap", "both", "none"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--subsample-size", dest="subsample_size",
                   help="auto or an integer (default round(2.5 sqrt(n)))")
    p.add_argument("--replications", type=int, default=200, help="B_s = B")
    p.add_argument("--oracle-m", dest="oracle_m", type=int, default=10_000_000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kernel-check", parents=[common], help="print gram diagnostics")
    _data_args(p, outcome=False)
    _balance_args(p)
    p.add_argument("--rf-check", dest="rf_check", action="store_true",
                   help="also compare against a random-feature gram")
    p.set_defaults(func=cmd_kernel_check)
    return parser


def _error_exit(exc: BaseException, code: int) -> int:
    payload = {
        "error": {
            "type": type(exc).__name__,
            "code": getattr(exc, "code", "error"),
            "message": str(exc),
        }
    }
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        return _error_exit(exc, EXIT_VALIDATION)
    except NumericalError as exc:
        return _error_exit(exc, EXIT_NUMERICAL)
    except CfdError as exc:
        return _error_exit(exc, EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
