"""Synthetic generators and the Monte-Carlo experiment runner."""

from __future__ import annotations

import itertools
import math
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (DdsvrError, Dataset, RngStream, SplitSpec, ValidationError,
                   apply_standardization, split_indices, standardize_features)
from .evaluation import Method, ReportRow, parse_methods, run_methods
from .kernels import KernelSpec
from .likelihood import sample_eps_laplacian

log = logging.getLogger(__name__)

CONFIG_SCHEMA = "ddsvr-sim/1"

# sinc amplitude and linear slope per noise family
SINC_AMPLITUDE = {"eps_laplacian": 5.0, "normal": 4.0, "uniform": 6.0}
LINEAR_SLOPE = {"eps_laplacian": 2.0, "normal": 2.0, "uniform": 1.0}


class NoiseFamily(str, Enum):
    EPS_LAPLACIAN = "eps_laplacian"
    NORMAL = "normal"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise s * u with u from ``family``.

    ``param`` is epsilon for eps_laplacian, sigma for normal and b for
    uniform on [-b, b].
    """

    family: NoiseFamily
    param: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", NoiseFamily(self.family))
        if self.family is NoiseFamily.EPS_LAPLACIAN:
            if self.param < 0:
                raise ValidationError("eps_laplacian epsilon must be >= 0")
        elif not self.param > 0:
            raise ValidationError(f"{self.family.value} parameter must be positive")
        if self.scale < 0:
            raise ValidationError("noise scale must be non-negative")


@dataclass(frozen=True)
class Sinc:
    a: float = 5.0


@dataclass(frozen=True)
class Linear:
    beta0: float = 1.0
    beta1: float = 2.0


@dataclass(frozen=True)
class SimSpec:
    model: Sinc | Linear
    noise: NoiseSpec
    n: int
    repetitions: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 20:
            raise ValidationError(f"n must be at least 20, got {self.n}")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be at least 1")

    @property
    def label(self) -> str:
        kind = "sinc" if isinstance(self.model, Sinc) else "linear"
        return (f"{kind}/{self.noise.family.value}/n={self.n}"
                f"/s={self.noise.scale:g}/p={self.noise.param:g}")


def draw_noise(spec: NoiseSpec, rng: RngStream, n: int) -> np.ndarray:
    """Unscaled draws u_i; the caller multiplies by ``spec.scale``."""
    if spec.family is NoiseFamily.EPS_LAPLACIAN:
        return sample_eps_laplacian(rng, spec.param, n)
    if spec.family is NoiseFamily.NORMAL:
        return spec.param * rng.normal(n)
    return rng.uniform(n, -spec.param, spec.param)


def gen_sinc(spec: SimSpec, rng: RngStream) -> tuple[Dataset, np.ndarray]:
    if not isinstance(spec.model, Sinc):
        raise ValidationError("gen_sinc needs a Sinc model")
    x = rng.uniform(spec.n, -10.0, 10.0)
    mu = spec.model.a * np.sinc(x / np.pi)
    y = mu + spec.noise.scale * draw_noise(spec.noise, rng, spec.n)
    return Dataset(x.reshape(-1, 1), y), mu


def gen_linear(spec: SimSpec, rng: RngStream) -> tuple[Dataset, np.ndarray]:
    if not isinstance(spec.model, Linear):
        raise ValidationError("gen_linear needs a Linear model")
    x = rng.normal(spec.n)
    mu = spec.model.beta0 + spec.model.beta1 * x
    y = mu + spec.noise.scale * draw_noise(spec.noise, rng, spec.n)
    return Dataset(x.reshape(-1, 1), y), mu


def generate(spec: SimSpec, rng: RngStream) -> tuple[Dataset, np.ndarray]:
    return (gen_sinc if isinstance(spec.model, Sinc) else gen_linear)(spec, rng)


@dataclass(frozen=True)
class RunOptions:
    methods: tuple[Method, ...] = tuple(Method)
    gamma: float | None = None
    C: float = 1.0
    # "mu" scores against the noise-free mean, "y" against observed targets
    score_linear: str = "mu"
    use_c_cm: bool = False
    jobs: int = 1


def run_repetition(spec: SimSpec, rep: int, opts: RunOptions):
    """One generate/split/fit/score round; returns {method: MetricReport}."""
    rng = RngStream(spec.seed, rep)
    data, mu = generate(spec, rng.child(1))
    tr_idx, te_idx = split_indices(data.n, SplitSpec(0.5, rng.child(2).seed))
    train = standardize_features(data.subset(tr_idx))
    test = apply_standardization(data.subset(te_idx), train)
    if isinstance(spec.model, Sinc):
        kernel = KernelSpec.rbf(opts.gamma, d=train.d)
        truth = mu[te_idx]
    else:
        kernel = KernelSpec.linear()
        truth = mu[te_idx] if opts.score_linear == "mu" else None
    return run_methods(list(opts.methods), train, test, kernel, truth,
                       C=opts.C, rng=rng.child(3), use_c_cm=opts.use_c_cm)


def _safe_rep(args):
    spec, rep, opts = args
    try:
        return rep, run_repetition(spec, rep, opts), None
    except DdsvrError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def aggregate(experiment_id: str, seed: int, methods: Sequence[Method],
              results: Sequence[dict], n_failed: int,
              extra: tuple = ()) -> list[ReportRow]:
    """Average per-repetition reports, accumulating in repetition order."""
    rows = []
    for m in methods:
        reps = [r[m] for r in results]
        def avg(attr):
            vals = [getattr(x, attr) for x in reps]
            vals = [np.nan if v is None else v for v in vals]
            return math.fsum(vals) / len(vals) if vals else float("nan")
        rows.append(ReportRow(
            experiment_id, m.value, avg("mae"), avg("rmse"), avg("ratio_mae"),
            avg("ratio_rmse"), avg("epsilon_used"), avg("s_hat"), seed,
            extra + (("reps_ok", len(reps)), ("reps_failed", n_failed))))
    return rows


def run_cell(spec: SimSpec, opts: RunOptions, experiment_id: str = "sim",
             cell_index: int = 0) -> list[ReportRow]:
    jobs = [(spec, r, opts) for r in range(spec.repetitions)]
    if opts.jobs > 1:
        with ProcessPoolExecutor(opts.jobs) as ex:
            outcomes = list(ex.map(_safe_rep, jobs))
    else:
        outcomes = [_safe_rep(j) for j in jobs]
    outcomes.sort(key=lambda o: o[0])
    ok = [res for _, res, err in outcomes if err is None]
    for rep, _, err in outcomes:
        if err is not None:
            log.warning("cell %s rep %d failed: %s", spec.label, rep, err)
    kind = "sinc" if isinstance(spec.model, Sinc) else "linear"
    shape = spec.model.a if kind == "sinc" else spec.model.beta1
    extra = (("cell", cell_index), ("model", kind), ("shape_param", shape),
             ("noise", spec.noise.family.value),
             ("noise_param", spec.noise.param), ("scale", spec.noise.scale),
             ("n", spec.n))
    return aggregate(experiment_id, spec.seed, opts.methods, ok,
                     len(outcomes) - len(ok), extra)


def run_table(grid: Sequence[SimSpec], opts: RunOptions,
              experiment_id: str = "sim") -> list[ReportRow]:
    """Run every cell; one averaged row per (cell, method)."""
    if not grid:
        raise ValidationError("empty simulation grid")
    rows: list[ReportRow] = []
    for i, spec in enumerate(grid):
        log.info("cell %d/%d: %s", i + 1, len(grid), spec.label)
        rows.extend(run_cell(spec, opts, experiment_id, i))
    return rows


def cell_seed(master_seed: int, cell_index: int) -> int:
    return RngStream(master_seed, 0).child(1000 + cell_index).seed


# --- config files -----------------------------------------------------------

class ConfigError(ValidationError):
    pass


@dataclass
class SimConfig:
    experiment: str = "sim"
    seed: int | None = None
    repetitions: int = 100
    methods: tuple[Method, ...] = tuple(Method)
    gamma: float | None = None
    C: float = 1.0
    score_linear: str = "mu"
    use_c_cm: bool = False
    jobs: int = 1
    cells: list[SimSpec] = field(default_factory=list)

    def options(self) -> RunOptions:
        return RunOptions(self.methods, self.gamma, self.C, self.score_linear,
                          self.use_c_cm, self.jobs)


_GLOBAL_KEYS = {"schema", "experiment", "seed", "repetitions", "methods",
                "gamma", "c", "score_linear", "use_c_cm", "jobs"}
_CELL_KEYS = {"model", "noise", "noise_param", "scale", "n", "repetitions",
              "amplitude", "beta0", "beta1"}
_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


def _num(text: str, lineno: int, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(
            f"line {lineno}: expected {kind.__name__}, got {text!r}") from None


def parse_config(text: str) -> SimConfig:
    """Parse the key = value simulation config (see docs/config.md)."""
    cfg = SimConfig()
    schema_seen = False
    raw_cells: list[tuple[int, dict[str, tuple[int, str]]]] = []
    current: dict[str, tuple[int, str]] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[cell]":
            current = {}
            raw_cells.append((lineno, current))
            continue
        if line.startswith("["):
            raise ConfigError(f"line {lineno}: unknown section {line!r}")
        mt = _LINE.match(line)
        if not mt:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = mt.group(1).lower(), mt.group(2)
        if current is None:
            if key not in _GLOBAL_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key == "schema":
                if val != CONFIG_SCHEMA:
                    raise ConfigError(
                        f"line {lineno}: unsupported schema {val!r} "
                        f"(expected {CONFIG_SCHEMA})")
                schema_seen = True
            elif key == "experiment":
                cfg.experiment = val
            elif key == "seed":
                cfg.seed = _num(val, lineno, int)
                if not 0 <= cfg.seed < 2**64:
                    raise ConfigError(f"line {lineno}: seed must be unsigned 64-bit")
            elif key == "repetitions":
                cfg.repetitions = _num(val, lineno, int)
            elif key == "methods":
                try:
                    cfg.methods = tuple(parse_methods(val))
                except ValidationError as exc:
                    raise ConfigError(f"line {lineno}: {exc}") from None
            elif key == "gamma":
                cfg.gamma = None if val.lower() == "auto" else _num(val, lineno)
            elif key == "c":
                cfg.C = _num(val, lineno)
            elif key == "score_linear":
                if val not in ("mu", "y"):
                    raise ConfigError(f"line {lineno}: score_linear is mu or y")
                cfg.score_linear = val
            elif key == "use_c_cm":
                cfg.use_c_cm = val.lower() in ("1", "true", "yes")
            elif key == "jobs":
                cfg.jobs = _num(val, lineno, int)
        else:
            if key not in _CELL_KEYS:
                raise ConfigError(f"line {lineno}: unknown cell key {key!r}")
            current[key] = (lineno, val)
    if not schema_seen:
        raise ConfigError(f"line 1: missing 'schema = {CONFIG_SCHEMA}'")
    if cfg.seed is None:
        raise ConfigError("missing required key 'seed'")
    for lineno, cell in raw_cells:
        cfg.cells.extend(_expand_cell(lineno, cell, cfg.repetitions))
    if not cfg.cells:
        raise ConfigError("config defines no [cell] entries")
    cfg.cells = [replace(c, seed=cell_seed(cfg.seed, i))
                 for i, c in enumerate(cfg.cells)]
    return cfg


def _expand_cell(lineno: int, cell: dict, default_reps: int) -> list[SimSpec]:
    for req in ("model", "noise", "noise_param", "scale", "n"):
        if req not in cell:
            raise ConfigError(f"line {lineno}: [cell] is missing {req!r}")
    ln, model = cell["model"]
    if model not in ("sinc", "linear"):
        raise ConfigError(f"line {ln}: model must be sinc or linear")
    ln, noise = cell["noise"]
    try:
        family = NoiseFamily(noise)
    except ValueError:
        raise ConfigError(f"line {ln}: unknown noise family {noise!r}") from None

    def values(key, kind=float):
        ln, text = cell[key]
        return [_num(v.strip(), ln, kind) for v in text.split(",")]

    reps = values("repetitions", int)[0] if "repetitions" in cell else default_reps
    if model == "sinc":
        a = values("amplitude")[0] if "amplitude" in cell else SINC_AMPLITUDE[family.value]
        shape = Sinc(a)
    else:
        b0 = values("beta0")[0] if "beta0" in cell else 1.0
        b1 = values("beta1")[0] if "beta1" in cell else LINEAR_SLOPE[family.value]
        shape = Linear(b0, b1)
    out = []
    for s, p, n in itertools.product(values("scale"), values("noise_param"),
                                     values("n", int)):
        try:
            out.append(SimSpec(shape, NoiseSpec(family, p, s), n, reps, 0))
        except ValidationError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return out


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    return parse_config(path.read_text())
