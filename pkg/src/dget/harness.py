"""Experiment configuration, orchestration and persistence.

Configurations are flat ``section.key = value`` lines::

    # ring of eight nodes
    problem.kind = nonconvex-logistic
    problem.m = 8
    problem.n = 200
    problem.d = 10
    graph.topology = ring
    algorithm.name = dget
    algorithm.alpha = theorem1
    algorithm.T = 2000

``alpha = theorem1`` resolves the stepsize from the theory module and
``q``/``s1``/``s2`` accept ``auto`` for the prescribed batch plans.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import engine, graph, problems, theory
from .engine import AlgorithmConfig, ConfigError, RunTrace

AUTO = "auto"
THEOREM1 = "theorem1"
REQUIRED = object()

SUMMARY_KEYS = (
    "best_h", "best_h_iter", "first_hit_iter", "first_hit_ifo", "first_hit_comm",
    "beta", "k1", "k2", "k3", "alpha", "c0", "c1", "c2", "c3", "wall_ms",
)
SWEEP_COLUMNS = ("epsilon", "reached", "first_hit_iter", "first_hit_ifo", "first_hit_comm", "in_fit")
COMPARE_COLUMNS = (
    "algorithm", "seeds", "reached", "mean_first_hit_ifo", "mean_first_hit_comm", "flagged",
)


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise ValueError("must be a positive integer")
    return val


def _nonneg_int(text):
    val = int(text)
    if val < 0:
        raise ValueError("must be a nonnegative integer")
    return val


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise ValueError("must be positive")
    return val


def _nonneg_float(text):
    val = float(text)
    if not val >= 0:
        raise ValueError("must be nonnegative")
    return val


def _or_sentinel(parse, sentinel):
    def parser(text):
        return sentinel if text == sentinel else parse(text)
    return parser


def _choice(*options):
    def parser(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parser


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _str_list(text):
    return tuple(part.strip() for part in text.split(",") if part.strip())


# section -> key -> (parser, default)
SCHEMA = {
    "problem": {
        "kind": (_choice(*problems.KINDS), REQUIRED),
        "m": (_positive_int, REQUIRED),
        "n": (_positive_int, 64),
        "d": (_positive_int, REQUIRED),
        "lam": (_nonneg_float, 0.1),
        "sigma2": (_nonneg_float, 1.0),
        "seed": (_nonneg_int, 0),
    },
    "graph": {
        "topology": (str, None),
        "edges": (str, None),
        "scheme": (_choice("metropolis", "maxdegree", "laplacian"), "metropolis"),
        "gamma": (_or_sentinel(_nonneg_float, AUTO), AUTO),
        "p": (_positive_float, 0.5),
    },
    "algorithm": {
        "name": (_choice(*engine.ALGORITHMS), REQUIRED),
        "mode": (_choice(*engine.MODES), "finite-sum"),
        "alpha": (_or_sentinel(_nonneg_float, THEOREM1), THEOREM1),
        "safety": (_positive_float, 0.5),
        "q": (_or_sentinel(_positive_int, AUTO), AUTO),
        "s1": (_or_sentinel(_positive_int, AUTO), AUTO),
        "s2": (_or_sentinel(_positive_int, AUTO), AUTO),
        "T": (_nonneg_int, 1000),
        "epsilon": (_positive_float, 1e-3),
        "diag_every": (_positive_int, 1),
        "replace": (_bool, True),
    },
    "output": {
        "dir": (str, "out"),
        "formats": (_str_list, ("csv", "json")),
    },
}


@dataclass
class ExperimentConfig:
    problem: dict
    graph: dict
    algorithm: dict
    output: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def with_values(self, **sections) -> "ExperimentConfig":
        """Copy with ``section={key: value}`` overrides applied."""
        out = replace(self, **{s: dict(getattr(self, s)) for s in ("problem", "graph", "algorithm", "output")})
        for section, values in sections.items():
            getattr(out, section).update(values)
        return out


def parse_config(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Parse and validate the line format, applying defaults.

    Errors name the offending line: unknown keys, values of the wrong type
    and missing required keys all raise :class:`ConfigError`.
    """
    values: dict[str, dict] = {s: {} for s in SCHEMA}
    where: dict[tuple[str, str], int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, sep, rhs = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        section, dot, key = lhs.strip().partition(".")
        if not dot or section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {lhs.strip()!r}")
        parser, _ = SCHEMA[section][key]
        try:
            values[section][key] = parser(rhs.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {section}.{key}: {rhs.strip()!r} ({exc})") from None
        where[section, key] = lineno

    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if key not in values[section]:
                if default is REQUIRED:
                    raise ConfigError(f"missing required key {section}.{key}")
                values[section][key] = default

    cfg = ExperimentConfig(**values, base_dir=Path(base_dir) if base_dir else Path.cwd())
    g = cfg.graph
    if (g["topology"] is None) == (g["edges"] is None):
        raise ConfigError("set exactly one of graph.topology and graph.edges")
    if g["edges"] is not None and not _edge_path(cfg).exists():
        raise ConfigError(f"line {where['graph', 'edges']}: edge-list file {g['edges']!r} does not exist")
    if g["topology"] is not None and g["topology"] not in (*graph.TOPOLOGIES, "erdos_renyi", "er"):
        raise ConfigError(f"line {where['graph', 'topology']}: unknown topology {g['topology']!r}")
    a = cfg.algorithm
    if a["mode"] == "online" and a["name"] == "dgd":
        raise ConfigError(f"line {where.get(('algorithm', 'name'), 0)}: dgd is finite-sum only")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def _edge_path(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.graph["edges"])
    return p if p.is_absolute() else cfg.base_dir / p


def derive_seeds(master: int) -> tuple[int, int]:
    """(problem-data seed, sampling seed) from the master seed."""
    data, sampling = np.random.SeedSequence(master).spawn(2)
    return int(data.generate_state(1)[0]), int(sampling.generate_state(1)[0])


# --- resolution ------------------------------------------------------------------

@dataclass
class ResolvedRun:
    problem: problems.FiniteSumProblem | problems.OnlineProblem
    graph: graph.Graph
    mixing: graph.MixingMatrix
    config: AlgorithmConfig
    plan: theory.StepsizePlan
    constants: theory.PotentialConstants
    epsilon: float


def build_problem(cfg: ExperimentConfig):
    p = cfg.problem
    data_seed, _ = derive_seeds(p["seed"])
    return problems.make_problem(
        p["kind"], p["m"], p["n"], p["d"], seed=data_seed, lam=p["lam"],
        online=cfg.algorithm["mode"] == "online", sigma2=p["sigma2"],
    )


def build_graph(cfg: ExperimentConfig) -> graph.Graph:
    g = cfg.graph
    if g["edges"] is not None:
        out = graph.read_edge_list(_edge_path(cfg))
        if out.m != cfg.problem["m"]:
            raise ConfigError(f"edge list has {out.m} nodes but problem.m = {cfg.problem['m']}")
        return out
    return graph.make_topology(g["topology"], cfg.problem["m"], p=g["p"], seed=cfg.problem["seed"])


def resolve(cfg: ExperimentConfig, seed: int | None = None) -> ResolvedRun:
    """Build problem, graph and mixing matrix, then pin every ``auto`` value."""
    prob = build_problem(cfg)
    try:
        g = build_graph(cfg)
    except graph.GraphError as exc:
        raise ConfigError(str(exc)) from None
    gamma = cfg.graph["gamma"]
    mix = graph.mixing_matrix(g, cfg.graph["scheme"], None if gamma == AUTO else gamma)

    a = cfg.algorithm
    beta = theory.choose_beta(mix.eta)
    plan = theory.theorem1_stepsize(prob.L, mix.eta, beta, a["safety"])
    alpha = plan.alpha if a["alpha"] == THEOREM1 else a["alpha"]
    if alpha > 0:
        consts = theory.potential_constants(alpha, prob.L, beta, mix.eta, prob.m, strict=False)
    else:
        consts = theory.PotentialConstants(math.nan, 0.0, 0.0, 0.0)

    online = a["mode"] == "online"
    s1 = None
    if online:
        if AUTO in (a["s1"], a["q"], a["s2"]):
            if not consts.valid:
                raise ConfigError("auto batch sizes need a stepsize with positive potential constants")
            auto_s1, auto_s2, auto_q = theory.online_batch_plan(
                a["epsilon"], cfg.problem["sigma2"], consts.C0, alpha, beta)
        s1 = auto_s1 if a["s1"] == AUTO else a["s1"]
        q = auto_q if a["q"] == AUTO else a["q"]
        s2 = auto_s2 if a["s2"] == AUTO else a["s2"]
        if a["name"] == "dget" and s1 < s2:
            raise ConfigError(f"online mode needs s1 >= s2 (s1={s1}, s2={s2})")
    else:
        auto_q, auto_s2 = theory.finite_sum_batch_plan(cfg.problem["n"])
        q = auto_q if a["q"] == AUTO else a["q"]
        s2 = auto_s2 if a["s2"] == AUTO else a["s2"]

    _, sampling_seed = derive_seeds(cfg.problem["seed"] if seed is None else seed)
    algo = AlgorithmConfig(
        alpha=alpha, T=a["T"], q=q, s2=s2, s1=s1, mode=a["mode"], algorithm=a["name"],
        seed=sampling_seed, replace=a["replace"], diag_every=a["diag_every"],
    )
    return ResolvedRun(prob, g, mix, algo, plan, consts, a["epsilon"])


# --- summaries and persistence -----------------------------------------------

def first_hit(trace: RunTrace, epsilon: float) -> int | None:
    """Row index of the first recorded iteration with ``h <= epsilon``.

    That is also the first point where the running minimum of ``h`` drops
    to ``epsilon``.
    """
    hits = np.nonzero(trace["h"] <= epsilon)[0]
    return int(hits[0]) if hits.size else None


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) or math.isinf(x) else x


def summarize(trace: RunTrace, resolved: ResolvedRun, wall_ms: float) -> dict:
    h = trace["h"]
    best = int(np.argmin(h))
    hit = first_hit(trace, resolved.epsilon)
    plan, c = resolved.plan, resolved.constants
    return {
        "best_h": float(h[best]),
        "best_h_iter": int(trace["r"][best]),
        "first_hit_iter": None if hit is None else int(trace["r"][hit]),
        "first_hit_ifo": None if hit is None else int(trace["ifo_total"][hit]),
        "first_hit_comm": None if hit is None else int(trace["comm_rounds"][hit]),
        "beta": plan.beta,
        "k1": plan.K1,
        "k2": plan.K2,
        "k3": plan.K3,
        "alpha": resolved.config.alpha,
        "c0": _num(c.C0),
        "c1": _num(c.C1),
        "c2": _num(c.C2),
        "c3": _num(c.C3),
        "wall_ms": round(wall_ms, 3),
    }


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunResult:
    trace: RunTrace
    summary: dict
    resolved: ResolvedRun
    paths: dict[str, Path] = field(default_factory=dict)


def run(cfg: ExperimentConfig, seed: int | None = None, out_dir: str | Path | None = None,
        write: bool = True) -> RunResult:
    """Resolve and execute one run; write ``trace.csv`` and ``summary.json``.

    On divergence the partial trace is still written and the
    :class:`~dget.engine.DivergenceError` propagates.
    """
    resolved = resolve(cfg, seed)
    out = Path(out_dir if out_dir is not None else cfg.output["dir"])
    if not out.is_absolute() and out_dir is None:
        out = cfg.base_dir / out
    formats = cfg.output["formats"]
    start = time.perf_counter()
    try:
        trace = engine.run(resolved.problem, resolved.mixing, resolved.config)
    except engine.DivergenceError as exc:
        if write and "csv" in formats and len(exc.trace):
            write_atomic(out / "trace.csv", exc.trace.to_csv())
        raise
    summary = summarize(trace, resolved, 1000.0 * (time.perf_counter() - start))
    paths = {}
    if write:
        if "csv" in formats:
            paths["trace"] = out / "trace.csv"
            write_atomic(paths["trace"], trace.to_csv())
        if "json" in formats:
            paths["summary"] = out / "summary.json"
            write_atomic(paths["summary"], json.dumps(summary, indent=2) + "\n")
    return RunResult(trace, summary, resolved, paths)


# --- sweeps and comparisons ----------------------------------------------------

@dataclass
class SweepResult:
    rows: list[dict]
    slope: float
    flagged: list[float]

    def to_csv(self) -> str:
        return _csv(SWEEP_COLUMNS, self.rows)


def _csv(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join("" if row[c] is None else str(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


def _run_key(c: AlgorithmConfig):
    return (c.alpha, c.T, c.q, c.s1, c.s2, c.algorithm, c.seed)


def sweep(cfg: ExperimentConfig, epsilons, out_dir: str | Path | None = None) -> SweepResult:
    """First-hit communication rounds and IFO for each target accuracy.

    The slope is the least-squares fit of ``log(first-hit comm)`` against
    ``log(1/epsilon)`` over the targets that were reached after at least
    one iteration.  Runs whose resolved parameters coincide are shared.
    """
    eps = sorted((float(e) for e in epsilons), reverse=True)
    if not eps:
        raise ConfigError("epsilon list is empty")
    if len(eps) < 3 or min(eps) <= 0 or max(eps) / min(eps) < 10.0 * (1 - 1e-12):
        raise ConfigError("need at least 3 positive epsilons spanning one decade")
    cache: dict = {}
    rows, flagged = [], []
    for e in eps:
        res = resolve(cfg.with_values(algorithm={"epsilon": e}))
        key = _run_key(res.config)
        if key not in cache:
            cache[key] = engine.run(res.problem, res.mixing, res.config)
        trace = cache[key]
        hit = first_hit(trace, e)
        row = {"epsilon": e, "reached": hit is not None, "first_hit_iter": None,
               "first_hit_ifo": None, "first_hit_comm": None, "in_fit": False}
        if hit is None:
            flagged.append(e)
        else:
            row.update(first_hit_iter=int(trace["r"][hit]), first_hit_ifo=int(trace["ifo_total"][hit]),
                       first_hit_comm=int(trace["comm_rounds"][hit]))
            row["in_fit"] = row["first_hit_comm"] > 0
        rows.append(row)
    fit = [r for r in rows if r["in_fit"]]
    if len(fit) >= 2:
        xs = np.log([1.0 / r["epsilon"] for r in fit])
        ys = np.log([r["first_hit_comm"] for r in fit])
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = math.nan
    result = SweepResult(rows, slope, flagged)
    if out_dir is not None:
        write_atomic(Path(out_dir) / "sweep.csv", result.to_csv())
        write_atomic(Path(out_dir) / "sweep.json", json.dumps({"slope": _num(slope), "flagged": flagged}) + "\n")
    return result


@dataclass
class CompareResult:
    rows: list[dict]

    def to_csv(self) -> str:
        return _csv(COMPARE_COLUMNS, self.rows)

    def row(self, algorithm: str) -> dict:
        return next(r for r in self.rows if r["algorithm"] == algorithm)


def compare(cfg: ExperimentConfig, algorithms, n_seeds: int = 5, epsilon: float | None = None,
            out_dir: str | Path | None = None) -> CompareResult:
    """Mean first-hit IFO and communication per algorithm over shared seeds.

    Problem data stay fixed; only the sampling seed varies across the
    ``n_seeds`` runs.  A row is flagged when some seed never reached the
    target, and its means cover the seeds that did.
    """
    algorithms = list(algorithms)
    if not algorithms:
        raise ConfigError("algorithm list is empty")
    for name in algorithms:
        if name not in engine.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {name!r}")
    if n_seeds < 1:
        raise ConfigError("need at least one seed")
    eps = cfg.algorithm["epsilon"] if epsilon is None else epsilon
    master = cfg.problem["seed"]
    rows = []
    for name in algorithms:
        sub = cfg.with_values(algorithm={"name": name, "epsilon": eps})
        ifo, comm = [], []
        for k in range(n_seeds):
            res = resolve(sub, seed=master + k)
            try:
                trace = engine.run(res.problem, res.mixing, res.config)
            except engine.DivergenceError:
                continue
            hit = first_hit(trace, eps)
            if hit is not None:
                ifo.append(int(trace["ifo_total"][hit]))
                comm.append(int(trace["comm_rounds"][hit]))
        rows.append({
            "algorithm": name,
            "seeds": n_seeds,
            "reached": len(ifo),
            "mean_first_hit_ifo": float(np.mean(ifo)) if ifo else None,
            "mean_first_hit_comm": float(np.mean(comm)) if comm else None,
            "flagged": len(ifo) < n_seeds,
        })
    result = CompareResult(rows)
    if out_dir is not None:
        write_atomic(Path(out_dir) / "compare.csv", result.to_csv())
    return result


# --- gradient check -------------------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_error: float
    probes: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def gradcheck(problem, probes: int = 10, step: float = 1e-5, tol: float = 1e-6, seed: int = 0) -> GradcheckReport:
    """Central finite differences against analytic sample gradients.

    The relative error is ``||g - g_fd|| / max(||g||, ||g_fd||, 1e-8)``.
    Probing uses the uncharged oracle so the IFO counter is untouched.
    """
    base = problem.base if isinstance(problem, problems.OnlineProblem) else problem
    rng = np.random.default_rng(seed)
    worst = 0.0
    eye = np.eye(base.d)
    for _ in range(probes):
        i = int(rng.integers(base.m))
        j = int(rng.integers(base.n))
        x = rng.normal(size=base.d)
        g = base.sample_gradient_uncharged(i, j, x)
        fd = np.array([
            (base.sample_value(i, j, x + step * e) - base.sample_value(i, j, x - step * e)) / (2 * step)
            for e in eye
        ])
        scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-8)
        worst = max(worst, float(np.linalg.norm(g - fd) / scale))
    return GradcheckReport(worst, probes, tol)


def config_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["base_dir"] = str(cfg.base_dir)
    return out
