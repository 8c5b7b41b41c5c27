"""Factorial Monte Carlo study: conditions x sample sizes x misfit levels x
contour modes, aggregated into a table of axis widths.

Determinism contract: (seed, design) fully determines the result.  Each
replication draws from its own counter-based Philox stream keyed by
hash(seed, condition, n, epsilon, replication index), so cells are
order-independent and can run in parallel without shared state.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from itertools import repeat

import numpy as np

from .contour import CONFIDENCE, DELTA_F, EPS_TILDE, ContourTarget, axis_widths_exact, f_target
from .errors import DegenerateSample, FungibleError, NotPositiveDefinite
from .fit import fit_ml
from .model import condition_from_label, misspecify_to_epsilon

# The study's delta_f target uses relative scaling: only then do delta_f
# widths grow with the population misfit level, the pattern the reference
# table shows within rows.  Likelihood scaling keeps the offset constant in
# epsilon, which leaves the widths flat.
DEFAULT_TARGETS = (
    ContourTarget(mode=CONFIDENCE, confidence=0.95),
    ContourTarget(mode=EPS_TILDE, epsilon_tilde=0.005),
    ContourTarget(mode=DELTA_F, delta_f=0.05, scaling="relative"),
)


@dataclass(frozen=True)
class StudyDesign:
    conditions: tuple[str, ...] = ("Sigma1", "Sigma2", "Sigma3", "Sigma4")
    sample_sizes: tuple[int, ...] = (1000, 200)
    epsilons: tuple[float, ...] = (0.0, 0.03, 0.09)
    replications: int = 500
    seed: int = 0
    targets: tuple[ContourTarget, ...] = DEFAULT_TARGETS
    directions: int = 360
    focal: tuple[str, str] = ("gamma1", "gamma2")
    population_analysis: tuple[str, ...] = (CONFIDENCE,)

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "focal", tuple(self.focal))
        object.__setattr__(
            self, "population_analysis", tuple(self.population_analysis)
        )
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        eps = self.epsilons
        if any(e < 0 for e in eps) or list(eps) != sorted(eps):
            raise ValueError("epsilons must be nonnegative and ascending")
        modes = [t.mode for t in self.targets]
        if len(set(modes)) != len(modes):
            raise ValueError("duplicate contour modes in targets")


@dataclass(frozen=True)
class StudyCell:
    condition: str
    n: int
    epsilon: float
    mode: str
    major_mean: float
    major_sd: float
    minor_mean: float
    minor_sd: float
    n_converged: int
    n_excluded: int


@dataclass(frozen=True)
class StudyTable:
    conditions: tuple[str, ...]
    sample_sizes: tuple[int, ...]
    epsilons: tuple[float, ...]
    cells: tuple[StudyCell, ...]

    def cell(self, condition, n, mode, epsilon=0.0) -> StudyCell | None:
        for c in self.cells:
            if (
                c.condition == condition
                and c.n == n
                and c.mode == mode
                and c.epsilon == epsilon
            ):
                return c
        return None


def replication_rng(seed: int, condition: str, n: int, epsilon: float, rep: int) -> np.random.Generator:
    """Counter-based generator for one replication, keyed by a stable hash of
    the cell coordinates so streams never collide or depend on run order."""
    tag = f"{int(seed)}|{condition}|{int(n)}|{float(epsilon)!r}|{int(rep)}"
    digest = hashlib.blake2b(tag.encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def wishart_sample(sigma, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample covariance of n multivariate-normal observations with population
    covariance ``sigma``, via the Bartlett decomposition.

    S = L A A' L' / (n - 1) with L = chol(sigma), A lower triangular with
    chi-distributed diagonal (df n-1, n-2, ...) and standard-normal
    subdiagonal.  Raises :class:`DegenerateSample` if the draw fails its
    Cholesky check twice.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if n <= p:
        raise ValueError("wishart sampling needs n > p")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("sigma") from None

    def draw():
        a = np.zeros((p, p))
        dfs = n - 1 - np.arange(p)
        a[np.diag_indices(p)] = np.sqrt(rng.chisquare(dfs))
        if p > 1:
            a[np.tril_indices(p, k=-1)] = rng.standard_normal(p * (p - 1) // 2)
        w = chol @ a
        s = (w @ w.T) / (n - 1)
        return 0.5 * (s + s.T)

    for _ in range(2):
        s = draw()
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            continue
        return s
    raise DegenerateSample("sampled covariance failed its Cholesky check twice")


@lru_cache(maxsize=None)
def condition_at(label: str, epsilon: float):
    """Builtin condition misspecified to a population RMSEA (cached; the
    root search behind it is deterministic)."""
    cond = condition_from_label(label)
    if epsilon == 0.0:
        return cond
    return misspecify_to_epsilon(cond, epsilon)


def run_cell(design: StudyDesign, condition: str, n: int, epsilon: float, mode: str) -> StudyCell:
    """One table cell: replicate draw -> fit -> exact axis widths, then mean
    and SD over the converged replications.

    Modes listed in ``design.population_analysis`` analyze the population
    covariance directly instead (one replication, SD exactly 0).  Failed,
    nonconverged, improper, and partial-sweep replications are excluded and
    counted.
    """
    target = {t.mode: t for t in design.targets}[mode]
    cond = condition_at(condition, float(epsilon))
    model = cond.model
    focal = tuple(model.theta_names.index(name) for name in design.focal)
    population = mode in design.population_analysis
    replications = 1 if population else design.replications

    majors, minors = [], []
    excluded = 0
    for rep in range(replications):
        if population:
            s = cond.sigma_pop
        else:
            rng = replication_rng(design.seed, condition, n, epsilon, rep)
            try:
                s = wishart_sample(cond.sigma_pop, n, rng)
            except FungibleError:
                excluded += 1
                continue
        try:
            res = fit_ml(model, s, n=n)
            if not res.converged or res.improper:
                excluded += 1
                continue
            level = f_target(target, res, n_focal=len(focal))
            widths = axis_widths_exact(res, level, focal, design.directions)
            if widths.partial:
                excluded += 1
                continue
        except FungibleError:
            excluded += 1
            continue
        majors.append(widths.major)
        minors.append(widths.minor)

    def mean(xs):
        return float(np.mean(xs)) if xs else math.nan

    def sd(xs):
        return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0

    return StudyCell(
        condition=condition,
        n=int(n),
        epsilon=float(epsilon),
        mode=mode,
        major_mean=mean(majors),
        major_sd=sd(majors),
        minor_mean=mean(minors),
        minor_sd=sd(minors),
        n_converged=len(majors),
        n_excluded=excluded,
    )


def _jobs(design: StudyDesign):
    jobs = []
    for condition in design.conditions:
        for n in design.sample_sizes:
            for target in design.targets:
                if target.mode == CONFIDENCE:
                    jobs.append((condition, n, 0.0, target.mode))
                else:
                    for eps in design.epsilons:
                        jobs.append((condition, n, eps, target.mode))
    return jobs


def _worker_count(n_jobs, threads):
    if threads is None:
        env = os.environ.get("FC_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(threads), n_jobs))


def run_design(design: StudyDesign, threads: int | None = None) -> StudyTable:
    """Run every cell of the design.  ``threads`` defaults to the FC_THREADS
    environment variable, then the processor count; cells are independent
    work units and the merge is deterministic regardless of worker count."""
    jobs = _jobs(design)
    workers = _worker_count(len(jobs), threads)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, repeat(design), *zip(*jobs)))
    else:
        cells = [run_cell(design, *job) for job in jobs]
    return StudyTable(
        conditions=design.conditions,
        sample_sizes=design.sample_sizes,
        epsilons=design.epsilons,
        cells=tuple(cells),
    )


# ---------------------------------------------------------------------------
# Table emission and parsing


def _columns(epsilons):
    cols = ["cs_major_mean", "cs_major_sd", "cs_minor_mean", "cs_minor_sd"]
    for mode in (EPS_TILDE, DELTA_F):
        for eps in epsilons:
            cols.append(f"{mode}_major_{eps:g}")
            cols.append(f"{mode}_minor_{eps:g}")
    return cols


def _row_values(table, condition, n):
    values = []
    cs = table.cell(condition, n, CONFIDENCE, 0.0)
    if cs is None:
        values += [math.nan] * 4
    else:
        values += [cs.major_mean, cs.major_sd, cs.minor_mean, cs.minor_sd]
    for mode in (EPS_TILDE, DELTA_F):
        for eps in table.epsilons:
            cell = table.cell(condition, n, mode, eps)
            if cell is None:
                values += [math.nan, math.nan]
            else:
                values += [cell.major_mean, cell.minor_mean]
    return values


def emit_table(table: StudyTable, format: str = "csv") -> str:
    """Render the 18-column study table (condition, N, then 16 width columns:
    confidence-set major/minor mean and SD, then major/minor per epsilon for
    the two FPE modes).  CSV carries full precision; markdown rounds to two
    decimals.
    """
    header = ["condition", "n"] + _columns(table.epsilons)
    rows = []
    for condition in table.conditions:
        for n in table.sample_sizes:
            rows.append((condition, n, _row_values(table, condition, n)))
    if format == "csv":
        lines = [",".join(header)]
        for condition, n, values in rows:
            lines.append(",".join([condition, str(n)] + [repr(float(v)) for v in values]))
        return "\n".join(lines) + "\n"
    if format == "markdown":
        lines = ["| " + " | ".join(header) + " |"]
        lines.append("|" + "|".join([" --- "] * len(header)) + "|")
        for condition, n, values in rows:
            cells = [condition, str(n)] + [f"{v:.2f}" for v in values]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {format!r}")


def parse_table(text: str, format: str = "csv") -> StudyTable:
    """Parse :func:`emit_table` output back into a :class:`StudyTable`.

    FPE cells carry only means in the table, so their SDs parse as 0 and the
    replication counts are placeholders.
    """
    if format == "csv":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        header = lines[0].split(",")
        data = [ln.split(",") for ln in lines[1:]]
    elif format == "markdown":
        lines = [ln for ln in text.strip().splitlines() if ln.strip().startswith("|")]
        rows = [[cell.strip() for cell in ln.strip().strip("|").split("|")] for ln in lines]
        header = rows[0]
        data = [r for r in rows[1:] if not set("".join(r)) <= set("- ")]
    else:
        raise ValueError(f"unknown table format {format!r}")

    names = header[2:]
    epsilons = []
    for name in names:
        if name.startswith(f"{EPS_TILDE}_major_"):
            epsilons.append(float(name.rsplit("_", 1)[1]))

    cells = []
    conditions: list[str] = []
    sample_sizes: list[int] = []
    for row in data:
        condition, n = row[0], int(row[1])
        if condition not in conditions:
            conditions.append(condition)
        if n not in sample_sizes:
            sample_sizes.append(n)
        values = dict(zip(names, (float(v) for v in row[2:])))
        cells.append(
            StudyCell(
                condition, n, 0.0, CONFIDENCE,
                values["cs_major_mean"], values["cs_major_sd"],
                values["cs_minor_mean"], values["cs_minor_sd"], 1, 0,
            )
        )
        for mode in (EPS_TILDE, DELTA_F):
            for eps in epsilons:
                cells.append(
                    StudyCell(
                        condition, n, eps, mode,
                        values[f"{mode}_major_{eps:g}"], 0.0,
                        values[f"{mode}_minor_{eps:g}"], 0.0, 1, 0,
                    )
                )
    return StudyTable(tuple(conditions), tuple(sample_sizes), tuple(epsilons), tuple(cells))


# Embedded reference table of axis widths (8 rows x 16 width columns) used
# by the internal-consistency check: confidence-set widths must scale across
# N = 1000 -> 200 by sqrt(999/199).
PAPER_TABLE_CSV = """\
condition,n,cs_major_mean,cs_major_sd,cs_minor_mean,cs_minor_sd,eps_tilde_major_0,eps_tilde_minor_0,eps_tilde_major_0.03,eps_tilde_minor_0.03,eps_tilde_major_0.09,eps_tilde_minor_0.09,delta_f_major_0,delta_f_minor_0,delta_f_major_0.03,delta_f_minor_0.03,delta_f_major_0.09,delta_f_minor_0.09
Sigma1,1000,0.19,0,0.18,0,0.16,0.15,0.33,0.32,0.59,0.56,0.13,0.13,0.18,0.17,0.40,0.38
Sigma1,200,0.43,0,0.40,0,0.48,0.44,0.30,0.28,0.60,0.55,0.29,0.27,0.32,0.30,0.50,0.46
Sigma2,1000,0.17,0,0.16,0,0.18,0.18,0.29,0.29,0.51,0.50,0.11,0.11,0.16,0.15,0.36,0.35
Sigma2,200,0.38,0,0.36,0,0.39,0.38,0.26,0.25,0.52,0.50,0.26,0.25,0.28,0.27,0.43,0.42
Sigma3,1000,0.25,0,0.20,0,0.27,0.22,0.42,0.34,0.75,0.61,0.17,0.14,0.23,0.18,0.52,0.42
Sigma3,200,0.56,0,0.44,0,0.50,0.39,0.40,0.31,0.76,0.59,0.38,0.30,0.42,0.33,0.63,0.50
Sigma4,1000,0.20,0,0.17,0,0.25,0.22,0.35,0.30,0.62,0.53,0.14,0.12,0.19,0.16,0.43,0.37
Sigma4,200,0.46,0,0.39,0,0.46,0.39,0.32,0.27,0.63,0.53,0.32,0.27,0.35,0.29,0.53,0.45
"""


def paper_fixture() -> StudyTable:
    """The embedded reference table."""
    return parse_table(PAPER_TABLE_CSV, "csv")


def check_fixture_scaling(table: StudyTable | None = None, tolerance: float = 0.015):
    """Internal-consistency check of the reference table: every confidence-set
    width at N=200 must equal the N=1000 width times sqrt(999/199) within the
    rounding slack.  Returns (ok, report lines)."""
    if table is None:
        table = paper_fixture()
    if not {1000, 200} <= set(table.sample_sizes):
        raise ValueError("scaling check needs sample sizes 1000 and 200")
    ratio = math.sqrt(999.0 / 199.0)
    ok = True
    lines = [f"confidence-set width scaling check: N=200 vs N=1000 x {ratio:.4f}"]
    for condition in table.conditions:
        big = table.cell(condition, 1000, CONFIDENCE, 0.0)
        small = table.cell(condition, 200, CONFIDENCE, 0.0)
        if big is None or small is None:
            ok = False
            lines.append(f"{condition}: missing confidence-set cells")
            continue
        for axis, w_big, w_small in (
            ("major", big.major_mean, small.major_mean),
            ("minor", big.minor_mean, small.minor_mean),
        ):
            predicted = w_big * ratio
            delta = abs(w_small - predicted)
            good = delta <= tolerance
            ok = ok and good
            lines.append(
                f"{condition} {axis}: {w_big:.2f} x {ratio:.4f} = {predicted:.3f} "
                f"vs {w_small:.2f} (delta {delta:.3f}) {'ok' if good else 'FAIL'}"
            )
    lines.append("all checks passed" if ok else "CHECK FAILED")
    return ok, lines
