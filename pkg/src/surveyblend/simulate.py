"""Synthetic populations and Monte Carlo verification of the estimators.

Generates finite populations with known truth, draws stratified probability
samples (design weights = inverse sampling fractions) and Bernoulli
nonprobability samples (logistic selection with the intercept calibrated to
a target size), injects always-yes contamination into chosen subgroups, and
replays the full estimation pipeline over independent replicates so every
analytic claim can be checked against exact population truth.

Replicate RNG streams are derived from (seed, replicate index); outputs are
deterministic for a given spec and seed regardless of execution order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .benchmark import apply_bias_correction, estimate_bias
from .composite import CompositeInputs, comb_composite, compose_tables, ev_composite
from .estimators import ipw_estimate_table, model_assisted_table, ps_estimate_table
from .propensity import PropensityFit, fit_propensity
from .response_model import GBMConfig, build_training_set, fit_gbm, predict_for_sample
from .samples import (
    OVERALL,
    BenchmarkTable,
    CovariateSchema,
    EstimateTable,
    NonprobabilitySample,
    ProbabilitySample,
    SubgroupKey,
)

BENEFIT_QUESTIONS = ("unemployment_comp", "workers_comp", "food_stamps", "social_security")

# fixed stream tags so independent draws never share a substream
_POP, _PS, _NPS, _BOGUS, _SUBSAMPLE, _REP = 0, 1, 2, 3, 4, 5


class EmptyStratumError(ValueError):
    """A sampling stratum contains no population units."""


class MonteCarloError(RuntimeError):
    """Too many replicates failed to complete the pipeline."""


def _rng(seed, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *tags)))


# ---------------------------------------------------------------------------
# specification


@dataclass(frozen=True)
class FactorSpec:
    name: str
    levels: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.levels) != len(self.probs):
            raise ValueError(f"factor {self.name!r}: levels and probs differ in length")
        if any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise ValueError(f"factor {self.name!r}: probabilities outside [0, 1]")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"factor {self.name!r}: probabilities must sum to 1")


@dataclass(frozen=True)
class QuestionSpec:
    id: str
    coefs: Mapping[str, float]  # "intercept" plus "factor:level" keys

    def __post_init__(self):
        object.__setattr__(self, "coefs", dict(self.coefs))


@dataclass(frozen=True)
class StratifiedDesign:
    factor: str
    fractions: Mapping[str, float]  # level -> sampling fraction in (0, 1]

    def __post_init__(self):
        fractions = {str(k): float(v) for k, v in self.fractions.items()}
        object.__setattr__(self, "fractions", fractions)
        if any(not 0.0 < f <= 1.0 for f in fractions.values()):
            raise ValueError("sampling fractions must lie in (0, 1]")


@dataclass(frozen=True)
class BogusSpec:
    """Per-subgroup probability that a respondent answers yes to everything."""

    factor: str = "age"
    probs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        probs = {str(k): float(v) for k, v in self.probs.items()}
        object.__setattr__(self, "probs", probs)
        if any(not 0.0 <= p <= 1.0 for p in probs.values()):
            raise ValueError("contamination probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class PopulationSpec:
    N: int
    factors: tuple[FactorSpec, ...]
    questions: tuple[QuestionSpec, ...]
    selection_coefs: Mapping[str, float]  # slopes; intercept is calibrated
    target_n_nps: int
    design: StratifiedDesign
    bogus: BogusSpec

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "selection_coefs", dict(self.selection_coefs))
        if self.N < 1:
            raise ValueError("population size must be positive")
        if not self.factors or not self.questions:
            raise ValueError("spec needs at least one factor and one question")
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError("duplicate factor names")
        if self.design.factor not in names:
            raise ValueError(f"design stratifies on unknown factor {self.design.factor!r}")
        if self.bogus.factor not in names:
            raise ValueError(f"bogus spec references unknown factor {self.bogus.factor!r}")
        if not 1 <= self.target_n_nps <= self.N:
            raise ValueError("target nonprobability size must be in [1, N]")

    def schema(self) -> CovariateSchema:
        return CovariateSchema({f.name: f.levels for f in self.factors})

    def question_ids(self) -> tuple[str, ...]:
        return tuple(q.id for q in self.questions)

    def to_json(self, path) -> None:
        payload = {
            "N": self.N,
            "factors": [
                {"name": f.name, "levels": list(f.levels), "probs": list(f.probs)}
                for f in self.factors
            ],
            "questions": [{"id": q.id, "coefs": dict(q.coefs)} for q in self.questions],
            "selection": {"coefs": dict(self.selection_coefs), "target_n": self.target_n_nps},
            "ps_design": {"factor": self.design.factor, "fractions": dict(self.design.fractions)},
            "bogus": {"factor": self.bogus.factor, "probs": dict(self.bogus.probs)},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "PopulationSpec":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            N=int(payload["N"]),
            factors=tuple(
                FactorSpec(f["name"], tuple(f["levels"]), tuple(f["probs"]))
                for f in payload["factors"]
            ),
            questions=tuple(
                QuestionSpec(q["id"], dict(q["coefs"])) for q in payload["questions"]
            ),
            selection_coefs=dict(payload["selection"]["coefs"]),
            target_n_nps=int(payload["selection"]["target_n"]),
            design=StratifiedDesign(
                payload["ps_design"]["factor"], dict(payload["ps_design"]["fractions"])
            ),
            bogus=BogusSpec(payload["bogus"]["factor"], dict(payload["bogus"]["probs"])),
        )


def default_population_spec(
    n_population: int = 50_000,
    target_n_ps: int | None = None,
    target_n_nps: int = 2_500,
) -> PopulationSpec:
    """Desk-scale default: 5 demographic factors, 12 yes/no questions.

    Question prevalences, the young-skewed opt-in selection, and the
    age-graded always-yes contamination are sized so the full Monte Carlo
    suite runs in minutes while reproducing the qualitative failure mode of
    commercial opt-in panels (rare-benefit incidence inflated from under a
    fifth of a percent to several percent among 18-29 respondents).
    """
    factors = (
        FactorSpec("age", ("18-29", "30-64", "65+"), (0.21, 0.56, 0.23)),
        FactorSpec("race", ("white", "black", "hispanic"), (0.62, 0.12, 0.26)),
        FactorSpec("education", ("hs_or_less", "some_college", "college_grad"), (0.38, 0.29, 0.33)),
        FactorSpec("gender", ("female", "male"), (0.51, 0.49)),
        FactorSpec("region", ("northeast", "midwest", "south", "west"), (0.17, 0.21, 0.38, 0.24)),
    )
    questions = (
        QuestionSpec("insurance", {"intercept": 1.7, "age:65+": 1.2,
                                   "education:college_grad": 0.6, "race:hispanic": -0.8}),
        QuestionSpec("blood_pressure", {"intercept": -2.1, "age:30-64": 1.3,
                                        "age:65+": 2.5, "race:black": 0.5}),
        QuestionSpec("parent", {"intercept": -1.9, "age:30-64": 1.3, "age:65+": -1.0}),
        QuestionSpec("food_allergy", {"intercept": -2.2, "gender:male": -0.4}),
        QuestionSpec("job_last_year", {"intercept": 0.5, "age:30-64": 0.5, "age:65+": -2.2,
                                       "education:college_grad": 0.5}),
        QuestionSpec("retirement_account", {"intercept": -1.5, "age:30-64": 1.4, "age:65+": 1.7,
                                            "education:college_grad": 1.1}),
        QuestionSpec("unemployment_comp", {"intercept": -1.9, "age:30-64": -0.5, "age:65+": -1.9,
                                           "race:hispanic": 0.3}),
        QuestionSpec("workers_comp", {"intercept": -5.6, "age:30-64": 0.5, "age:65+": -0.5}),
        QuestionSpec("food_stamps", {"intercept": -1.8, "age:30-64": -0.3, "age:65+": -0.8,
                                     "race:black": 0.9, "race:hispanic": 0.5,
                                     "education:college_grad": -1.2}),
        QuestionSpec("social_security", {"intercept": -4.0, "age:30-64": 1.5, "age:65+": 6.8}),
        QuestionSpec("union", {"intercept": -2.9, "age:30-64": 0.5,
                               "education:college_grad": 0.4}),
        QuestionSpec("citizen", {"intercept": 3.4, "race:hispanic": -2.0}),
    )
    # overall ps sampling rate ~5.1%, slightly uneven across regions so the
    # design weights spread over more than one segmentation bin
    base = {"northeast": 0.045, "midwest": 0.05, "south": 0.0525, "west": 0.055}
    if target_n_ps is not None:
        expected = sum(
            n_population * p * base[lv]
            for lv, p in zip(factors[4].levels, factors[4].probs)
        )
        base = {lv: f * target_n_ps / expected for lv, f in base.items()}
    return PopulationSpec(
        N=n_population,
        factors=factors,
        questions=questions,
        selection_coefs={"age:30-64": -0.7, "age:65+": -1.5, "education:college_grad": 0.4,
                         "race:hispanic": 0.2, "gender:male": 0.15},
        target_n_nps=target_n_nps,
        design=StratifiedDesign("region", base),
        bogus=BogusSpec("age", {"18-29": 0.08, "30-64": 0.02, "65+": 0.005}),
    )


# ---------------------------------------------------------------------------
# population and sample draws


@dataclass(frozen=True)
class Population:
    """A realized finite population with exactly computable truth."""

    spec: PopulationSpec
    schema: CovariateSchema
    X: np.ndarray
    groups: Mapping[str, np.ndarray]
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def questions(self) -> tuple[str, ...]:
        return self.spec.question_ids()

    def question_index(self, question: str) -> int:
        return self.questions.index(question)

    def truth_overall(self) -> dict[str, float]:
        return {q: float(self.y[:, j].mean()) for j, q in enumerate(self.questions)}

    def truth_value(self, question: str, cell: SubgroupKey) -> float:
        j = self.questions.index(question)
        if cell == OVERALL:
            return float(self.y[:, j].mean())
        mask = self.groups[cell.factor] == cell.level
        return float(self.y[mask, j].mean())

    def truth_benchmark(self, factors: tuple[str, ...] = ()) -> BenchmarkTable:
        cells = [OVERALL] + [
            SubgroupKey(f, lv) for f in factors for lv in self.schema.levels(f)
        ]
        return BenchmarkTable(
            {(q, c): self.truth_value(q, c) for q in self.questions for c in cells}
        )


def generate_population(spec: PopulationSpec, seed: int) -> Population:
    """Sample covariates and true responses; deterministic per (spec, seed)."""
    rng = _rng(seed, _POP)
    schema = spec.schema()
    n = spec.N
    X = np.ones((n, schema.dim))
    groups: dict[str, np.ndarray] = {}
    for f in spec.factors:
        codes = rng.choice(len(f.levels), size=n, p=f.probs)
        labels = np.asarray(f.levels, dtype=object)[codes]
        groups[f.name] = labels
        for k, lv in enumerate(f.levels[1:], start=1):
            X[:, 1 + schema.columns.index((f.name, lv))] = codes == k
    y = np.empty((n, len(spec.questions)))
    for j, q in enumerate(spec.questions):
        eta = X @ schema.coefficient_vector(q.coefs)
        y[:, j] = rng.random(n) < expit(eta)
    return Population(spec=spec, schema=schema, X=X, groups=groups, y=y)


def draw_probability_sample(
    pop: Population, design: StratifiedDesign, seed: int
) -> ProbabilitySample:
    """Stratified simple random sample with weights 1/f per stratum."""
    rng = _rng(seed, _PS)
    labels = pop.groups[design.factor]
    chosen: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    for level in pop.schema.levels(design.factor):
        if level not in design.fractions:
            raise ValueError(f"design has no fraction for stratum {level!r}")
        units = np.flatnonzero(labels == level)
        if units.size == 0:
            raise EmptyStratumError(f"stratum {level!r} has no population units")
        f = design.fractions[level]
        take = min(max(int(round(f * units.size)), 1), units.size)
        sel = rng.choice(units, size=take, replace=False)
        chosen.append(sel)
        weights.append(np.full(take, 1.0 / f))
    idx = np.concatenate(chosen)
    order = np.argsort(idx)
    idx = idx[order]
    d = np.concatenate(weights)[order]
    return ProbabilitySample(
        X=pop.X[idx],
        y=pop.y[idx],
        weights=d,
        questions=pop.questions,
        groups={k: v[idx] for k, v in pop.groups.items()},
        schema=pop.schema,
    )


def selection_propensities(
    pop: Population, coefs: Mapping[str, float], target: int
) -> np.ndarray:
    """True participation propensities with the intercept calibrated by
    bisection so the expected sample size equals ``target``."""
    if not 1 <= target < pop.n:
        raise ValueError(f"target {target} unattainable for population of {pop.n}")
    slopes = dict(coefs)
    slopes.pop("intercept", None)
    eta = pop.X @ pop.schema.coefficient_vector({"intercept": 0.0, **slopes})
    alpha = brentq(lambda a: expit(a + eta).sum() - target, -40.0, 40.0, xtol=1e-12)
    return expit(alpha + eta)


@dataclass(frozen=True)
class NpsDraw:
    """A realized nonprobability sample plus its simulation-only truth."""

    sample: NonprobabilitySample
    true_pi: np.ndarray
    indices: np.ndarray
    bogus_flags: np.ndarray | None = None


def draw_nonprobability_sample(
    pop: Population,
    coefs: Mapping[str, float],
    target: int,
    seed: int,
    *,
    propensities: np.ndarray | None = None,
) -> NpsDraw:
    """Poisson sampling: each unit joins independently with its propensity.

    ``propensities`` short-circuits the intercept calibration when the
    caller has already computed the true propensity vector.
    """
    pi = propensities if propensities is not None else selection_propensities(pop, coefs, target)
    rng = _rng(seed, _NPS)
    idx = np.flatnonzero(rng.random(pop.n) < pi)
    sample = NonprobabilitySample(
        X=pop.X[idx],
        y=pop.y[idx],
        questions=pop.questions,
        groups={k: v[idx] for k, v in pop.groups.items()},
        schema=pop.schema,
    )
    return NpsDraw(sample=sample, true_pi=pi[idx], indices=idx)


def inject_bogus_responses(draw: NpsDraw, bogus: BogusSpec, seed: int) -> NpsDraw:
    """Flag units with their subgroup probability; flagged units answer yes
    to every question. Flags are retained for diagnostics."""
    sample = draw.sample
    labels = sample.groups[bogus.factor]
    p = np.array([bogus.probs.get(str(lv), 0.0) for lv in labels])
    rng = _rng(seed, _BOGUS)
    flags = rng.random(sample.n) < p
    y = sample.y.copy()
    y[flags] = 1.0
    contaminated = NonprobabilitySample(
        X=sample.X, y=y, questions=sample.questions,
        groups=sample.groups, schema=sample.schema,
    )
    return NpsDraw(
        sample=contaminated, true_pi=draw.true_pi, indices=draw.indices, bogus_flags=flags
    )


def weight_segment_subsample(
    ps: ProbabilitySample, target_n: int, seed: int
) -> ProbabilitySample:
    """Stratified subsample where strata are bins of the normalized weight.

    Weights are normalized to mean 1, binned into widths of 0.5 starting at
    (0, 0.5), and the target is allocated proportionally with
    largest-remainder rounding. Surviving units carry their weight times
    (stratum size / stratum take), keeping the weighted total unchanged in
    expectation.
    """
    if not 1 <= target_n <= ps.n:
        raise ValueError(f"target {target_n} exceeds the sample size {ps.n}")
    normalized = ps.weights / ps.weights.mean()
    bins = np.floor(normalized / 0.5).astype(int)
    levels = np.unique(bins)
    sizes = np.array([(bins == b).sum() for b in levels])
    quota = target_n * sizes / ps.n
    take = np.floor(quota).astype(int)
    remainder = quota - take
    # hand leftover slots to the largest fractional remainders, ties by bin order
    leftover = target_n - int(take.sum())
    for i in np.argsort(-remainder, kind="stable")[:leftover]:
        take[i] += 1
    rng = _rng(seed, _SUBSAMPLE)
    keep_parts = []
    factor_parts = []
    for b, n_h, t_h in zip(levels, sizes, take):
        if t_h == 0:
            continue
        units = np.flatnonzero(bins == b)
        sel = rng.choice(units, size=int(t_h), replace=False)
        keep_parts.append(sel)
        factor_parts.append(np.full(int(t_h), n_h / t_h))
    keep = np.concatenate(keep_parts)
    inflate = np.concatenate(factor_parts)
    order = np.argsort(keep)
    keep = keep[order]
    inflate = inflate[order]
    out = ps.take(keep)
    return out.replace_weights(out.weights * inflate)


def rare_benefit_incidence(
    sample,
    questions: Sequence[str] = BENEFIT_QUESTIONS,
    *,
    min_yes: int = 3,
    factor: str | None = None,
    level: str | None = None,
) -> float:
    """Share of units answering yes to at least ``min_yes`` of the questions."""
    cols = [sample.question_index(q) for q in questions]
    yes = np.nansum(sample.y[:, cols] == 1.0, axis=1)
    keep = np.ones(sample.n, dtype=bool)
    if factor is not None:
        keep = sample.groups[factor] == level
    if not keep.any():
        raise ValueError(f"no units in subgroup {factor}={level}")
    return float((yes[keep] >= min_yes).mean())


# ---------------------------------------------------------------------------
# Monte Carlo harness

Pipeline = Callable[[Population, int], dict[str, EstimateTable]]


@dataclass
class MonteCarloResult:
    """Per-estimator empirical moments against exact population truth."""

    truth: dict[tuple[str, SubgroupKey], float]
    estimates: dict[str, dict[tuple[str, SubgroupKey], np.ndarray]]
    n_replicates: int
    n_failures: int
    seed: int

    def labels(self) -> tuple[str, ...]:
        return tuple(self.estimates)

    def cells(self, label: str) -> list[tuple[str, SubgroupKey]]:
        return list(self.estimates[label])

    def _arr(self, label: str, cell) -> np.ndarray:
        return self.estimates[label][cell]

    def mean_estimate(self, label: str, cell) -> float:
        return float(self._arr(label, cell).mean())

    def empirical_bias(self, label: str, cell) -> float:
        return self.mean_estimate(label, cell) - self.truth[cell]

    def empirical_variance(self, label: str, cell) -> float:
        return float(self._arr(label, cell).var(ddof=1))

    def empirical_mse(self, label: str, cell) -> float:
        err = self._arr(label, cell) - self.truth[cell]
        return float((err**2).mean())

    def mc_se(self, label: str, cell) -> float:
        """Monte Carlo standard error of the mean estimate."""
        arr = self._arr(label, cell)
        return float(arr.std(ddof=1) / np.sqrt(len(arr)))

    def mse_mc_se(self, label: str, cell) -> float:
        err2 = (self._arr(label, cell) - self.truth[cell]) ** 2
        return float(err2.std(ddof=1) / np.sqrt(len(err2)))

    def subgroup_cells(self, label: str) -> list[tuple[str, SubgroupKey]]:
        """Non-overall cells when present, else the overall cells."""
        cells = [c for c in self.estimates[label] if c[1] != OVERALL]
        return cells or list(self.estimates[label])

    def mae_percent(self, label: str, cells=None) -> float:
        """Mean over replicates of the cell-averaged absolute error, in percent."""
        cells = list(cells) if cells is not None else self.subgroup_cells(label)
        errs = np.stack([np.abs(self._arr(label, c) - self.truth[c]) for c in cells])
        return float(100.0 * errs.mean())

    def mean_abs_error(self, label: str, cell) -> float:
        return float(np.abs(self._arr(label, cell) - self.truth[cell]).mean())

    def variance_dict(self, label: str) -> dict[tuple[str, SubgroupKey], float]:
        """Empirical sampling variances, usable as an injected oracle."""
        return {cell: self.empirical_variance(label, cell) for cell in self.estimates[label]}

    def summary_rows(self) -> list[dict]:
        rows = []
        for label in self.estimates:
            for (q, c) in self.estimates[label]:
                rows.append(
                    {
                        "estimator": label,
                        "question_id": q,
                        "factor": c.factor,
                        "level": c.level,
                        "truth": self.truth[(q, c)],
                        "mean_estimate": self.mean_estimate(label, (q, c)),
                        "empirical_bias": self.empirical_bias(label, (q, c)),
                        "empirical_variance": self.empirical_variance(label, (q, c)),
                        "empirical_mse": self.empirical_mse(label, (q, c)),
                        "mc_se": self.mc_se(label, (q, c)),
                    }
                )
        return rows


def monte_carlo(
    population: Population | PopulationSpec,
    pipeline: Pipeline,
    n_replicates: int,
    seed: int,
    *,
    max_failure_rate: float = 0.05,
) -> MonteCarloResult:
    """Run ``pipeline`` over independent replicates and aggregate moments.

    The pipeline maps (population, replicate_seed) to estimate tables keyed
    by estimator label; every replicate must produce the same labels and
    grids. Failures are tolerated up to ``max_failure_rate``, then abort.
    """
    if n_replicates < 2:
        raise ValueError("need at least 2 replicates")
    pop = population
    if isinstance(population, PopulationSpec):
        pop = generate_population(population, seed)
    collected: dict[str, dict[tuple[str, SubgroupKey], list[float]]] = {}
    failures: list[tuple[int, str]] = []
    for r in range(n_replicates):
        try:
            tables = pipeline(pop, _replicate_seed(seed, r))
        except Exception as err:  # noqa: BLE001 - counted and re-surfaced below
            failures.append((r, f"{type(err).__name__}: {err}"))
            continue
        if not collected:
            for label, table in tables.items():
                collected[label] = {key: [] for key in table.entries}
        if set(tables) != set(collected):
            raise MonteCarloError(
                f"replicate {r} produced estimator labels {sorted(tables)} "
                f"!= {sorted(collected)}"
            )
        for label, table in tables.items():
            store = collected[label]
            for key, est in table.entries.items():
                store[key].append(est.value)
    if len(failures) > max_failure_rate * n_replicates:
        preview = "; ".join(msg for _, msg in failures[:3])
        raise MonteCarloError(
            f"{len(failures)}/{n_replicates} replicates failed ({preview})"
        )
    estimates = {
        label: {key: np.asarray(vals) for key, vals in store.items()}
        for label, store in collected.items()
    }
    truth: dict[tuple[str, SubgroupKey], float] = {}
    for label in estimates:
        for (q, c) in estimates[label]:
            if (q, c) not in truth:
                truth[(q, c)] = pop.truth_value(q, c)
    return MonteCarloResult(
        truth=truth,
        estimates=estimates,
        n_replicates=n_replicates,
        n_failures=len(failures),
        seed=seed,
    )


def _replicate_seed(seed: int, r: int) -> int:
    # fold the replicate index into a fresh 63-bit seed; SeedSequence keys
    # on the tuple so streams never collide across replicates
    return int(np.random.SeedSequence((seed, _REP, r)).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# canned pipelines


def draw_survey_pair(
    pop: Population,
    seed: int,
    *,
    pair_tag: int = 0,
    contaminate: bool = True,
    propensities: np.ndarray | None = None,
) -> tuple[ProbabilitySample, NpsDraw]:
    """One (probability, nonprobability) pair from the population's design."""
    spec = pop.spec
    ps = draw_probability_sample(pop, spec.design, seed * 31 + pair_tag)
    draw = draw_nonprobability_sample(
        pop, spec.selection_coefs, spec.target_n_nps, seed * 31 + pair_tag,
        propensities=propensities,
    )
    if contaminate:
        draw = inject_bogus_responses(draw, spec.bogus, seed * 31 + pair_tag)
    return ps, draw


def make_single_pair_pipeline(
    *,
    factors: tuple[str, ...] = (),
    contaminate: bool = False,
    include_true_pi: bool = False,
    clw_variances: dict | None = None,
    propensities: np.ndarray | None = None,
) -> Pipeline:
    """Pipeline drawing one pair and estimating ps and IPW tables."""

    def pipeline(pop: Population, seed: int) -> dict[str, EstimateTable]:
        ps, draw = draw_survey_pair(
            pop, seed, contaminate=contaminate, propensities=propensities
        )
        fit = fit_propensity(draw.sample.X, ps.X, ps.weights)
        out = {
            "ps": ps_estimate_table(ps, factors=factors),
            "clw": ipw_estimate_table(
                draw.sample, fit, factors=factors, variances=clw_variances
            ),
        }
        if include_true_pi:
            oracle = PropensityFit.from_true_propensities(draw.true_pi)
            out["clw_true_pi"] = ipw_estimate_table(draw.sample, oracle, factors=factors)
        return out

    return pipeline


def make_known_bias_pipeline(
    *,
    factors: tuple[str, ...] = ("age",),
    ps_variances: dict | None = None,
    clw_variances: dict | None = None,
    contaminate: bool = True,
    propensities: np.ndarray | None = None,
) -> Pipeline:
    """Full known-bias pathway: two held-out pairs estimate the bias, the
    third pair is corrected and composed.

    Emits labels ps, clw, bc_clw, comb, ev. Probability-sample variances
    default to the per-replicate closed form; both variance dicts can be
    overridden with a calibration oracle, which the composites need whenever
    a rare question can produce an all-constant cell in one draw.
    """

    def pipeline(pop: Population, seed: int) -> dict[str, EstimateTable]:
        pairs = [
            draw_survey_pair(pop, seed, pair_tag=k, contaminate=contaminate,
                             propensities=propensities)
            for k in (1, 2, 3)
        ]
        ps_tables = []
        clw_tables = []
        for ps, draw in pairs:
            fit = fit_propensity(draw.sample.X, ps.X, ps.weights)
            ps_tables.append(
                ps_estimate_table(ps, factors=factors, variances=ps_variances)
            )
            clw_tables.append(
                ipw_estimate_table(draw.sample, fit, factors=factors,
                                   variances=clw_variances)
            )
        bias = estimate_bias(clw_tables[:2], ps_tables[:2])
        ps3, clw3 = ps_tables[2], clw_tables[2]
        return {
            "ps": ps3,
            "clw": clw3,
            "bc_clw": apply_bias_correction(clw3, bias),
            "comb": compose_tables(ps3, clw3, method="comb", bias=bias.entries),
            "ev": compose_tables(ps3, clw3, method="ev", bias=bias.entries),
        }

    return pipeline


def make_model_pipeline(
    *,
    config: GBMConfig = GBMConfig(n_trees=120, max_depth=3, shrinkage=0.1, min_node=10),
    ps_variances: dict | None = None,
    m_clw_variances: dict | None = None,
    contaminate: bool = True,
) -> Pipeline:
    """Unknown-bias pathway: predict responses from the probability sample,
    run model-assisted IPW, and compose (labels ps, m_clw, m_comb, m_ev)."""

    def pipeline(pop: Population, seed: int) -> dict[str, EstimateTable]:
        ps, draw = draw_survey_pair(pop, seed, contaminate=contaminate)
        fit = fit_propensity(draw.sample.X, ps.X, ps.weights)
        model = fit_gbm(build_training_set(ps), config)
        predictions = {
            q: predict_for_sample(model, draw.sample, q) for q in pop.questions
        }
        ps_table = ps_estimate_table(ps, variances=ps_variances)
        m_clw = model_assisted_table(
            predictions, draw.sample, fit, variances=m_clw_variances
        )
        return {
            "ps": ps_table,
            "m_clw": m_clw,
            "m_comb": compose_tables(ps_table, m_clw, method="m_comb"),
            "m_ev": compose_tables(ps_table, m_clw, method="m_ev"),
        }

    return pipeline


def calibrate_variances(
    pop: Population,
    pipeline: Pipeline,
    *,
    n_draws: int = 300,
    seed: int = 7,
) -> dict[str, dict[tuple[str, SubgroupKey], float]]:
    """Oracle sampling variances per estimator label, from repeated draws.

    Runs the pipeline over independent draws and returns the empirical
    variance of every cell, the injectable stand-in for the variance
    expressions the composites expect.
    """
    result = monte_carlo(pop, pipeline, n_draws, seed)
    return {label: result.variance_dict(label) for label in result.labels()}


def calibrate_clw_variances(
    pop: Population,
    *,
    factors: tuple[str, ...] = ("age",),
    contaminate: bool = True,
    n_draws: int = 300,
    seed: int = 7,
) -> dict[tuple[str, SubgroupKey], float]:
    """Oracle sampling variances of the IPW estimator, from repeated draws."""
    oracle = calibrate_variances(
        pop,
        make_single_pair_pipeline(factors=factors, contaminate=contaminate),
        n_draws=n_draws,
        seed=seed,
    )
    return oracle["clw"]


# ---------------------------------------------------------------------------
# sample-size sweep


@dataclass(frozen=True)
class SweepRow:
    size: int
    mae_ps: float
    mae_comb: float
    pct_change: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]

    def pct_changes(self) -> list[float]:
        return [r.pct_change for r in self.rows]


def sample_size_sweep(
    pop: Population,
    sizes: Sequence[int],
    n_replicates: int,
    seed: int,
    *,
    clw_variances: dict | None = None,
) -> SweepResult:
    """MAE of the ps estimator vs the composite as the ps sample shrinks.

    Per replicate the probability sample is cut down to each target size by
    weight-segmentation subsampling while the nonprobability sample and the
    held-out bias sources stay intact; MAE is taken at the overall level
    across questions, averaged over replicates.

    Runs in two passes: the first collects every estimate, then composite
    weights use the across-replicate (oracle) variance of the ps estimator
    at each size, which stays positive even at sizes where a rare question
    can produce an all-zero draw.
    """
    sizes = list(sizes)
    if sorted(sizes, reverse=True) != sizes:
        raise ValueError("sizes must be given in descending order")
    if clw_variances is None:
        clw_variances = calibrate_clw_variances(pop, factors=(), n_draws=200, seed=seed + 1)
    truth = pop.truth_overall()
    questions = pop.questions
    m = len(questions)

    ps_vals = {s: np.empty((n_replicates, m)) for s in sizes}
    clw_vals = np.empty((n_replicates, m))
    eps_vals = np.empty((n_replicates, m))
    for r in range(n_replicates):
        rep_seed = _replicate_seed(seed, r)
        pairs = [
            draw_survey_pair(pop, rep_seed, pair_tag=k, contaminate=True)
            for k in (1, 2, 3)
        ]
        ps_tables = []
        clw_tables = []
        for ps, draw in pairs:
            fit = fit_propensity(draw.sample.X, ps.X, ps.weights)
            ps_tables.append(ps_estimate_table(ps))
            clw_tables.append(ipw_estimate_table(draw.sample, fit))
        bias = estimate_bias(clw_tables[:2], ps_tables[:2])
        ps3_full = pairs[2][0]
        if any(s > ps3_full.n for s in sizes):
            raise ValueError(f"sweep size exceeds the drawn ps size {ps3_full.n}")
        for j, q in enumerate(questions):
            clw_vals[r, j] = clw_tables[2].value(q, OVERALL)
            eps_vals[r, j] = bias.value(q, OVERALL)
        for s in sizes:
            reduced = (
                ps3_full if s == ps3_full.n
                else weight_segment_subsample(ps3_full, s, rep_seed * 131 + s)
            )
            table = ps_estimate_table(reduced)
            for j, q in enumerate(questions):
                ps_vals[s][r, j] = table.value(q, OVERALL)

    rows = []
    for s in sizes:
        v1 = ps_vals[s].var(axis=0, ddof=1)
        err_ps = np.empty((n_replicates, m))
        err_comb = np.empty((n_replicates, m))
        for j, q in enumerate(questions):
            v2 = clw_variances[(q, OVERALL)]
            for r in range(n_replicates):
                comb = comb_composite(CompositeInputs(
                    ps_vals[s][r, j], clw_vals[r, j], v1[j], v2, eps_vals[r, j]))
                err_ps[r, j] = abs(ps_vals[s][r, j] - truth[q])
                err_comb[r, j] = abs(comb.value - truth[q])
        mae_ps = 100.0 * float(err_ps.mean())
        mae_comb = 100.0 * float(err_comb.mean())
        rows.append(SweepRow(s, mae_ps, mae_comb, 100.0 * (1.0 - mae_comb / mae_ps)))
    return SweepResult(tuple(rows))


# ---------------------------------------------------------------------------
# two-source Gaussian model Monte Carlo (verifies the composite closed forms)


@dataclass(frozen=True)
class GaussianCompositeMC:
    """Empirical moments of both composites under the two-source model."""

    mu: float
    eps: float
    v1: float
    v2: float
    comb_values: np.ndarray
    ev_values: np.ndarray

    def _arr(self, tag: str) -> np.ndarray:
        return {"comb": self.comb_values, "ev": self.ev_values}[tag]

    def empirical_bias(self, tag: str) -> float:
        return float(self._arr(tag).mean() - self.mu)

    def bias_mc_se(self, tag: str) -> float:
        arr = self._arr(tag)
        return float(arr.std(ddof=1) / np.sqrt(len(arr)))

    def empirical_mse(self, tag: str) -> float:
        return float(((self._arr(tag) - self.mu) ** 2).mean())

    def mse_mc_se(self, tag: str) -> float:
        err2 = (self._arr(tag) - self.mu) ** 2
        return float(err2.std(ddof=1) / np.sqrt(len(err2)))


def gaussian_composite_mc(
    mu: float, eps: float, v1: float, v2: float, n_replicates: int, seed: int
) -> GaussianCompositeMC:
    """Draw (y1, y2) from the two-source model with known variances and
    apply both composites with the true eps."""
    rng = _rng(seed, 0xC0)
    y1 = rng.normal(mu, np.sqrt(v1), size=n_replicates)
    y2 = rng.normal(mu + eps, np.sqrt(v2), size=n_replicates)
    comb_vals = np.empty(n_replicates)
    ev_vals = np.empty(n_replicates)
    for i in range(n_replicates):
        inputs = CompositeInputs(float(y1[i]), float(y2[i]), v1, v2, eps)
        comb_vals[i] = comb_composite(inputs).value
        ev_vals[i] = ev_composite(inputs).value
    return GaussianCompositeMC(
        mu=mu, eps=eps, v1=v1, v2=v2, comb_values=comb_vals, ev_values=ev_vals
    )
