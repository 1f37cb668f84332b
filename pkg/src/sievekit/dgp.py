"""Simulation scenarios with closed-form ground truth.

Time-fixed model: A ~ Bernoulli(treatment_prob), E | A from ``exposure_law``
and, for an exposure to variant j,

    P(Y = j | E = j, A = a) = expit(beta0 + beta_e[j]) * expit(beta_ea[j] * a),

with Y = 0 otherwise.  ``beta_e[0]`` is carried for completeness but has no
effect: an unexposed subject is never infected.

The time-to-event extension (:class:`TteSpec`) runs the same outcome model
interval by interval.  In interval k a subject with activity level U = u is
exposed to variant 1 with probability u*eps_k*s_k and to variant 2 with
probability u*eps_k*(1 - s_k); a latent susceptibility Z = z multiplies the
infection probability (per cause, if ``z_scale2`` is given).  Subjects may
drop out at the end of each interval and are administratively censored at K.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .data import EventData, TrialData, tabulate
from .errors import ConfigurationError, Degeneracy, DomainError
from .uncertainty import worker_count

BLOCK = 1 << 16


@dataclass(frozen=True)
class CovariateLevel:
    """One level of a categorical baseline covariate; ``overrides`` replace DgpSpec fields."""

    name: str
    weight: float
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TteSpec:
    K: int
    exposure_prob: tuple
    variant1_share: tuple
    u_levels: tuple = (1.0,)
    u_weights: tuple = (1.0,)
    z_levels: tuple = (1.0,)
    z_weights: tuple = (1.0,)
    z_scale2: tuple | None = None
    dropout: float = 0.0
    z_column: str = "z"

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        for name in ("exposure_prob", "variant1_share"):
            v = getattr(self, name)
            if len(v) != self.K or any(not 0.0 <= x <= 1.0 for x in v):
                raise ConfigurationError(f"{name} needs {self.K} probabilities")
        for lv, wt in (("u_levels", "u_weights"), ("z_levels", "z_weights")):
            if len(getattr(self, lv)) != len(getattr(self, wt)):
                raise ConfigurationError(f"{lv} and {wt} differ in length")
            if abs(sum(getattr(self, wt)) - 1.0) > 1e-9:
                raise ConfigurationError(f"{wt} must sum to 1")
        if self.z_scale2 is not None and len(self.z_scale2) != len(self.z_levels):
            raise ConfigurationError("z_scale2 must match z_levels")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")

    @property
    def z2(self) -> tuple:
        return self.z_levels if self.z_scale2 is None else self.z_scale2


@dataclass(frozen=True)
class DgpSpec:
    name: str
    beta0: float
    beta_e: tuple  # (e=0, e=1, e=2); e=0 is inert
    beta_ea: tuple  # treatment coefficients for variants 1 and 2
    exposure_law: tuple  # rows a=0, a=1 of P(E=e|A=a), e = 0, 1, 2
    treatment_prob: float = 0.5
    covariate: str | None = None
    levels: tuple = ()
    tte: TteSpec | None = None

    def __post_init__(self):
        if len(self.beta_e) != 3 or len(self.beta_ea) != 2:
            raise ConfigurationError("beta_e needs 3 entries and beta_ea 2")
        law = np.asarray(self.exposure_law, float)
        if law.shape != (2, 3) or (law < 0).any() or np.abs(law.sum(axis=1) - 1).max() > 1e-9:
            raise ConfigurationError(f"{self.name}: each exposure-law row must be a distribution over e=0,1,2")
        if not 0.0 < self.treatment_prob < 1.0:
            raise ConfigurationError("treatment_prob must be in (0, 1)")
        if self.levels:
            if self.covariate is None:
                raise ConfigurationError("covariate levels need a covariate name")
            if abs(sum(lv.weight for lv in self.levels) - 1.0) > 1e-9:
                raise ConfigurationError("covariate level weights must sum to 1")
            if self.tte is not None:
                raise ConfigurationError("covariate mixtures are not supported with the tte extension")

    def with_multipliers(self, m1: float, m2: float) -> "DgpSpec":
        """Set treatment coefficients so arm 1 multiplies each variant's infection risk by m_j."""
        if not (0 < m1 < 2 and 0 < m2 < 2):
            raise DomainError("multipliers must lie in (0, 2)")
        return replace(self, beta_ea=(float(logit(m1 / 2)), float(logit(m2 / 2))))

    def outcome_prob(self, j: int, a: int, beta0=None, beta_e=None, beta_ea=None) -> float:
        """P(Y=j | E=j, A=a)."""
        b0 = self.beta0 if beta0 is None else beta0
        be = self.beta_e if beta_e is None else beta_e
        ba = self.beta_ea if beta_ea is None else beta_ea
        return float(expit(b0 + be[j]) * expit(ba[j - 1] * a))

    def components(self):
        """(weight, level name, spec without covariate) for each mixture component."""
        if not self.levels:
            return [(1.0, None, self)]
        base = replace(self, covariate=None, levels=())
        out = []
        for lv in self.levels:
            over = {k: (tuple(map(tuple, v)) if k == "exposure_law" else tuple(v) if isinstance(v, list) else v)
                    for k, v in lv.overrides.items()}
            out.append((lv.weight, lv.name, replace(base, **over)))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exposure_law"] = [list(r) for r in self.exposure_law]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        d = dict(d)
        d["beta_e"] = tuple(d["beta_e"])
        d["beta_ea"] = tuple(d["beta_ea"])
        d["exposure_law"] = tuple(tuple(r) for r in d["exposure_law"])
        d["levels"] = tuple(CovariateLevel(**lv) for lv in d.get("levels", ()))
        if d.get("tte"):
            t = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d["tte"].items()}
            d["tte"] = TteSpec(**t)
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_spec(path) -> DgpSpec:
    return DgpSpec.from_dict(json.loads(Path(path).read_text()))


# --- built-in scenarios ---------------------------------------------------------

_BASE = dict(beta0=-2.0, beta_e=(-1.0, 2.0, 1.0), beta_ea=(-3.0, -3.0))


def _law(arm0, arm1):
    return (tuple(arm0), tuple(arm1))


def _tte_rare() -> DgpSpec:
    K = 30
    tte = TteSpec(
        K=K,
        exposure_prob=tuple(0.045 for _ in range(K)),
        variant1_share=tuple(0.5 for _ in range(K)),
        u_levels=(0.6, 1.4), u_weights=(0.5, 0.5),
        z_levels=(0.8, 1.2), z_weights=(0.5, 0.5),
        dropout=0.005,
    )
    spec = DgpSpec("tte_rare", beta0=-2.0, beta_e=(-1.0, 2.0, 1.0), beta_ea=(0.0, 0.0),
                   exposure_law=_law((1.0, 0.0, 0.0), (1.0, 0.0, 0.0)), tte=tte)
    return spec.with_multipliers(0.3, 0.7)


def builtin_scenario(name: str) -> DgpSpec:
    third = (1 / 3, 1 / 3, 1 / 3)
    table = {
        "d1": lambda: DgpSpec("d1", exposure_law=_law(third, third), **_BASE),
        "d2_ratio": lambda: DgpSpec("d2_ratio", exposure_law=_law((4 / 20, 8 / 20, 8 / 20), (10 / 20, 5 / 20, 5 / 20)),
                                    **_BASE),
        "d3_noratio": lambda: DgpSpec("d3_noratio", exposure_law=_law((3 / 6, 2 / 6, 1 / 6), (3 / 6, 1 / 6, 2 / 6)),
                                      **_BASE),
        "d4_eet_equal": lambda: DgpSpec("d4_eet_equal", exposure_law=_law((1 / 7, 4 / 7, 2 / 7), (1 / 5, 2 / 5, 2 / 5)),
                                        **_BASE),
        "d5_eet_unequal": lambda: DgpSpec("d5_eet_unequal",
                                          exposure_law=_law((1 / 7, 4 / 7, 2 / 7), (1 / 7, 4 / 7, 2 / 7)), **_BASE),
        "tte_rare": _tte_rare,
    }
    aliases = {"d2": "d2_ratio", "d3": "d3_noratio", "d4": "d4_eet_equal", "d5": "d5_eet_unequal"}
    key = aliases.get(name, name)
    if key not in table:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(table)}")
    return table[key]()


SCENARIOS = ("d1", "d2_ratio", "d3_noratio", "d4_eet_equal", "d5_eet_unequal", "tte_rare")


# --- sampling -----------------------------------------------------------------------


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(block)]))


def _categorical(rng, probs, size):
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right")


def _time_fixed_block(spec: DgpSpec, rng, m):
    a = (rng.random(m) < spec.treatment_prob).astype(np.int8)
    comps = spec.components()
    level = _categorical(rng, [c[0] for c in comps], m) if spec.levels else np.zeros(m, np.int64)
    e = np.zeros(m, np.int8)
    y = np.zeros(m, np.int8)
    u_e, u_y = rng.random(m), rng.random(m)
    for li, (_, _, sub) in enumerate(comps):
        for arm in (0, 1):
            mask = (level == li) & (a == arm)
            cdf = np.cumsum(sub.exposure_law[arm])
            cdf[-1] = 1.0
            e[mask] = np.searchsorted(cdf, u_e[mask], side="right")
            for j in (1, 2):
                hit = mask & (e == j)
                y[hit & (u_y < sub.outcome_prob(j, arm))] = j
    cov = {spec.covariate: np.array([c[1] for c in comps])[level]} if spec.levels else {}
    return a, y, e, cov


def _tte_block(spec: DgpSpec, rng, m):
    t = spec.tte
    a = (rng.random(m) < spec.treatment_prob).astype(np.int8)
    u = np.asarray(t.u_levels)[_categorical(rng, t.u_weights, m)]
    zi = _categorical(rng, t.z_weights, m)
    z1, z2 = np.asarray(t.z_levels)[zi], np.asarray(t.z2)[zi]
    q1 = np.where(a == 1, spec.outcome_prob(1, 1), spec.outcome_prob(1, 0))
    q2 = np.where(a == 1, spec.outcome_prob(2, 1), spec.outcome_prob(2, 0))
    eps = np.asarray(t.exposure_prob)
    share = np.asarray(t.variant1_share)
    h1 = (u * z1 * q1)[:, None] * (eps * share)[None, :]
    h2 = (u * z2 * q2)[:, None] * (eps * (1 - share))[None, :]
    if (h1 + h2 > 1).any():
        raise DomainError("interval hazards exceed 1; lower exposure_prob or latent scales")
    draw = rng.random((m, t.K))
    drop = rng.random((m, t.K)) < t.dropout
    code = np.where(draw < h1, 1, np.where(draw < h1 + h2, 2, np.where(drop, 3, 0)))
    stopped = code > 0
    any_stop = stopped.any(axis=1)
    first = np.where(any_stop, stopped.argmax(axis=1), t.K - 1)
    kind = code[np.arange(m), first]
    event = np.where(kind == 3, 0, kind).astype(np.int8)
    time = (first + 1).astype(np.int32)
    labels = np.array([f"z{i}" for i in range(len(t.z_levels))])
    return a, time, event, {t.z_column: labels[zi]}


def sample(spec: DgpSpec, n: int, seed: int, workers=None):
    """Draw ``n`` iid subjects; ``TrialData`` for time-fixed specs, ``EventData`` for tte specs.

    Subjects are generated in blocks of 65536, each from its own stream
    keyed by (seed, block), so the output does not depend on ``workers``.
    """
    n = int(n)
    if n < 1:
        raise DomainError("n must be at least 1")
    blocks = [(b, min(BLOCK, n - b * BLOCK)) for b in range((n + BLOCK - 1) // BLOCK)]
    make = _tte_block if spec.tte is not None else _time_fixed_block

    def run(item):
        b, m = item
        return make(spec, _block_rng(seed, b), m)

    lanes = min(worker_count(workers), len(blocks))
    if lanes == 1:
        parts = [run(x) for x in blocks]
    else:
        with ThreadPoolExecutor(max_workers=lanes) as pool:
            parts = list(pool.map(run, blocks))
    cat = lambda i: np.concatenate([p[i] for p in parts])
    covs = {k: np.concatenate([p[3][k] for p in parts]) for k in parts[0][3]}
    if spec.tte is not None:
        return EventData(a=cat(0), time=cat(1), event=cat(2), covariates=covs, horizon=spec.tte.K)
    return TrialData(a=cat(0), y=cat(1), e=cat(2), covariates=covs)


# --- oracle -----------------------------------------------------------------------


@dataclass
class OracleValues:
    true_ccs: float
    true_cce: float
    true_eie: dict
    true_eet: dict
    observed_limit_ccs: float
    exposure_conditional_ccs: float
    observed_limit_eet: float
    acece_ratio: float | None
    ir0: float
    probabilities: dict
    gamma: tuple | None = None
    alpha_k: tuple | None = None
    cse: float | None = None
    marginal_hazards: np.ndarray | None = field(default=None, repr=False)
    max_hazard: float | None = None  # largest cause-specific interval hazard over latent classes

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "marginal_hazards"}
        if self.marginal_hazards is not None:
            out["marginal_hazards"] = self.marginal_hazards.tolist()
        return out


def _ratio_of_ratios(p1_1, p1_0, p2_1, p2_0):
    return (p1_1 / p1_0) / (p2_1 / p2_0)


def oracle(spec: DgpSpec) -> OracleValues:
    with np.errstate(invalid="ignore", divide="ignore"):
        return _oracle(spec)


def _oracle(spec: DgpSpec) -> OracleValues:
    """Exact estimands and observed-data limits for ``spec``.

    Mixture quantities weight each covariate level by its share; the CECE
    for variant j averages over subjects exposed to j, using the control-arm
    exposure law as the weighting.
    """
    comps = spec.components()
    py = np.zeros((2, 3))  # P(Y=j | A=a)
    pe = np.zeros((2, 3))  # P(E=j | A=a)
    pye = np.zeros((2, 3))  # P(Y=j, E=j | A=a)
    cece_num = np.zeros(3)
    cece_den = np.zeros(3)
    q_mix = np.zeros((3, 2))
    eie, eet = {}, {}
    for w, name, sub in comps:
        law = np.asarray(sub.exposure_law)
        q = np.array([[0.0, 0.0]] + [[sub.outcome_prob(j, a) for a in (0, 1)] for j in (1, 2)])
        for a in (0, 1):
            for j in (1, 2):
                py[a, j] += w * law[a, j] * q[j, a]
                pye[a, j] += w * law[a, j] * q[j, a]
                pe[a, j] += w * law[a, j]
        for j in (1, 2):
            cece_num[j] += w * law[0, j] * q[j, 1]
            cece_den[j] += w * law[0, j] * q[j, 0]
        q_mix += w * q
        if name is not None:
            eie[name] = _ratio_of_ratios(q[1, 1], q[1, 0], q[2, 1], q[2, 0])
            eet[name] = q[1, 1] / q[2, 1]
    eie["marginal"] = _ratio_of_ratios(q_mix[1, 1], q_mix[1, 0], q_mix[2, 1], q_mix[2, 0])
    eet["marginal"] = q_mix[1, 1] / q_mix[2, 1]
    true_ccs = (cece_num[1] / cece_den[1]) / (cece_num[2] / cece_den[2])
    pc = pye / np.where(pe > 0, pe, np.nan)
    equal_law = all(np.allclose(s.exposure_law[0], s.exposure_law[1]) for _, _, s in comps)
    acece = None
    if equal_law and (cece_den[1:] > 0).all():
        d1 = (cece_den[1] - cece_num[1]) / pe[0, 1]
        d2 = (cece_den[2] - cece_num[2]) / pe[0, 2]
        acece = d1 / d2 if d2 != 0 else None
    out = OracleValues(
        true_ccs=float(true_ccs),
        true_cce=float(true_ccs),
        true_eie={k: float(v) for k, v in eie.items()},
        true_eet={k: float(v) for k, v in eet.items()},
        observed_limit_ccs=float(_ratio_of_ratios(py[1, 1], py[0, 1], py[1, 2], py[0, 2])) if spec.tte is None else math.nan,
        exposure_conditional_ccs=float(_ratio_of_ratios(pc[1, 1], pc[0, 1], pc[1, 2], pc[0, 2])) if spec.tte is None else math.nan,
        observed_limit_eet=float(py[1, 1] / py[1, 2]) if spec.tte is None else math.nan,
        acece_ratio=None if acece is None else float(acece),
        ir0=float(q_mix[1, 0] / q_mix[2, 0]),
        probabilities={"p_y_given_a": py.tolist(), "p_e_given_a": pe.tolist()},
    )
    if spec.tte is not None:
        _tte_oracle(spec, out)
    return out


def _tte_oracle(spec: DgpSpec, out: OracleValues) -> None:
    """Marginal cause-specific hazards by exact recursion over the latent classes."""
    t = spec.tte
    eps, share = np.asarray(t.exposure_prob), np.asarray(t.variant1_share)
    haz = np.zeros((2, t.K, 2))
    top = 0.0
    for a in (0, 1):
        q1, q2 = spec.outcome_prob(1, a), spec.outcome_prob(2, a)
        classes = [(wu * wz, u * z1 * q1, u * z2 * q2)
                   for u, wu in zip(t.u_levels, t.u_weights)
                   for z1, z2, wz in zip(t.z_levels, t.z2, t.z_weights)]
        w = np.array([c[0] for c in classes])
        c1 = np.array([c[1] for c in classes])
        c2 = np.array([c[2] for c in classes])
        surv = np.ones(len(classes))
        for k in range(t.K):
            h1, h2 = c1 * eps[k] * share[k], c2 * eps[k] * (1 - share[k])
            top = max(top, float(h1.max()), float(h2.max()))
            mass = w * surv
            haz[0, k, a] = (mass * h1).sum() / mass.sum()
            haz[1, k, a] = (mass * h2).sum() / mass.sum()
            surv = surv * (1 - h1 - h2)
    gamma = tuple(float(expit(spec.beta_ea[0] * a) / expit(spec.beta_ea[1] * a)) for a in (0, 1))
    out.gamma = gamma
    out.cse = gamma[1] / gamma[0]
    out.alpha_k = tuple(float(s / (1 - s)) if s < 1 else math.inf for s in share)
    out.marginal_hazards = haz
    out.max_hazard = top


def multi_exposure_probability(r: float, m: int) -> float:
    """P(at least two infectious contacts among ``m``), each infectious with probability ``r``."""
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"prevalence {r} outside [0, 1]")
    if int(m) != m or m < 1:
        raise DomainError(f"contact count must be a positive integer, got {m}")
    m = int(m)
    if m == 1:
        return 0.0
    return float(max(0.0, 1.0 - (1.0 - r) ** m - m * r * (1.0 - r) ** (m - 1)))


# --- convergence study ---------------------------------------------------------


def _estimators():
    from . import estimands, survival

    def counts(d):
        return tabulate(d)

    def cse_np(ev):
        return survival.cse_window(survival.discrete_hazards(ev), (1, ev.horizon)).point

    return {
        "ccs_observed": lambda d: estimands.ccs(counts(d)).point,
        "ccs_exposure_conditional": lambda d: estimands.ccs(counts(d), mode="exposure_conditional").point,
        "eie": lambda d: estimands.eie(counts(d)).point,
        "eet_naive": lambda d: estimands.eet(counts(d), route="equal").point,
        "eet_corrected": lambda d: estimands.eet(counts(d), route="measured").point,
        "cse_nonparam": cse_np,
        "cse_cox": survival.cse_cox_point,
    }


def oracle_for(estimator: str, values: OracleValues) -> float:
    return {
        "ccs_observed": values.observed_limit_ccs,
        "ccs_exposure_conditional": values.exposure_conditional_ccs,
        "eie": values.true_eie["marginal"],
        "eet_naive": values.observed_limit_eet,
        "eet_corrected": values.true_eet["marginal"],
        "cse_nonparam": values.cse,
        "cse_cox": values.cse,
    }[estimator]


@dataclass
class ScenarioResult:
    scenario: str
    rows: list
    summary: list

    def rows_csv(self) -> str:
        lines = ["scenario,n,replication,estimator,estimate,status"]
        for r in self.rows:
            est = "" if r["estimate"] is None else repr(r["estimate"])
            lines.append(f"{self.scenario},{r['n']},{r['replication']},{r['estimator']},{est},{r['status']}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        lines = ["scenario,n,estimator,mean,mc_se,used,degenerate,oracle"]
        for s in self.summary:
            lines.append(",".join(str(x) for x in (self.scenario, s["n"], s["estimator"], repr(s["mean"]),
                                                  repr(s["mc_se"]), s["used"], s["degenerate"], repr(s["oracle"]))))
        return "\n".join(lines) + "\n"


def replication_seed(seed: int, n_index: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), n_index, rep]).generate_state(1, np.uint64)[0])


def run_convergence_study(spec: DgpSpec, n_grid, replications: int, estimators=None, seed: int = 0,
                          workers=None) -> ScenarioResult:
    """Point estimates for every (n, replication, estimator) plus mean and Monte Carlo SE per (n, estimator).

    Each replication has its own seed derived from (seed, n index,
    replication), so results do not depend on execution order.
    """
    n_grid = [int(float(n)) for n in n_grid]
    if not n_grid:
        raise ConfigurationError("empty n grid")
    if replications < 1:
        raise ConfigurationError("need at least one replication")
    table = _estimators()
    if estimators is None:
        estimators = (["cse_nonparam", "cse_cox"] if spec.tte is not None
                      else ["ccs_observed", "ccs_exposure_conditional", "eet_naive", "eet_corrected"])
    for e in estimators:
        if e not in table:
            raise ConfigurationError(f"unknown estimator {e!r}; choose from {sorted(table)}")
    truth = oracle(spec)
    jobs = [(i, n, r) for i, n in enumerate(n_grid) for r in range(replications)]
    results = [None] * len(jobs)

    def run(idx):
        for t in idx:
            i, n, r = jobs[t]
            data = sample(spec, n, replication_seed(seed, i, r), workers=1)
            out = []
            for name in estimators:
                try:
                    v = float(table[name](data))
                    status = "ok" if math.isfinite(v) else "degenerate"
                except Degeneracy as exc:
                    v, status = None, f"degenerate: {type(exc).__name__}"
                out.append((name, v if status == "ok" else None, status))
            results[t] = out

    lanes = worker_count(workers)
    chunks = [range(k, len(jobs), lanes) for k in range(lanes)]
    if lanes == 1:
        run(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=lanes) as pool:
            list(pool.map(run, chunks))

    rows = []
    for (i, n, r), out in zip(jobs, results):
        for name, v, status in out:
            rows.append({"n": n, "replication": r, "estimator": name, "estimate": v, "status": status})
    summary = []
    for n in n_grid:
        for name in estimators:
            vals = np.array([x["estimate"] for x in rows
                             if x["n"] == n and x["estimator"] == name and x["estimate"] is not None])
            used = int(vals.size)
            mean = float(vals.mean()) if used else math.nan
            se = float(vals.std(ddof=1) / math.sqrt(used)) if used > 1 else math.nan
            summary.append({"n": n, "estimator": name, "mean": mean, "mc_se": se, "used": used,
                            "degenerate": replications - used, "oracle": float(oracle_for(name, truth))})
    return ScenarioResult(scenario=spec.name, rows=rows, summary=summary)
