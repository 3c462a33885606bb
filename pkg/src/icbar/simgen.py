"""Synthetic interval-censored competing-risks data.

Covariates are AR(1)-correlated standard normals. Each subject fails from
risk ``k`` with probability ``p_k = 1 - exp(-G_k(s * exp(beta_k' z)))`` (``s``
is the baseline scale, 0.2 by default) or never with probability
``1 - sum p_k``; given risk ``k`` the failure time is drawn by inverting the
risk-``k`` incidence, whose baseline is ``s * (1 - exp(-t))``. Two
examination times ``U1 ~ U(0.1, 1.5)`` and ``U2 = U1 + U(0.1, 1.6)`` turn the
failure time into an interval.

Every random draw comes from a Philox stream keyed by ``(seed, replicate,
subject, role, attempt)`` so a dataset does not depend on how replications
are scheduled.
"""

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import transform as tf
from .data import SubjectRecord
from .errors import ProbabilityOverflow, ValidationError

ROLE_COVARIATES, ROLE_EVENT, ROLE_EXAMS, ROLE_MASK = range(4)
MAX_REDRAWS = 1000
LOG_ARG_FLOOR = 1e-12


def keyed_rng(seed, *key):
    """Independent generator for the stream named by ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Scenario:
    n: int = 200
    d: int = 14
    K: int = 2
    rho: float = 0.2
    r: tuple = (0.0, 0.0)
    beta_true: np.ndarray | None = None
    baseline_scale: float = 0.2
    exam1_range: tuple = (0.1, 1.5)
    gap_range: tuple = (0.1, 1.6)
    missing_prob: float = 0.0
    seed: int = 0
    covariate_names: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.r = tuple(float(v) for v in np.atleast_1d(self.r))
        if len(self.r) == 1 and self.K > 1:
            self.r = self.r * self.K
        if self.beta_true is None:
            self.beta_true = table1_beta(self.d, self.K)
        self.beta_true = np.array(self.beta_true, dtype=float).reshape(self.K, -1)
        self.exam1_range = tuple(float(v) for v in self.exam1_range)
        self.gap_range = tuple(float(v) for v in self.gap_range)
        if self.n <= 0 or self.d <= 0 or self.K <= 0:
            raise ValidationError("n, d and K must be positive")
        if not -1 < self.rho < 1:
            raise ValidationError("rho must lie in (-1, 1)")
        if len(self.r) != self.K or min(self.r) < 0:
            raise ValidationError("need one nonnegative r per risk")
        if self.beta_true.shape != (self.K, self.d):
            raise ValidationError(f"beta_true must be {self.K} x {self.d}, got {self.beta_true.shape}")
        if not 0 <= self.missing_prob <= 1:
            raise ValidationError("missing_prob must be a probability")
        lo, hi = self.exam1_range
        glo, ghi = self.gap_range
        if not (0 < lo < hi and 0 < glo < ghi):
            raise ValidationError("examination ranges must be positive and increasing")
        if self.baseline_scale <= 0:
            raise ValidationError("baseline_scale must be > 0")

    @property
    def specs(self):
        return tuple(tf.TransformationSpec(v) for v in self.r)

    @property
    def p(self):
        return self.K * self.d

    @property
    def true_support(self):
        return self.beta_true != 0

    @property
    def q(self):
        return int(np.count_nonzero(self.beta_true))

    def population_covariance(self):
        idx = np.arange(self.d)
        return self.rho ** np.abs(idx[:, None] - idx[None, :])

    def to_dict(self):
        out = asdict(self)
        out["beta_true"] = self.beta_true.tolist()
        out["r"] = list(self.r)
        out["exam1_range"] = list(self.exam1_range)
        out["gap_range"] = list(self.gap_range)
        if out["covariate_names"] is None:
            del out["covariate_names"]
        return out

    @classmethod
    def from_dict(cls, mapping):
        names = {f.name for f in fields(cls)}
        unknown = set(mapping) - names
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**mapping)


def table1_beta(d=14, K=2):
    """``(0.8, 0.6, 0.8, 0, ...)`` for the first risk, alternating sign after."""
    b = np.zeros((K, d))
    head = np.array([0.8, 0.6, 0.8])[: d]
    for k in range(K):
        b[k, : head.size] = head if k % 2 == 0 else -head
    return b


def table1_scenario(n=200, d=14, rho=0.2, r=(0.0, 0.0), seed=0, **kw):
    return Scenario(n=n, d=d, K=2, rho=rho, r=r, beta_true=table1_beta(d, 2), seed=seed, **kw)


BMA_COVARIATES = ["age", "first_age", "gender", "needle", "jail", "income", "syringe", "inject_freq"]


def bma_like_scenario(n=400, r=(0.6, 1.8), missing_prob=0.1, seed=0):
    """Stand-in with the layout of the injecting-drug-user cohort: 8
    covariates, 2 risks, about 10% missing causes."""
    beta = np.zeros((2, 8))
    beta[0, [2, 4]] = [1.0, 0.5]
    beta[1, [2, 3, 6]] = [-1.0, 0.4, 0.5]
    return Scenario(n=n, d=8, K=2, rho=0.0, r=r, beta_true=beta, missing_prob=missing_prob,
                    seed=seed, covariate_names=list(BMA_COVARIATES))


def gen_covariates(n, d, rho, rng):
    """``n x d`` standard normals with correlation ``rho**|a-b|`` between
    columns, via ``z_a = rho z_{a-1} + sqrt(1 - rho^2) eps_a``."""
    eps = rng.standard_normal((n, d))
    z = np.empty((n, d))
    z[:, 0] = eps[:, 0]
    scale = math.sqrt(1.0 - rho * rho)
    for a in range(1, d):
        z[:, a] = rho * z[:, a - 1] + scale * eps[:, a]
    return z


def event_probability(spec, beta_k, z, scale=0.2):
    """Probability of ever failing from this risk."""
    spec = tf.as_spec(spec)
    lin = np.asarray(z, dtype=float) @ np.asarray(beta_k, dtype=float)
    return -np.expm1(-tf._g(spec.r, scale * np.exp(lin)))


def event_time(spec, beta_k, z, v, p_k=None, scale=0.2, clamps=None):
    """Inverse of the normalised risk-``k`` incidence at ``v`` in (0, 1)."""
    spec = tf.as_spec(spec)
    x = scale * math.exp(float(np.dot(z, beta_k)))
    if p_k is None:
        p_k = event_probability(spec, beta_k, z, scale)
    load = tf._g_inverse(spec.r, -math.log1p(-p_k * v))
    frac = load / x
    if not 0.0 < 1.0 - frac:
        frac = 1.0 - LOG_ARG_FLOOR
        if clamps is not None:
            clamps.append(1)
    return -math.log1p(-frac)


def gen_event(specs, beta_true, z, rng, scale=0.2, clamps=None):
    """Draw ``(cause, T)``; cause 0 means no failure and ``T`` is None."""
    specs = [tf.as_spec(s) for s in specs]
    beta_true = np.asarray(beta_true, dtype=float)
    p = np.array([float(event_probability(s, b, z, scale)) for s, b in zip(specs, beta_true)])
    total = float(p.sum())
    if total >= 1.0:
        raise ProbabilityOverflow(f"failure probabilities sum to {total:.6f} >= 1")
    u = rng.random()
    cuts = np.cumsum(p)
    k = int(np.searchsorted(cuts, u, side="right"))
    if k >= len(specs):
        return 0, None
    v = rng.random()
    while v == 0.0:
        v = rng.random()
    return k + 1, event_time(specs[k], beta_true[k], z, v, p[k], scale, clamps)


def gen_examinations(rng, exam1_range=(0.1, 1.5), gap_range=(0.1, 1.6)):
    u1 = rng.uniform(*exam1_range)
    return u1, u1 + rng.uniform(*gap_range)


def gen_dataset(scenario, replicate=0, info=None):
    """Simulate ``scenario.n`` subjects. Deterministic in
    ``(scenario.seed, replicate)``.

    A covariate draw whose failure probabilities sum to one or more is
    redrawn; ``info`` (a dict, optional) receives the number of redraws and
    of clamped inversions.
    """
    sc = scenario
    specs = sc.specs
    out = []
    redraws = 0
    clamps = []
    for i in range(sc.n):
        for attempt in range(MAX_REDRAWS):
            z = gen_covariates(1, sc.d, sc.rho, keyed_rng(sc.seed, replicate, i, ROLE_COVARIATES, attempt))[0]
            try:
                cause, t = gen_event(specs, sc.beta_true, z, keyed_rng(sc.seed, replicate, i, ROLE_EVENT, attempt),
                                     sc.baseline_scale, clamps)
                break
            except ProbabilityOverflow:
                redraws += 1
        else:
            raise ProbabilityOverflow(f"subject {i}: no admissible covariate draw in {MAX_REDRAWS} attempts")
        u1, u2 = gen_examinations(keyed_rng(sc.seed, replicate, i, ROLE_EXAMS), sc.exam1_range, sc.gap_range)
        interval = None
        if cause:
            if t <= u1:
                interval = 1
            elif t <= u2:
                interval = 2
        masked = False
        if interval is not None and sc.missing_prob > 0:
            masked = keyed_rng(sc.seed, replicate, i, ROLE_MASK).random() < sc.missing_prob
        out.append(
            SubjectRecord(
                id=str(i + 1),
                exam_times=np.array([u1, u2]),
                covariates=z,
                event_interval=interval,
                cause=None if interval is None or masked else cause,
                cause_missing=masked,
            )
        )
    if info is not None:
        info["redraws"] = redraws
        info["clamps"] = len(clamps)
    return out


def model_cif(specs_k, beta_k, Z, t, scale=0.2):
    """Population incidence of one risk at times ``t``, averaged over the
    covariate rows ``Z``."""
    spec = tf.as_spec(specs_k)
    x = scale * np.exp(np.asarray(Z) @ np.asarray(beta_k))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    load = x[None, :] * -np.expm1(-t)[:, None]
    return np.mean(-np.expm1(-tf._g(spec.r, load)), axis=1)
