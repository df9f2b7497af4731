"""Numerical kernel of the weighted-entropy regimen-finding design.

The trade-off criterion measures the distance between a regimen's outcome
probabilities and the clinician's targets.  Patient outcomes are collapsed
to three events -- `efficacy and no toxicity`, `no efficacy and no
toxicity`, `toxicity` -- because efficacy is only observable in patients
without toxicity.  For outcome probabilities theta = (t1, t2, t3) and
targets gamma = (g1, g2, g3), both on the open 2-simplex, the criterion is

    delta(theta, gamma) = g1^2/t1 + g2^2/t2 + g3^2/t3 - 1

which is nonnegative, zero exactly at theta == gamma, and diverges on the
simplex boundary.  It arises as the large-n limit of the difference
between the weighted and the plain Shannon differential entropy of a
Dirichlet posterior when the weight is itself of Dirichlet form with
exponents gamma_i * sqrt(n); `entropy_difference` evaluates that finite-n
difference in closed form so the limit can be checked directly.

Rate estimates are plugged in via independent Beta posteriors per regimen
and endpoint: `posterior_mode` gives the plug-in point estimate and
`beta_tail` the posterior exceedance probability used by the safety and
futility constraints.

Everything here is a pure function of its arguments; all operations are
safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

__all__ = [
    "OutcomeTriple",
    "TradeoffTargets",
    "BetaPrior",
    "BetaPosterior",
    "DirichletCounts",
    "delta_from_triple",
    "delta_from_rates",
    "posterior_mode",
    "beta_tail",
    "entropy_difference",
    "digamma",
    "regularized_incomplete_beta",
    "normal_quantile",
]


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeTriple:
    """Point on the open 2-simplex: probabilities of `efficacy and no
    toxicity` and `no efficacy and no toxicity`; the toxicity probability
    is the implicit remainder 1 - p_eff_no_tox - p_noeff_no_tox."""

    p_eff_no_tox: float
    p_noeff_no_tox: float

    def __post_init__(self):
        t1, t2 = self.p_eff_no_tox, self.p_noeff_no_tox
        if not (0.0 < t1 < 1.0 and 0.0 < t2 < 1.0 and t1 + t2 < 1.0):
            raise ValueError(
                "outcome triple (%r, %r) must lie on the open simplex" % (t1, t2)
            )

    @property
    def p_tox(self) -> float:
        return 1.0 - self.p_eff_no_tox - self.p_noeff_no_tox

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_eff_no_tox, self.p_noeff_no_tox, self.p_tox)


@dataclass(frozen=True)
class TradeoffTargets:
    """Target toxicity and efficacy rates, with the derived outcome-triple
    reparametrization g1 = (1-gamma_t)*gamma_e, g2 = (1-gamma_t)*(1-gamma_e),
    g3 = gamma_t."""

    gamma_t: float
    gamma_e: float

    def __post_init__(self):
        if not (0.0 < self.gamma_t < 1.0 and 0.0 < self.gamma_e < 1.0):
            raise ValueError(
                "target rates (%r, %r) must be strictly inside (0, 1)"
                % (self.gamma_t, self.gamma_e)
            )

    def triple(self) -> OutcomeTriple:
        return OutcomeTriple(
            (1.0 - self.gamma_t) * self.gamma_e,
            (1.0 - self.gamma_t) * (1.0 - self.gamma_e),
        )


@dataclass(frozen=True)
class BetaPrior:
    """Beta prior B(nu+1, beta-nu+1): nu pseudo-events out of beta pseudo
    observations.  Requiring 0 < nu < beta keeps every posterior mode
    strictly inside (0, 1)."""

    nu: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.nu < self.beta):
            raise ValueError(
                "prior requires 0 < nu < beta, got nu=%r beta=%r" % (self.nu, self.beta)
            )

    @property
    def mean(self) -> float:
        """Prior point estimate nu/beta (the mode of the posterior at n=0)."""
        return self.nu / self.beta


@dataclass(frozen=True)
class BetaPosterior:
    """Beta posterior B(x+nu+1, n-x+beta-nu+1) after x events in n trials."""

    prior: BetaPrior
    events: int
    trials: int

    def __post_init__(self):
        if self.events < 0 or self.trials < 0 or self.events > self.trials:
            raise ValueError(
                "need 0 <= events <= trials, got x=%r n=%r" % (self.events, self.trials)
            )

    @property
    def a(self) -> float:
        return self.events + self.prior.nu + 1.0

    @property
    def b(self) -> float:
        return self.trials - self.events + self.prior.beta - self.prior.nu + 1.0


@dataclass(frozen=True)
class DirichletCounts:
    """Observed counts of the three outcomes plus a positive Dirichlet
    prior; posterior shape is a_i = counts_i + prior_i + 1."""

    counts: tuple[int, int, int]
    prior: tuple[float, float, float]

    def __post_init__(self):
        if len(self.counts) != 3 or len(self.prior) != 3:
            raise ValueError("counts and prior must have three components")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be nonnegative, got %r" % (self.counts,))
        if any(v <= 0.0 for v in self.prior):
            raise ValueError("prior components must be positive, got %r" % (self.prior,))

    def shapes(self) -> tuple[float, float, float]:
        return tuple(c + v + 1.0 for c, v in zip(self.counts, self.prior))


# ---------------------------------------------------------------------------
# trade-off function
# ---------------------------------------------------------------------------

def _delta3(t1: float, t2: float, t3: float, g1: float, g2: float, g3: float) -> float:
    """Bare trade-off evaluation; callers guarantee an interior triple."""
    return g1 * g1 / t1 + g2 * g2 / t2 + g3 * g3 / t3 - 1.0


def delta_from_triple(theta: OutcomeTriple, gamma: OutcomeTriple) -> float:
    """Trade-off distance between an outcome triple and the target triple.

    Nonnegative, zero iff theta == gamma componentwise, and divergent as
    any component of theta approaches the simplex boundary.
    """
    t1, t2, t3 = theta.as_tuple()
    g1, g2, g3 = gamma.as_tuple()
    if t1 <= 0.0 or t2 <= 0.0 or t3 <= 0.0:
        raise ValueError("theta lies outside the open simplex")
    return _delta3(t1, t2, t3, g1, g2, g3)


def delta_from_rates(alpha_t: float, alpha_e: float, targets: TradeoffTargets) -> float:
    """Trade-off evaluated at toxicity rate alpha_t and efficacy rate
    alpha_e, mapped to the outcome triple via t1 = (1-alpha_t)*alpha_e,
    t2 = (1-alpha_t)*(1-alpha_e), t3 = alpha_t."""
    if not (0.0 < alpha_t < 1.0 and 0.0 < alpha_e < 1.0):
        raise ValueError(
            "rates (%r, %r) must be strictly inside (0, 1)" % (alpha_t, alpha_e)
        )
    g = targets.triple()
    no_tox = 1.0 - alpha_t
    return _delta3(
        no_tox * alpha_e,
        no_tox * (1.0 - alpha_e),
        alpha_t,
        g.p_eff_no_tox,
        g.p_noeff_no_tox,
        g.p_tox,
    )


# ---------------------------------------------------------------------------
# Beta posterior estimation
# ---------------------------------------------------------------------------

def posterior_mode(post: BetaPosterior) -> float:
    """Mode (x + nu) / (n + beta) of the Beta posterior; strictly inside
    (0, 1) whenever 0 < nu < beta."""
    return (post.events + post.prior.nu) / (post.trials + post.prior.beta)


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b).

    Continued-fraction expansion (modified Lentz evaluation) with the
    symmetry switch I_x(a,b) = 1 - I_{1-x}(b,a) applied for
    x > (a+1)/(a+b+2) so the fraction always converges quickly.  Absolute
    accuracy is well below 1e-10 for the shape range used here.
    """
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive, got a=%r b=%r" % (a, b))
    if x <= 0.0:
        return 0.0 if x == 0.0 else _raise_unit_interval(x)
    if x >= 1.0:
        return 1.0 if x == 1.0 else _raise_unit_interval(x)
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _raise_unit_interval(x):
    raise ValueError("x=%r outside [0, 1]" % (x,))


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, by modified Lentz."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        # even step
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        # odd step
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError(
        "incomplete beta continued fraction failed to converge (a=%r b=%r x=%r)"
        % (a, b, x)
    )


@lru_cache(maxsize=1 << 20)
def _beta_tail_shapes(a: float, b: float, threshold: float) -> float:
    """Cached P(p > threshold) for a Beta(a, b) variable.

    Posterior shapes recur constantly across replicated trials (counts are
    small integers), so memoizing on the shape pair makes the constraint
    checks essentially free.
    """
    return 1.0 - regularized_incomplete_beta(a, b, threshold)


def beta_tail(post: BetaPosterior, threshold: float) -> float:
    """Posterior probability that the rate exceeds `threshold`.

    Monotone nondecreasing in the event count for fixed trials; returns 1
    at threshold 0 and 0 at threshold 1.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold %r outside [0, 1]" % (threshold,))
    return _beta_tail_shapes(post.a, post.b, threshold)


# ---------------------------------------------------------------------------
# digamma and the closed-form entropy difference
# ---------------------------------------------------------------------------

# asymptotic tail of psi(x): ln x - 1/(2x) - sum_k B_{2k}/(2k x^{2k})
_PSI_TAIL = (
    -1.0 / 12.0,       # B2/2
    1.0 / 120.0,       # B4/4
    -1.0 / 252.0,      # B6/6
    1.0 / 240.0,       # B8/8
    -1.0 / 132.0,      # B10/10
)


def digamma(x: float) -> float:
    """Digamma function for positive arguments.

    Upward recurrence psi(x) = psi(x+1) - 1/x below 10, then the
    asymptotic series; absolute error below 1e-12 on the shifted range.
    """
    if x <= 0.0:
        raise ValueError("digamma defined here for x > 0 only, got %r" % (x,))
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    power = inv2
    for coef in _PSI_TAIL:
        tail += coef * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x + tail


def entropy_difference(counts: DirichletCounts, targets: OutcomeTriple, n: int) -> float:
    """Weighted-minus-plain entropy of the Dirichlet posterior, in closed form.

    With posterior shapes a_i = x_i + v_i + 1 and the normalized Dirichlet
    weight with emphasis exponents g_i * sqrt(2n), the weighted density is
    itself a Dirichlet with shapes b_i = a_i + g_i*sqrt(2n), so the
    weighted entropy is the cross-entropy of the two and the difference
    reduces to

        sum_i (a_i - 1) * [psi(a_i) - psi(a0) - psi(b_i) + psi(b0)].

    With counts x_i ~ t_i*n this difference converges, as n grows, to the
    trade-off limit `delta_from_triple(t, g)`; exponents scaling as
    kappa*g_i*sqrt(n) would converge to kappa^2/2 times that limit, which
    is why the emphasis rate is sqrt(2n) (exact real square root, never
    rounded).
    """
    if n < 0:
        raise ValueError("n must be a nonnegative integer, got %r" % (n,))
    if sum(counts.counts) != n:
        raise ValueError(
            "counts %r do not sum to n=%r" % (counts.counts, n)
        )
    a = counts.shapes()
    if any(s <= 0.0 for s in a):
        raise ValueError("Dirichlet shapes must be positive, got %r" % (a,))
    root = math.sqrt(2.0 * n)
    g = targets.as_tuple()
    b = tuple(ai + gi * root for ai, gi in zip(a, g))
    psi_a0 = digamma(sum(a))
    psi_b0 = digamma(sum(b))
    return sum(
        (ai - 1.0) * (digamma(ai) - psi_a0 - digamma(bi) + psi_b0)
        for ai, bi in zip(a, b)
    )


# ---------------------------------------------------------------------------
# normal quantile (outcome generation support)
# ---------------------------------------------------------------------------

# Acklam's rational approximation coefficients
_NQ_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_NQ_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
_NQ_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_NQ_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Standard-normal quantile via Acklam's rational approximation with
    one Halley refinement, giving errors far below 1e-9."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile defined for p in (0, 1), got %r" % (p,))
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_NQ_C[0] * q + _NQ_C[1]) * q + _NQ_C[2]) * q + _NQ_C[3]) * q
              + _NQ_C[4]) * q + _NQ_C[5])
             / ((((_NQ_D[0] * q + _NQ_D[1]) * q + _NQ_D[2]) * q + _NQ_D[3]) * q + 1.0))
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = ((((((_NQ_A[0] * r + _NQ_A[1]) * r + _NQ_A[2]) * r + _NQ_A[3]) * r
              + _NQ_A[4]) * r + _NQ_A[5]) * q
             / (((((_NQ_B[0] * r + _NQ_B[1]) * r + _NQ_B[2]) * r + _NQ_B[3]) * r
                + _NQ_B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_NQ_C[0] * q + _NQ_C[1]) * q + _NQ_C[2]) * q + _NQ_C[3]) * q
               + _NQ_C[4]) * q + _NQ_C[5])
              / ((((_NQ_D[0] * q + _NQ_D[1]) * q + _NQ_D[2]) * q + _NQ_D[3]) * q + 1.0))
    # Halley refinement against the exact CDF
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)
