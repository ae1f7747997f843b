"""Lognormal proximity distributions and extreme-value conflict assessment.

In a fixed interaction context the proximity s between two road users is
modelled as lognormal with parameters (mu, sigma) on ln(s). The cumulative
probability F(s) that an observed proximity falls below s acts as the
conflict function; the probability that s is the minimum of n interactions
in the same context is (1 - F(s))^n, which decreases in both s and n. A
moment is summarised either by that probability at a requested intensity n
or by the maximum intensity for which the probability still exceeds 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LognormalParams:
    """Parameters of the conditional proximity distribution: mu = E[ln s]."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError("sigma must be strictly positive")

    @property
    def median(self) -> float:
        return math.exp(self.mu)

    @property
    def mode(self) -> float:
        return math.exp(self.mu - self.sigma**2)


@dataclass(frozen=True)
class ConflictAssessment:
    """Per-moment conflict summary at proximity s.

    ``exceedance`` is 1 - F(s); ``p_hat`` maps each requested intensity n to
    exceedance**n; ``n_max`` is the largest intensity whose conflict
    probability still exceeds 0.5 (may be 0.0 or +inf at the distribution
    extremes). ``n_max_below_one`` flags raw maxima below the unit-intensity
    floor.
    """

    s: float
    phi: LognormalParams
    exceedance: float
    p_hat: dict[float, float] = field(default_factory=dict)
    n_max: float = math.inf

    @property
    def n_max_below_one(self) -> bool:
        return self.n_max < 1.0


def lognormal_pdf(s: float, phi: LognormalParams) -> float:
    """Density of the proximity distribution at s > 0, in 1/m."""
    if not s > 0.0:
        raise ValueError("proximity s must be strictly positive")
    z = (math.log(s) - phi.mu) / phi.sigma
    return math.exp(-0.5 * z * z) / (s * phi.sigma * _SQRT2PI)


def conflict_function(s: float, phi: LognormalParams) -> float:
    """Cumulative probability F(s) that proximity falls below s.

    s <= 0 returns 0 and s = +inf returns 1 (CDF limits).
    """
    if s <= 0.0:
        return 0.0
    if math.isinf(s):
        return 1.0
    z = (math.log(s) - phi.mu) / (phi.sigma * _SQRT2)
    # erfc keeps precision in both tails where 0.5 + 0.5*erf saturates.
    return 0.5 * math.erfc(-z)


def exceedance(s: float, phi: LognormalParams) -> float:
    """Upper-tail probability 1 - F(s), evaluated without cancellation."""
    if s <= 0.0:
        return 1.0
    if math.isinf(s):
        return 0.0
    z = (math.log(s) - phi.mu) / (phi.sigma * _SQRT2)
    return 0.5 * math.erfc(z)


def conflict_probability(n: float, s: float, phi: LognormalParams) -> float:
    """Probability that proximity s is the minimum of n interactions.

    n is real-valued; intensities below 1 only arise from inverting a
    probability (they are flagged at reporting time) but are accepted here
    so the inversion round-trips exactly. s must be positive.
    """
    if not n > 0.0:
        raise ValueError("conflict intensity n must be positive")
    if not s > 0.0:
        raise ValueError("proximity s must be strictly positive")
    return exceedance(s, phi) ** n


def estimate_probability(n: float, s: float, phi: LognormalParams) -> float:
    """Warning-facing alias of :func:`conflict_probability`."""
    return conflict_probability(n, s, phi)


def invert_intensity(p: float, s: float, phi: LognormalParams) -> float:
    """Intensity at which the conflict probability equals p, for 0.5 < p < 1.

    Returns +inf when F(s) = 0 (proximity below anything the context ever
    produces, so every intensity keeps probability 1) and 0.0 when
    F(s) = 1 (proximity beyond the distribution, collision-grade CDF limit
    on the opposite side). Round-trips with :func:`estimate_probability`.
    """
    if not 0.5 < p < 1.0:
        raise ValueError("probability p must lie strictly between 0.5 and 1")
    if not s > 0.0:
        raise ValueError("proximity s must be strictly positive")
    q = exceedance(s, phi)
    if q >= 1.0:
        return math.inf
    if q <= 0.0:
        return 0.0
    return math.log(p) / math.log(q)


def max_intensity(s: float, phi: LognormalParams) -> float:
    """Supremum of intensities with conflict probability above 0.5.

    Equal to ln(0.5) / ln(1 - F(s)); sentinels follow
    :func:`invert_intensity`. Values below 1 fall under the unit-intensity
    floor and are reported raw (see ConflictAssessment.n_max_below_one).
    """
    if not s > 0.0:
        raise ValueError("proximity s must be strictly positive")
    q = exceedance(s, phi)
    if q >= 1.0:
        return math.inf
    if q <= 0.0:
        return 0.0
    return math.log(0.5) / math.log(q)


def assess(s: float, phi: LognormalParams, n_values: tuple[float, ...] = (1.0,)) -> ConflictAssessment:
    """Bundle exceedance, probabilities at requested intensities and n_max."""
    q = exceedance(s, phi)
    p_hat = {float(n): conflict_probability(float(n), s, phi) for n in n_values}
    return ConflictAssessment(s=s, phi=phi, exceedance=q, p_hat=p_hat, n_max=max_intensity(s, phi))
