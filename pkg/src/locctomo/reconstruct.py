"""Correlation-block solver, degeneracy repair, and protocol orchestration.

From the derived quartet (gamma, delta, alpha, beta) and Bob's local block
the solver recovers the correlation moments:

    |ms mc|          = |beta - delta|
    theta_s+theta_c  = Arg(beta - delta)
    theta_s-theta_c  = +-acos(x) - theta2,
        x = (alpha n2 - gamma (n2 + 1/2)) / |m2 (beta - delta)|
    |mc|^2 + |ms|^2  = 2 (alpha - gamma)
    |mc|^2 - |ms|^2  = |beta| sin(theta_beta - theta_c - theta_s)
                         / (|m2| sin(theta2 - theta_c + theta_s))

Two exact discrete degeneracies of the quartet require care beyond the
closed forms.  First, the data is invariant under the joint sign flip
(ms, mc) -> (-ms, -mc) (a pi rotation of one mode); solutions are reported
in a canonical sign gauge.  Second, it is invariant under the twisted swap
(ms, mc) -> (mc e^{-i theta2}, ms e^{i theta2}), which is precisely the
other acos branch: both branches therefore solve the system exactly and
residuals cannot distinguish them.  The swapped candidate is often
unphysical; when both candidates are physical, the protocol applies one
more local transform and intersects the candidate sets across frames (the
swap does not commute with local symplectics, so only the true state
survives in both).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .channels import LocalEstimate, MeasurementChannel, ParityStats, VacuumStats
from .conditioning import (
    DerivedQuartet,
    SchurBlock,
    SubensembleMoments,
    VACUUM,
    conditional_moments_from_subensembles,
    correlation_det_magnitude,
    derived_quartet,
    forward_quartet,
)
from .errors import (
    ContractViolationError,
    DegenerateCaseError,
    InconsistentStatisticsError,
)
from .states import (
    LocalCovariance,
    LocalSymplectic,
    TwoModeCovariance,
    apply_local_symplectic,
    gauge_fix_correlations,
    validate_physicality,
)


class Diagnosis(Enum):
    UNCORRELATED = "uncorrelated"
    M2_ZERO = "m2-zero"
    ONE_CROSS_ZERO = "one-of-ms-mc-zero"
    SIN_ZERO = "sin-zero"
    A_PLUS_ZERO = "a-plus-zero"
    BRANCH_AMBIGUOUS = "branch-ambiguous"
    GENERIC = "generic"


#: diagnoses that call for a repair transform
_REPAIRABLE = (
    Diagnosis.M2_ZERO,
    Diagnosis.ONE_CROSS_ZERO,
    Diagnosis.SIN_ZERO,
    Diagnosis.A_PLUS_ZERO,
)


@dataclass(frozen=True)
class ProtocolConfig:
    r_fix: float = 0.5
    s_fix: float = math.pi / 4
    max_fix_rounds: int = 4
    max_disambiguation_rounds: int = 2
    eps_zero: float = 1e-8
    eps_clamp: float = 1e-7
    eps_solve: float = 1e-8
    eps_sin: float = 1e-6
    k_sigma: float = 3.0
    allow_role_swap: bool = False


@dataclass(frozen=True)
class SolveCandidate:
    ms: complex
    mc: complex
    branch: str
    residual: float
    physical: bool


@dataclass(frozen=True)
class CorrelationSolution:
    ms: complex
    mc: complex
    branch: str
    residual: float
    candidates: tuple[SolveCandidate, ...] = ()


@dataclass(frozen=True)
class AppliedFix:
    diagnosis: Diagnosis
    transform: LocalSymplectic
    purpose: str  # "repair" | "disambiguation"


@dataclass(frozen=True)
class TranscriptMessage:
    sender: str  # "alice" | "bob"
    kind: str
    payload: dict


@dataclass(frozen=True)
class AttemptRecord:
    round_index: int
    diagnosis: Diagnosis
    solution: CorrelationSolution | None = None


STATUS_EXACT = "exact-success"
STATUS_NOISY = "noisy-success"
STATUS_AMBIGUOUS = "ambiguous-branch"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class ReconstructionReport:
    recovered: TwoModeCovariance | None
    fixes: tuple[AppliedFix, ...]
    attempts: tuple[AttemptRecord, ...]
    transcript: tuple[TranscriptMessage, ...]
    status: str
    alternative: TwoModeCovariance | None = None
    failure_reason: str = ""

    @property
    def repair_fixes(self) -> tuple[AppliedFix, ...]:
        return tuple(f for f in self.fixes if f.purpose == "repair")

    def to_dict(self) -> dict:
        def cpx(z):
            return [z.real, z.imag]

        def fix(f):
            return {
                "diagnosis": f.diagnosis.value,
                "mode": f.transform.mode,
                "r": f.transform.r,
                "s": f.transform.s,
                "purpose": f.purpose,
            }

        def attempt(a):
            out = {"round": a.round_index, "diagnosis": a.diagnosis.value}
            if a.solution is not None:
                out["solution"] = {
                    "ms": cpx(a.solution.ms),
                    "mc": cpx(a.solution.mc),
                    "branch": a.solution.branch,
                    "residual": a.solution.residual,
                    "candidates": [
                        {
                            "ms": cpx(c.ms),
                            "mc": cpx(c.mc),
                            "branch": c.branch,
                            "residual": c.residual,
                            "physical": c.physical,
                        }
                        for c in a.solution.candidates
                    ],
                }
            return out

        return {
            "status": self.status,
            "recovered": self.recovered.to_dict() if self.recovered else None,
            "alternative": self.alternative.to_dict() if self.alternative else None,
            "fixes": [fix(f) for f in self.fixes],
            "attempts": [attempt(a) for a in self.attempts],
            "transcript": [
                {"from": m.sender, "kind": m.kind, "payload": m.payload}
                for m in self.transcript
            ],
            "failure_reason": self.failure_reason,
        }


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def _quartet_vector(q: DerivedQuartet) -> np.ndarray:
    return np.array([q.gamma, q.delta.real, q.delta.imag, q.alpha, q.beta.real, q.beta.imag])


def _residual(quartet: DerivedQuartet, n2: float, m2: complex, ms: complex, mc: complex) -> float:
    target = _quartet_vector(quartet)
    got = _quartet_vector(forward_quartet(n2, m2, ms, mc))
    scale = max(np.max(np.abs(target)), 1e-3)
    return float(np.max(np.abs(got - target)) / scale)


def _quartet_jacobian(n2: float, m2: complex, ms: complex, mc: complex) -> np.ndarray:
    """Analytic Jacobian of the quartet vector in (Re ms, Im ms, Re mc, Im mc).

    The off-diagonal scalars delta and beta are holomorphic in (ms, mc);
    gamma and alpha mix ms with mc* through a single real part.
    """
    J = np.zeros((6, 4))
    c_ms = m2 * np.conj(mc)  # d[2 Re(m2 ms mc*)] along ms
    c_mc = m2 * ms  # along mc (enters via mc*)
    # gamma and alpha rows: n (|mc|^2 + |ms|^2) - 2 Re(m2 ms mc*)
    for row, n in ((0, n2), (3, n2 + 0.5)):
        J[row, 0] = 2 * n * ms.real - 2 * c_ms.real
        J[row, 1] = 2 * n * ms.imag + 2 * c_ms.imag
        J[row, 2] = 2 * n * mc.real - 2 * c_mc.real
        J[row, 3] = 2 * n * mc.imag - 2 * c_mc.imag
    # delta and beta rows: holomorphic, complex derivatives
    for base, n in ((1, n2), (4, n2 + 0.5)):
        d_ms = 2 * n * mc - 2 * m2 * ms
        d_mc = 2 * n * ms - 2 * np.conj(m2) * mc
        for col, dz in ((0, d_ms), (1, 1j * d_ms), (2, d_mc), (3, 1j * d_mc)):
            J[base, col] = dz.real
            J[base + 1, col] = dz.imag
    return J


def _polish(quartet: DerivedQuartet, n2: float, m2: complex, ms: complex, mc: complex,
            iterations: int = 8) -> tuple[complex, complex]:
    """Gauss-Newton refinement of (ms, mc) on the full six-equation system.

    The closed forms lose digits near the acos branch point; a few
    least-squares steps with the analytic Jacobian restore machine
    precision.
    """
    target = _quartet_vector(quartet)
    scale = max(np.max(np.abs(target)), 1e-6)
    x = np.array([ms.real, ms.imag, mc.real, mc.imag])
    for _ in range(iterations):
        cur_ms, cur_mc = x[0] + 1j * x[1], x[2] + 1j * x[3]
        r = _quartet_vector(forward_quartet(n2, m2, cur_ms, cur_mc)) - target
        if np.max(np.abs(r)) < 1e-15 * scale:
            break
        J = _quartet_jacobian(n2, m2, cur_ms, cur_mc)
        dx, *_ = np.linalg.lstsq(J, -r, rcond=None)
        if not np.all(np.isfinite(dx)):
            break
        x = x + dx
    return x[0] + 1j * x[1], x[2] + 1j * x[3]


def solve_phases(
    quartet: DerivedQuartet,
    n2: float,
    m2: complex,
    eps_zero: float = 1e-8,
    eps_clamp: float = 1e-7,
) -> list[tuple[float, float]]:
    """Candidate (theta_c, theta_s) pairs from the phase equations.

    Returns one pair per acos branch (a single pair when the branches
    coincide at x = +-1).  Requires |m2 (beta - delta)| well away from zero.
    """
    bd = quartet.beta - quartet.delta
    scale = max(abs(quartet.alpha - quartet.gamma), abs(bd), 1e-6)
    if abs(m2) < eps_zero * max(n2, 0.5):
        raise DegenerateCaseError("m2 is zero: phase equations unusable", Diagnosis.M2_ZERO.value)
    if abs(bd) < eps_zero * scale:
        raise DegenerateCaseError(
            "beta - delta is zero: a cross moment vanishes", Diagnosis.ONE_CROSS_ZERO.value
        )
    x = (quartet.alpha * n2 - quartet.gamma * (n2 + 0.5)) / abs(m2 * bd)
    if abs(x) > 1.0:
        if abs(x) > 1.0 + eps_clamp:
            raise InconsistentStatisticsError(
                f"phase cosine {x:.6g} outside [-1, 1] beyond tolerance {eps_clamp:.1e}"
            )
        x = math.copysign(1.0, x)
    half_sum = cmath.phase(bd)
    theta2 = cmath.phase(m2)
    d = math.acos(x)
    pairs = []
    for sign in (1.0, -1.0):
        diff = sign * d - theta2
        pair = ((half_sum - diff) / 2.0, (half_sum + diff) / 2.0)  # (theta_c, theta_s)
        if not any(
            abs(pair[0] - p[0]) < 1e-12 and abs(pair[1] - p[1]) < 1e-12 for p in pairs
        ):
            pairs.append(pair)
    return pairs


def solve_moduli(
    quartet: DerivedQuartet,
    m2: complex,
    theta_c: float,
    theta_s: float,
    eps_zero: float = 1e-8,
    eps_solve: float = 1e-8,
) -> tuple[float, float]:
    """(|mc|, |ms|) from the modulus sum and difference equations.

    Requires |m2 sin(theta2 - theta_c + theta_s)| away from zero; small
    negative squared moduli within eps_solve are clamped to zero.
    """
    total = 2.0 * (quartet.alpha - quartet.gamma)
    theta2 = cmath.phase(m2)
    sin_term = math.sin(theta2 - theta_c + theta_s)
    if abs(m2) * abs(sin_term) < eps_zero * max(abs(m2), 0.5):
        raise DegenerateCaseError(
            "sin(theta2 - theta_c + theta_s) is zero: modulus split unusable",
            Diagnosis.SIN_ZERO.value,
        )
    diff = abs(quartet.beta) * math.sin(cmath.phase(quartet.beta) - theta_c - theta_s)
    diff /= abs(m2) * sin_term
    mc2 = 0.5 * (total + diff)
    ms2 = 0.5 * (total - diff)
    floor = -eps_solve * max(total, 1e-6)
    if mc2 < floor or ms2 < floor:
        raise InconsistentStatisticsError(
            f"negative squared modulus (mc^2 = {mc2:.3e}, ms^2 = {ms2:.3e})"
        )
    return math.sqrt(max(mc2, 0.0)), math.sqrt(max(ms2, 0.0))


def evaluate_a_plus(n2: float, m2: complex, ms_abs: float, mc_abs: float) -> float:
    """|m2| (|mc|^2 + |ms|^2) - 2 n2 |mc ms|, the repair-blocking numerator
    of the transformed phase tangent when the cosine branch is +1."""
    return abs(m2) * (mc_abs**2 + ms_abs**2) - 2.0 * n2 * mc_abs * ms_abs


def _moduli_pair_from_sum_product(quartet: DerivedQuartet) -> tuple[float, float]:
    """The unordered pair {|mc|^2, |ms|^2} as roots of t^2 - St + P^2."""
    total = max(2.0 * (quartet.alpha - quartet.gamma), 0.0)
    prod = abs(quartet.beta - quartet.delta)
    disc = max(total * total - 4.0 * prod * prod, 0.0)
    root = math.sqrt(disc)
    return 0.5 * (total + root), 0.5 * (total - root)


@dataclass(frozen=True)
class _PhaseStructure:
    x: float  # clamped cosine of theta2 - theta_c + theta_s
    pairs: tuple[tuple[float, float], ...]  # (theta_c, theta_s) per branch
    sines: tuple[float, ...]  # sin(theta2 - theta_c + theta_s) per branch
    sin_floor: float  # below this the sine cannot be trusted


def _phase_structure(
    quartet: DerivedQuartet,
    n2: float,
    m2: complex,
    config: ProtocolConfig,
    noise: float,
) -> _PhaseStructure:
    """Shared phase solve with a cancellation-aware trust floor.

    x is a difference of terms of magnitude |alpha n2| + |gamma (n2+1/2)|
    divided by |m2 (beta-delta)|; its rounding error delta_x translates to a
    sine uncertainty sqrt(2 delta_x) near the branch point."""
    bd = quartet.beta - quartet.delta
    den = abs(m2 * bd)
    num_scale = abs(quartet.alpha) * n2 + abs(quartet.gamma) * (n2 + 0.5)
    delta_x = (1e-14 * num_scale + 3.0 * noise * (num_scale + den)) / den
    clamp = max(config.eps_clamp, config.k_sigma * noise * num_scale / den, 5.0 * delta_x)
    pairs = solve_phases(quartet, n2, m2, config.eps_zero, clamp)
    x = (quartet.alpha * n2 - quartet.gamma * (n2 + 0.5)) / den
    x = max(-1.0, min(1.0, x))
    theta2 = cmath.phase(m2)
    sines = tuple(math.sin(theta2 - tc + ts) for tc, ts in pairs)
    sin_floor = max(config.eps_sin, math.sqrt(2.0 * max(delta_x, 0.0)), 10.0 * noise)
    return _PhaseStructure(x, tuple(pairs), sines, sin_floor)


def _candidate_solutions(
    quartet: DerivedQuartet,
    local1: LocalCovariance,
    local2: LocalCovariance,
    config: ProtocolConfig,
    noise: float = 0.0,
    structure: _PhaseStructure | None = None,
) -> list[SolveCandidate]:
    """All consistent correlation candidates, polished, in the canonical
    sign gauge, with physicality flags, best first.

    Per acos branch the modulus split is taken from the difference equation
    when its sine is trustworthy, and both sum/product root assignments are
    always included; implausible candidates are gated out by their residual
    relative to the best one.
    """
    n2, m2 = local2.n, local2.m
    st = structure or _phase_structure(quartet, n2, m2, config, noise)
    raw: list[tuple[complex, complex, str]] = []
    for idx, (theta_c, theta_s) in enumerate(st.pairs):
        label = "acos+" if idx == 0 else "acos-"
        if abs(st.sines[idx]) > st.sin_floor:
            mc_abs, ms_abs = solve_moduli(quartet, m2, theta_c, theta_s,
                                          config.eps_zero, max(config.eps_solve, noise))
            raw.append((ms_abs * cmath.exp(1j * theta_s), mc_abs * cmath.exp(1j * theta_c), label))
        hi, lo = _moduli_pair_from_sum_product(quartet)
        for tag, (mc2, ms2) in (("hi-lo", (hi, lo)), ("lo-hi", (lo, hi))):
            raw.append(
                (
                    math.sqrt(ms2) * cmath.exp(1j * theta_s),
                    math.sqrt(mc2) * cmath.exp(1j * theta_c),
                    f"{label}/{tag}",
                )
            )
    candidates: list[SolveCandidate] = []
    for ms, mc, label in raw:
        ms, mc = _polish(quartet, n2, m2, ms, mc)
        ms, mc = gauge_fix_correlations(ms, mc, floor=3.0 * noise)
        if any(abs(ms - c.ms) + abs(mc - c.mc) < 1e-9 * max(abs(mc), abs(ms), 1.0) for c in candidates):
            continue
        res = _residual(quartet, n2, m2, ms, mc)
        V = TwoModeCovariance(local1.n, local2.n, local1.m, local2.m, ms, mc)
        phys = validate_physicality(V, tol=max(1e-9, 10.0 * noise)).is_physical
        candidates.append(SolveCandidate(ms, mc, label, res, phys))
    candidates.sort(key=lambda c: (not c.physical, c.residual))
    if not candidates:
        return candidates
    gate = 100.0 * (candidates[0].residual + max(config.eps_solve, noise))
    return [c for c in candidates if c.residual <= gate]


# ---------------------------------------------------------------------------
# diagnosis and repair planning
# ---------------------------------------------------------------------------


def diagnose(
    local1: LocalEstimate,
    local2: LocalEstimate,
    parity_block: SchurBlock,
    vacuum_block: SchurBlock,
    quartet: DerivedQuartet,
    config: ProtocolConfig = ProtocolConfig(),
) -> Diagnosis:
    """Classify the current frame's data.

    Check order follows the protocol: the mode-2 anomalous moment first
    (Bob reads it directly off his block), then absence of correlations
    (local covariance equals both conditioned blocks), then the
    determinant test for a single vanishing cross moment, and last the
    vanishing phase sine, which presupposes the earlier cases are clear.
    A vanishing sine only blocks reconstruction when both modulus
    assignments are physically admissible; otherwise the admissible one is
    unique and the diagnosis stays generic.
    """
    v1, v2 = local1.cov, local2.cov
    noise = _noise_level(local1, local2)
    eps = config.eps_zero

    if abs(v2.m) < eps * max(v2.n, 0.5) + config.k_sigma * local2.se_m:
        return Diagnosis.M2_ZERO

    scale1 = max(v1.n, 0.5)
    tol_block = eps * scale1 + config.k_sigma * noise
    if (
        abs(v1.n - parity_block.diag) < tol_block
        and abs(v1.m - parity_block.offdiag) < tol_block
        and abs(v1.n - vacuum_block.diag) < tol_block
        and abs(v1.m - vacuum_block.offdiag) < tol_block
    ):
        return Diagnosis.UNCORRELATED

    total = 2.0 * (quartet.alpha - quartet.gamma)
    det_c = correlation_det_magnitude(v2.det, v1, parity_block)
    tol_det = eps * max(total, 1e-6) + config.k_sigma * noise * max(v2.det, 1.0)
    if abs(det_c - total) < tol_det:
        return Diagnosis.ONE_CROSS_ZERO

    bd = quartet.beta - quartet.delta
    if abs(bd) < eps * max(total, 1e-6) + config.k_sigma * noise:
        return Diagnosis.ONE_CROSS_ZERO

    try:
        structure = _phase_structure(quartet, v2.n, v2.m, config, noise)
        candidates = _candidate_solutions(quartet, v1, v2, config, noise, structure)
    except DegenerateCaseError as err:
        return Diagnosis(err.diagnosis)
    except InconsistentStatisticsError:
        return Diagnosis.GENERIC  # let the solver raise with full context

    sin_degenerate = all(abs(s) <= structure.sin_floor for s in structure.sines)
    if sin_degenerate and sum(c.physical for c in candidates) > 1:
        return Diagnosis.SIN_ZERO
    return Diagnosis.GENERIC


def plan_fix(
    diagnosis: Diagnosis,
    local2: LocalCovariance,
    r_fix: float = 0.5,
    s_fix: float = math.pi / 4,
    noise: float = 0.0,
) -> LocalSymplectic:
    """Choose the local transform that lifts a degeneracy.

    A mode-2 squeeze creates a nonzero m2 and mixes ms with mc, curing the
    first two degeneracies (simultaneously, when they co-occur).  For the
    vanishing sine, a squeeze suffices while m2 has a phase; a real m2
    demands a quadrature rotation as well.  When the +1 cosine branch
    additionally has A+ = 0, mode 2 transforms cannot move the phase sine
    and the squeeze goes on mode 1 instead.
    """
    if diagnosis in (Diagnosis.M2_ZERO, Diagnosis.ONE_CROSS_ZERO):
        return LocalSymplectic(2, r_fix, 0.0)
    if diagnosis is Diagnosis.SIN_ZERO:
        m2 = local2.m
        if abs(m2.imag) <= 1e-9 * max(abs(m2), 1e-12) + 3.0 * noise:
            return LocalSymplectic(2, r_fix, s_fix)
        return LocalSymplectic(2, r_fix, 0.0)
    if diagnosis is Diagnosis.A_PLUS_ZERO:
        return LocalSymplectic(1, r_fix, 0.0)
    raise ContractViolationError(f"plan_fix called with non-repairable diagnosis {diagnosis}")


# ---------------------------------------------------------------------------
# protocol orchestration
# ---------------------------------------------------------------------------


def _noise_level(*stats) -> float:
    level = 0.0
    for s in stats:
        for name in ("se_n", "se_m", "se_number", "se_anomalous"):
            level = max(level, getattr(s, name, 0.0))
    return level


def _cpx(z: complex) -> list[float]:
    return [z.real, z.imag]


@dataclass
class _RoundData:
    local1: LocalEstimate
    local2: LocalEstimate
    parity_block: SchurBlock
    vacuum_block: SchurBlock
    quartet: DerivedQuartet
    noise: float


def _fetch_round(channel: MeasurementChannel, transcript: list) -> _RoundData:
    est1, est2 = channel.local_covariances()
    transcript.append(TranscriptMessage("alice", "local-covariance", {
        "n": est1.cov.n, "m": _cpx(complex(est1.cov.m)),
        "se_n": est1.se_n, "se_m": est1.se_m,
    }))
    transcript.append(TranscriptMessage("bob", "local-covariance", {
        "n": est2.cov.n, "m": _cpx(complex(est2.cov.m)),
        "se_n": est2.se_n, "se_m": est2.se_m,
    }))
    parity = channel.parity_stats()
    transcript.append(TranscriptMessage("bob", "parity-outcome-stats", {
        "p_even": parity.p_even, "p_odd": parity.p_odd,
    }))
    even = parity.even or SubensembleMoments(0.0, 0.0)
    odd = parity.odd or SubensembleMoments(0.0, 0.0)
    transcript.append(TranscriptMessage("alice", "parity-outcome-stats", {
        "even_number": even.number, "even_anomalous": _cpx(complex(even.anomalous)),
        "odd_number": odd.number, "odd_anomalous": _cpx(complex(odd.anomalous)),
        "se_number": parity.se_number, "se_anomalous": parity.se_anomalous,
    }))
    vacuum = channel.vacuum_stats()
    transcript.append(TranscriptMessage("bob", "vacuum-stats", {
        "p_vacuum": vacuum.probability,
    }))
    transcript.append(TranscriptMessage("alice", "vacuum-stats", {
        "number": vacuum.number, "anomalous": _cpx(complex(vacuum.anomalous)),
        "se_number": vacuum.se_number, "se_anomalous": vacuum.se_anomalous,
    }))
    parity_block = conditional_moments_from_subensembles(even, odd, est2.cov.det)
    vacuum_block = SchurBlock(vacuum.number, vacuum.anomalous, VACUUM)
    quartet = derived_quartet(est1.cov, est2.cov, parity_block, vacuum_block)
    noise = _noise_level(est1, est2, parity, vacuum)
    return _RoundData(est1, est2, parity_block, vacuum_block, quartet, noise)


def _request_transform(channel, transcript, transform: LocalSymplectic, reason: str) -> None:
    sender = "bob" if transform.mode == 2 else "alice"
    transcript.append(TranscriptMessage(sender, "apply-transform-request", {
        "mode": transform.mode, "r": transform.r, "s": transform.s, "reason": reason,
    }))
    channel.apply_transform(transform)


def _undo_transforms(V: TwoModeCovariance, fixes: list[AppliedFix]) -> TwoModeCovariance:
    for f in reversed(fixes):
        V = apply_local_symplectic(V, f.transform.inverse())
    return V


def _refine_sin_zero(data: _RoundData, config: ProtocolConfig) -> Diagnosis:
    """Distinguish the mode-1 loophole (A+ = 0 on the +1 cosine branch)
    from the ordinary vanishing-sine case."""
    q = data.quartet
    n2, m2 = data.local2.cov.n, data.local2.cov.m
    bd = abs(q.beta - q.delta)
    x = (q.alpha * n2 - q.gamma * (n2 + 0.5)) / max(abs(m2) * bd, 1e-300)
    if x < 0.0:  # cosine branch -1: the repair numerator never vanishes
        return Diagnosis.SIN_ZERO
    mc2, ms2 = _moduli_pair_from_sum_product(q)
    a_plus = evaluate_a_plus(n2, m2, math.sqrt(ms2), math.sqrt(mc2))
    scale = abs(m2) * (mc2 + ms2) + 2.0 * n2 * math.sqrt(mc2 * ms2)
    if abs(a_plus) < config.eps_zero * max(scale, 1e-6) + config.k_sigma * data.noise * max(scale, 1.0):
        return Diagnosis.A_PLUS_ZERO
    return Diagnosis.SIN_ZERO


def run_protocol(channel: MeasurementChannel, config: ProtocolConfig = ProtocolConfig()) -> ReconstructionReport:
    """Execute the full local-measurement reconstruction protocol.

    Each round fetches the local covariances and the parity/vacuum
    conditioned statistics, diagnoses the frame, and either repairs a
    degeneracy with a local transform (re-measuring afterwards), solves for
    the correlation moments, or performs a disambiguation transform when
    the solver's two exact branches are both physically admissible.  All
    transforms are undone before reporting, so the recovered state is in
    the original frame.
    """
    transcript: list[TranscriptMessage] = []
    fixes: list[AppliedFix] = []
    attempts: list[AttemptRecord] = []
    prior_sets: list[list[tuple[complex, complex]]] = []
    repair_count = 0
    disamb_count = 0
    exact = True
    round_index = 0

    def back_to_origin(ms, mc, data, noise):
        current = TwoModeCovariance(
            data.local1.cov.n, data.local2.cov.n,
            data.local1.cov.m, data.local2.cov.m, ms, mc,
        )
        W = _undo_transforms(current, fixes)
        # transforms do not preserve the sign gauge; restore it
        ms0, mc0 = gauge_fix_correlations(W.ms, W.mc, floor=3.0 * noise)
        return TwoModeCovariance(W.n1, W.n2, W.m1, W.m2, ms0, mc0)

    def final_report(solution, data, status, alternative=None, reason=""):
        recovered = None
        alt = None
        if solution is not None:
            recovered = back_to_origin(solution.ms, solution.mc, data, data.noise)
        if alternative is not None:
            alt = back_to_origin(alternative.ms, alternative.mc, data, data.noise)
        return ReconstructionReport(
            recovered=recovered,
            fixes=tuple(fixes),
            attempts=tuple(attempts),
            transcript=tuple(transcript),
            status=status,
            alternative=alt,
            failure_reason=reason,
        )

    while True:
        round_index += 1
        data = _fetch_round(channel, transcript)
        exact = exact and data.noise == 0.0
        success_status = STATUS_EXACT if exact else STATUS_NOISY

        d = diagnose(data.local1, data.local2, data.parity_block, data.vacuum_block,
                     data.quartet, config)
        if d is Diagnosis.SIN_ZERO:
            d = _refine_sin_zero(data, config)

        if d is Diagnosis.UNCORRELATED:
            solution = CorrelationSolution(0.0j, 0.0j, "uncorrelated", 0.0)
            attempts.append(AttemptRecord(round_index, d, solution))
            return final_report(solution, data, success_status)

        if d in _REPAIRABLE:
            attempts.append(AttemptRecord(round_index, d))
            if repair_count >= config.max_fix_rounds:
                return final_report(None, data, STATUS_FAILED,
                                    reason=f"fix rounds exhausted with diagnosis {d.value}")
            transform = plan_fix(d, data.local2.cov, config.r_fix, config.s_fix, data.noise)
            fixes.append(AppliedFix(d, transform, "repair"))
            _request_transform(channel, transcript, transform, d.value)
            repair_count += 1
            continue

        # GENERIC: solve in this frame
        try:
            candidates = _candidate_solutions(
                data.quartet, data.local1.cov, data.local2.cov, config, data.noise
            )
        except (DegenerateCaseError, InconsistentStatisticsError) as err:
            attempts.append(AttemptRecord(round_index, d))
            return final_report(None, data, STATUS_FAILED, reason=str(err))
        if not candidates:
            attempts.append(AttemptRecord(round_index, d))
            return final_report(None, data, STATUS_FAILED, reason="no solver candidates")

        viable = [c for c in candidates if c.physical] or candidates
        # map to the original frame for cross-round comparison
        def to_origin(c: SolveCandidate) -> tuple[complex, complex]:
            V = TwoModeCovariance(
                data.local1.cov.n, data.local2.cov.n,
                data.local1.cov.m, data.local2.cov.m, c.ms, c.mc,
            )
            W = _undo_transforms(V, fixes)
            ms, mc = gauge_fix_correlations(W.ms, W.mc, floor=3.0 * data.noise)
            return ms, mc

        origin = [to_origin(c) for c in viable]
        scale = max(max(abs(p[0]), abs(p[1])) for p in origin)
        merge_tol = max(1e-7 * max(scale, 1e-3), 5.0 * data.noise)

        def dist(p, q):
            return abs(p[0] - q[0]) + abs(p[1] - q[1])

        # merge candidates that coincide in the original frame
        reps: list[int] = []
        for i in range(len(viable)):
            if all(dist(origin[i], origin[j]) >= merge_tol for j in reps):
                reps.append(i)

        chosen: int | None = None
        runner: int | None = None
        if len(reps) == 1:
            chosen = reps[0]
        elif prior_sets:
            # score each candidate by its distance to the closest match in
            # every earlier frame; the true state recurs in all frames while
            # the spurious branch moves (the swap does not commute with the
            # applied transforms)
            scores = [
                sum(min(dist(origin[i], q) for q in prior) for prior in prior_sets)
                for i in reps
            ]
            order = sorted(range(len(reps)), key=lambda k: scores[k])
            best_score = scores[order[0]]
            second_score = scores[order[1]]
            if second_score > 3.0 * best_score + merge_tol:
                chosen = reps[order[0]]
            else:
                runner = reps[order[1]]
        if chosen is not None:
            best = viable[chosen]
            solution = CorrelationSolution(best.ms, best.mc, best.branch, best.residual,
                                           tuple(candidates))
            attempts.append(AttemptRecord(round_index, d, solution))
            if solution.residual > max(config.eps_solve, 100.0 * data.noise, 1e-30) * 1e3:
                return final_report(None, data, STATUS_FAILED,
                                    reason=f"residual {solution.residual:.3e} too large")
            return final_report(solution, data, success_status)

        attempts.append(AttemptRecord(
            round_index, Diagnosis.BRANCH_AMBIGUOUS,
            CorrelationSolution(viable[reps[0]].ms, viable[reps[0]].mc,
                                "tie", viable[reps[0]].residual, tuple(candidates)),
        ))
        if disamb_count >= config.max_disambiguation_rounds:
            best = viable[reps[0]]
            other = viable[runner if runner is not None else reps[1]]
            solution = CorrelationSolution(best.ms, best.mc, best.branch, best.residual,
                                           tuple(candidates))
            return final_report(solution, data, STATUS_AMBIGUOUS, alternative=other)

        # only frames with physically admissible candidates constrain later
        # rounds; an all-unphysical frame carries no usable information
        physical_origin = [origin[i] for i in range(len(viable)) if viable[i].physical]
        if physical_origin:
            prior_sets.append(physical_origin)
        # squeeze first; add a quadrature rotation on the second attempt so
        # real-moment frames cannot stay degenerate
        transform = (
            LocalSymplectic(2, config.r_fix, 0.0)
            if disamb_count == 0
            else LocalSymplectic(2, config.r_fix, config.s_fix)
        )
        fixes.append(AppliedFix(Diagnosis.BRANCH_AMBIGUOUS, transform, "disambiguation"))
        _request_transform(channel, transcript, transform, "branch-disambiguation")
        disamb_count += 1
