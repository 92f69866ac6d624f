"""Conditional covariance blocks and the derived solver inputs.

Conditioning mode 1 on a mode-2 measurement leaves mode 1 with a Schur
complement covariance:

    parity  : G = V1 - C V2^{-1} C^+            (block fields eta, mu)
    vacuum  : P = V1 - C (V2 + I/2)^{-1} C^+    (block fields xi, nu)

Both are computed here in closed form from the six scalar moments; the dense
block-matrix path is kept in the tests as the independent oracle.  From the
blocks and the local covariances the four derived scalars are

    gamma = (n1 - eta) det(V2)          delta = (m1 - mu) det(V2)
    alpha = (n1 - xi) det(V2 + I/2)     beta  = (m1 - nu) det(V2 + I/2)

which are the left-hand sides of the four polynomial identities in
(ms, mc) that the reconstruction solver inverts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DegenerateBlockError, InvalidInputError
from .states import LocalCovariance, TwoModeCovariance

#: determinant guard for the parity-block inversion; physical states have
#: det V2 >= 1/4 so this only catches corrupted input
EPS_DET = 1e-12

PARITY = "parity"
VACUUM = "vacuum"


@dataclass(frozen=True)
class SchurBlock:
    """A 2x2 conditional covariance block [[diag, offdiag], [offdiag*, diag]]."""

    diag: float
    offdiag: complex
    kind: str

    def __post_init__(self):
        if self.kind not in (PARITY, VACUUM):
            raise InvalidInputError(f"unknown block kind {self.kind!r}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.diag, self.offdiag], [np.conj(self.offdiag), self.diag]])

    @property
    def det(self) -> float:
        return self.diag**2 - abs(self.offdiag) ** 2


@dataclass(frozen=True)
class DerivedQuartet:
    """The four conditioning scalars feeding the correlation solver."""

    gamma: float
    delta: complex
    alpha: float
    beta: complex


def _correction_terms(V: TwoModeCovariance, diag2: float) -> tuple[float, complex]:
    """Numerators of C M^{-1} C^+ for M = [[diag2, m2], [m2*, diag2]]."""
    ms, mc, m2 = V.ms, V.mc, V.m2
    corr_diag = diag2 * (abs(ms) ** 2 + abs(mc) ** 2) - 2 * (m2 * ms * np.conj(mc)).real
    corr_off = 2 * diag2 * ms * mc - np.conj(m2) * mc**2 - m2 * ms**2
    return corr_diag, corr_off


def schur_parity(V: TwoModeCovariance, eps_det: float = EPS_DET) -> SchurBlock:
    """Parity-conditioned block V1 - C V2^{-1} C^+ as (eta, mu)."""
    d2 = V.mode2().det
    if d2 <= eps_det:
        raise DegenerateBlockError(f"mode-2 block is singular (det = {d2:.3e})")
    corr_diag, corr_off = _correction_terms(V, V.n2)
    return SchurBlock(V.n1 - corr_diag / d2, V.m1 - corr_off / d2, PARITY)


def schur_vacuum(V: TwoModeCovariance) -> SchurBlock:
    """Vacuum-conditioned block V1 - C (V2 + I/2)^{-1} C^+ as (xi, nu).

    V2 + I/2 is always invertible for physical input: its determinant is
    at least n2 + 1/4 > 0.
    """
    e2 = (V.n2 + 0.5) ** 2 - abs(V.m2) ** 2
    corr_diag, corr_off = _correction_terms(V, V.n2 + 0.5)
    return SchurBlock(V.n1 - corr_diag / e2, V.m1 - corr_off / e2, VACUUM)


@dataclass(frozen=True)
class SubensembleMoments:
    """Second moments of one parity subensemble, traced against the
    unnormalized branch operator in the covariance sign convention:
    number = Tr[(a a^+ + a^+ a)/2 rho_branch], anomalous = -Tr[a^2 rho_branch].
    """

    number: float
    anomalous: complex


def conditional_moments_from_subensembles(
    even: SubensembleMoments,
    odd: SubensembleMoments,
    det_v2: float,
) -> SchurBlock:
    """Measurement-side constructor of the parity block.

    eta = 2 sqrt(det V2) (number_even - number_odd) and likewise mu from the
    anomalous moments; on exact inputs this equals schur_parity(V).
    """
    if not np.isfinite(det_v2) or det_v2 <= 0.0:
        raise InvalidInputError(f"det V2 must be positive, got {det_v2!r}")
    w = 2.0 * np.sqrt(det_v2)
    return SchurBlock(
        w * (even.number - odd.number),
        w * (even.anomalous - odd.anomalous),
        PARITY,
    )


def derived_quartet(
    V1: LocalCovariance,
    V2: LocalCovariance,
    parity_block: SchurBlock,
    vacuum_block: SchurBlock,
) -> DerivedQuartet:
    """Combine local covariances with the two conditioned blocks."""
    if parity_block.kind != PARITY or vacuum_block.kind != VACUUM:
        raise ContractViolationError("blocks passed with wrong kinds")
    d2 = V2.det
    e2 = (V2.n + 0.5) ** 2 - abs(V2.m) ** 2
    return DerivedQuartet(
        gamma=(V1.n - parity_block.diag) * d2,
        delta=(V1.m - parity_block.offdiag) * d2,
        alpha=(V1.n - vacuum_block.diag) * e2,
        beta=(V1.m - vacuum_block.offdiag) * e2,
    )


def forward_quartet(n2: float, m2: complex, ms: complex, mc: complex) -> DerivedQuartet:
    """The quartet evaluated directly from the true moments.

    gamma = n2 (|mc|^2 + |ms|^2) - 2 Re(m2 ms mc*), delta = 2 n2 ms mc
    - m2* mc^2 - m2 ms^2, and alpha, beta are the same with n2 -> n2 + 1/2.
    Exact identity: forward == derived for every valid state; the solver
    also uses it to evaluate candidate residuals.
    """
    cross = 2 * (m2 * ms * np.conj(mc)).real
    mag = abs(ms) ** 2 + abs(mc) ** 2
    off = np.conj(m2) * mc**2 + m2 * ms**2
    return DerivedQuartet(
        gamma=n2 * mag - cross,
        delta=2 * n2 * ms * mc - off,
        alpha=(n2 + 0.5) * mag - cross,
        beta=2 * (n2 + 0.5) * ms * mc - off,
    )


def correlation_det_magnitude(det_v2: float, V1: LocalCovariance, parity_block: SchurBlock) -> float:
    """|det C| recovered from locally measurable data:
    sqrt(det V2 * det(V1 - G)) with G the parity block."""
    dd = (V1.n - parity_block.diag) ** 2 - abs(V1.m - parity_block.offdiag) ** 2
    return float(np.sqrt(max(det_v2, 0.0) * max(dd, 0.0)))
