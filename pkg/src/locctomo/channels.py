"""Measurement channels feeding the reconstruction protocol.

A channel owns the hidden truth and serves exactly the quantities the two
parties can measure locally: the two local covariance blocks, the
parity-conditioned mode-1 subensemble moments, the vacuum-conditioned
mode-1 moments, and it accepts local symplectic transform requests (which
are applied at the source, i.e. to the hidden truth).

Three implementations: ExactChannel (closed-form moments, zero noise),
FockChannel (brute-force truncated Fock simulation) and, in
`locctomo.noise`, NoisyChannel (finite-statistics estimates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Protocol

from .conditioning import SubensembleMoments, schur_parity, schur_vacuum
from .states import (
    GenerationRecipe,
    LocalCovariance,
    LocalSymplectic,
    TwoModeCovariance,
    apply_local_symplectic,
    symplectic_of_local,
)


@dataclass(frozen=True)
class LocalEstimate:
    """A party's estimate of its own covariance block."""

    cov: LocalCovariance
    se_n: float = 0.0
    se_m: float = 0.0
    physical_warning: bool = False


@dataclass(frozen=True)
class ParityStats:
    """Parity outcome probabilities (mode 2) and the conditioned mode-1
    subensemble moments (unnormalized-trace convention)."""

    even: SubensembleMoments | None
    odd: SubensembleMoments | None
    p_even: float
    p_odd: float
    se_number: float = 0.0
    se_anomalous: float = 0.0


@dataclass(frozen=True)
class VacuumStats:
    """Vacuum outcome probability (mode 2) and the normalized conditioned
    mode-1 second moments."""

    number: float
    anomalous: complex
    probability: float
    se_number: float = 0.0
    se_anomalous: float = 0.0


class MeasurementChannel(Protocol):
    def local_covariances(self) -> tuple[LocalEstimate, LocalEstimate]: ...

    def parity_stats(self) -> ParityStats: ...

    def vacuum_stats(self) -> VacuumStats: ...

    def apply_transform(self, transform: LocalSymplectic) -> None: ...

    def swap_modes(self) -> None: ...


def swap_covariance(V: TwoModeCovariance) -> TwoModeCovariance:
    """Relabel the two modes: C goes to C^+, so ms conjugates."""
    return TwoModeCovariance(
        n1=V.n2, n2=V.n1, m1=V.m2, m2=V.m1, ms=complex(V.ms).conjugate(), mc=V.mc
    )


def exact_parity_stats(V: TwoModeCovariance) -> ParityStats:
    """Closed-form subensemble moments of mode 1 after parity-sorting on
    mode 2.

    The even/odd split of the reduced mode-1 operator satisfies
    rho_e + rho_o = rho_1 and rho_e - rho_o = sigma / (2 sqrt(det V2)) with
    sigma the trace-one Gaussian operator whose block is schur_parity(V);
    the branch moments follow by half-sum/half-difference.  The probability
    difference p_e - p_o equals 1 / (2 sqrt(det V2)).
    """
    w = 2.0 * math.sqrt(V.mode2().det)
    block = schur_parity(V)
    p_even = 0.5 * (1.0 + 1.0 / w)
    even = SubensembleMoments(0.5 * (V.n1 + block.diag / w), 0.5 * (V.m1 + block.offdiag / w))
    odd = SubensembleMoments(0.5 * (V.n1 - block.diag / w), 0.5 * (V.m1 - block.offdiag / w))
    return ParityStats(even, odd, p_even, 1.0 - p_even)


def exact_vacuum_stats(V: TwoModeCovariance) -> VacuumStats:
    """Closed-form vacuum-conditioned moments; the no-photon probability of
    a zero-mean Gaussian mode is 1/sqrt(det(V2 + I/2))."""
    block = schur_vacuum(V)
    e2 = (V.n2 + 0.5) ** 2 - abs(V.m2) ** 2
    return VacuumStats(block.diag, block.offdiag, 1.0 / math.sqrt(e2))


class ExactChannel:
    """Serves the protocol's observables exactly from the hidden truth."""

    def __init__(self, truth: TwoModeCovariance):
        self._truth = truth

    @property
    def truth(self) -> TwoModeCovariance:
        return self._truth

    def local_covariances(self) -> tuple[LocalEstimate, LocalEstimate]:
        return LocalEstimate(self._truth.mode1()), LocalEstimate(self._truth.mode2())

    def parity_stats(self) -> ParityStats:
        return exact_parity_stats(self._truth)

    def vacuum_stats(self) -> VacuumStats:
        return exact_vacuum_stats(self._truth)

    def apply_transform(self, transform: LocalSymplectic) -> None:
        self._truth = apply_local_symplectic(self._truth, transform)

    def swap_modes(self) -> None:
        self._truth = swap_covariance(self._truth)


class FockChannel:
    """Serves the observables from a dense truncated-Fock simulation.

    Transform requests extend the generation recipe; the state is rebuilt
    lazily at the cutoff demanded by the extended circuit.  Reported
    standard errors are set to the oracle accuracy floor so the protocol
    widens its tolerances accordingly.
    """

    def __init__(self, recipe: GenerationRecipe, cutoff: int | None = None,
                 noise_floor: float | None = None):
        from .fock import ORACLE_TOL

        self._recipe = recipe
        self._cutoff = cutoff
        self._state = None
        self.noise_floor = ORACLE_TOL if noise_floor is None else noise_floor

    @property
    def recipe(self) -> GenerationRecipe:
        return self._recipe

    def _fock_state(self):
        from .fock import build_state

        if self._state is None:
            self._state = build_state(self._recipe, cutoff=self._cutoff)
        return self._state

    def local_covariances(self) -> tuple[LocalEstimate, LocalEstimate]:
        V = self._fock_state().covariance()
        f = self.noise_floor
        return (
            LocalEstimate(V.mode1(), se_n=f, se_m=f),
            LocalEstimate(V.mode2(), se_n=f, se_m=f),
        )

    def parity_stats(self) -> ParityStats:
        from .fock import parity_conditioned_moments

        pm = parity_conditioned_moments(self._fock_state())
        return ParityStats(pm.even, pm.odd, pm.p_even, pm.p_odd,
                           se_number=self.noise_floor, se_anomalous=self.noise_floor)

    def vacuum_stats(self) -> VacuumStats:
        from .fock import vacuum_conditioned_moments

        vm = vacuum_conditioned_moments(self._fock_state())
        return VacuumStats(vm.number, vm.anomalous, vm.probability,
                           se_number=self.noise_floor, se_anomalous=self.noise_floor)

    def apply_transform(self, transform: LocalSymplectic) -> None:
        self._recipe = self._recipe.extended(symplectic_of_local(transform))
        self._state = None
        self._cutoff = None  # re-derive for the extended circuit

    def swap_modes(self) -> None:
        thermal = (self._recipe.thermal[1], self._recipe.thermal[0])
        ops = tuple(
            replace(op, mode={1: 2, 2: 1}[op.mode]) if op.mode is not None else op
            for op in self._recipe.ops
        )
        self._recipe = GenerationRecipe(thermal, ops)
        self._state = None


class RoleSwappedChannel:
    """Adapter presenting a channel with the two parties' roles exchanged."""

    def __init__(self, inner: MeasurementChannel):
        self.inner = inner
        self.inner.swap_modes()

    def local_covariances(self):
        a, b = self.inner.local_covariances()
        return a, b

    def parity_stats(self):
        return self.inner.parity_stats()

    def vacuum_stats(self):
        return self.inner.vacuum_stats()

    def apply_transform(self, transform: LocalSymplectic) -> None:
        self.inner.apply_transform(transform)

    def swap_modes(self) -> None:
        self.inner.swap_modes()
