"""Brute-force verification path in a truncated two-mode Fock basis.

States are built by replaying a GenerationRecipe with truncated matrix
exponentials of the quadratic generators

    squeeze(r, s)  : exp(-i s a^+a) . exp[(xi* a^2 - xi a^+2)/2], xi = r e^{is}
    rotation(phi)  : exp(i phi a^+a)
    two-mode squeeze(r) : exp[r (a1^+ a2^+ - a1 a2)]

applied to (truncated, sub-normalized) thermal inputs.  The parity and
vacuum projections of the protocol are then applied literally and the
conditioned second moments are compared against the closed-form Schur
blocks.  The trace deficit of the built state is a certified bound on the
truncation tail and is checked against `tail_tol`.

Pure inputs (zero thermal occupation) are propagated as state vectors,
mixed inputs as dense density matrices.  The two-mode-squeeze exponential
is evaluated through a cached eigendecomposition of its (anti-Hermitian)
generator, which is the same matrix exponential at a once-per-cutoff cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .conditioning import SubensembleMoments, schur_parity, schur_vacuum
from .errors import InvalidInputError, TailTooLargeError, UnreliableConditioningError
from .states import GenerationRecipe, RecipeOp, TwoModeCovariance

#: elementwise tolerance for oracle-vs-formula moment comparisons
ORACLE_TOL = 1e-6
#: maximum admissible truncation tail (trace deficit) of a built state
TAIL_TOL = 1e-8
#: trace tolerance for density-matrix sanity checks
EPS_TRACE = 1e-8
#: smallest conditioning probability considered statistically meaningful
P_MIN = 1e-6
#: largest cutoff the dense oracle will attempt per mode
MAX_CUTOFF = 56


@lru_cache(maxsize=8)
def _mode_ops(cutoff: int):
    a = np.diag(np.sqrt(np.arange(1, cutoff)), 1)
    num = a.conj().T @ a
    a2 = a @ a
    for arr in (a, num, a2):
        arr.flags.writeable = False
    return a, num, a2


@lru_cache(maxsize=4)
def _tms_eigensystem(cutoff: int):
    """Eigendecomposition of i(a1^+ a2^+ - a1 a2); exp(r G) = W e^{-i r w} W^+."""
    a, _, _ = _mode_ops(cutoff)
    eye = np.eye(cutoff)
    A1 = np.kron(a, eye)
    A2 = np.kron(eye, a)
    H = 1j * (A1.conj().T @ A2.conj().T - A1 @ A2)
    w, W = np.linalg.eigh(H)
    w.flags.writeable = False
    W.flags.writeable = False
    return w, W


def _single_mode_unitary(op: RecipeOp, cutoff: int) -> np.ndarray:
    a, num, _ = _mode_ops(cutoff)
    if op.kind == "rot":
        return np.diag(np.exp(1j * op.s * np.arange(cutoff)))
    xi = op.r * np.exp(1j * op.s)
    U_sq = scipy.linalg.expm(0.5 * (np.conj(xi) * (a @ a) - xi * (a.conj().T @ a.conj().T)))
    if op.s == 0.0:
        return U_sq
    return np.diag(np.exp(-1j * op.s * np.arange(cutoff))) @ U_sq


#: largest cutoff the rule proposes before relying on escalation
MAX_RULE_CUTOFF = 48


def _marginal_tail_base(n: float, m: complex) -> float:
    """Asymptotic per-photon ratio of the Fock-number tail of a single-mode
    Gaussian with moments (n, m): thermal base (nu-1/2)/(nu+1/2) shifted by
    the squeeze parameter through the tanh addition law."""
    nu = math.sqrt(max(n * n - abs(m) ** 2, 0.25))
    q = (nu - 0.5) / (nu + 0.5)
    r_star = 0.5 * math.log(max((n + abs(m)) / nu, 1.0))
    return math.tanh(math.atanh(min(q, 0.999999)) + r_star)


def cutoff_rule(recipe: GenerationRecipe, tail_tol: float = TAIL_TOL) -> int:
    """Per-mode Fock cutoff estimate for a recipe.

    Sized so each mode's marginal number distribution has tail below
    tail_tol/2 (union bound over the two modes), maximized over every
    circuit prefix since intermediate states can be hotter than the final
    one.  The trace deficit measured by build_state certifies the choice;
    build_state escalates automatically when this estimate is short.
    """
    target = math.log(20.0 / tail_tol)
    worst = 0.0
    for k in range(len(recipe.ops) + 1):
        Vk = GenerationRecipe(recipe.thermal, recipe.ops[:k]).replay()
        for n, m in ((Vk.n1, Vk.m1), (Vk.n2, Vk.m2)):
            b = _marginal_tail_base(n, m)
            if b > 1e-9:
                worst = max(worst, target / (-math.log(b)))
    k = max(16, math.ceil(8.0 * (max(recipe.thermal) + 1.0)), math.ceil(worst) + 2)
    return min(4 * math.ceil(k / 4), MAX_RULE_CUTOFF)


@dataclass
class FockState:
    """A two-mode state in the truncated basis |n1> x |n2>.

    Either a pure state vector of length cutoff**2 or a dense density
    matrix of shape (cutoff**2, cutoff**2).
    """

    cutoff: int
    vector: np.ndarray | None = None
    density: np.ndarray | None = None

    @property
    def trace(self) -> float:
        if self.vector is not None:
            return float(np.vdot(self.vector, self.vector).real)
        return float(np.trace(self.density).real)

    def density_matrix(self) -> np.ndarray:
        if self.vector is not None:
            return np.outer(self.vector, self.vector.conj())
        return self.density

    # -- circuit application ------------------------------------------------

    def _apply_single(self, U: np.ndarray, mode: int) -> None:
        K = self.cutoff
        if self.vector is not None:
            psi = self.vector.reshape(K, K)
            psi = U @ psi if mode == 1 else psi @ U.T
            self.vector = np.ascontiguousarray(psi.reshape(-1))
            return
        rho4 = self.density.reshape(K, K, K, K)
        if mode == 1:
            rho4 = np.einsum("ia,ajcl->ijcl", U, rho4)
            rho4 = np.einsum("kc,ijcl->ijkl", U.conj(), rho4)
        else:
            rho4 = np.einsum("jb,ibkd->ijkd", U, rho4)
            rho4 = np.einsum("ld,ijkd->ijkl", U.conj(), rho4)
        self.density = np.ascontiguousarray(rho4.reshape(K * K, K * K))

    def _apply_tms(self, r: float) -> None:
        w, W = _tms_eigensystem(self.cutoff)
        phase = np.exp(-1j * r * w)
        if self.vector is not None:
            self.vector = W @ (phase * (W.conj().T @ self.vector))
            return
        M = W.conj().T @ self.density @ W
        self.density = W @ (phase[:, None] * M * phase.conj()[None, :]) @ W.conj().T

    def apply(self, op: RecipeOp) -> None:
        if op.kind == "tms":
            self._apply_tms(op.r)
        else:
            self._apply_single(_single_mode_unitary(op, self.cutoff), op.mode)

    # -- moments -------------------------------------------------------------

    def _pair_expectations(self) -> dict:
        """Expectation values needed for the covariance scalars."""
        K = self.cutoff
        a, num, a2 = _mode_ops(K)
        adag = a.conj().T
        if self.vector is not None:
            psi = self.vector.reshape(K, K)
            r1 = np.einsum("ij,kj->ik", psi, psi.conj())  # mode-1 reduced, rho1[i,k]
            r2 = np.einsum("ji,jk->ik", psi, psi.conj())  # mode-2 reduced
            # <a1 a2^+> and <a1 a2>
            cross_sc = np.einsum("ij,ik,jl,kl->", psi.conj(), a, adag, psi)
            cross_cc = np.einsum("ij,ik,jl,kl->", psi.conj(), a, a, psi)
        else:
            rho4 = self.density.reshape(K, K, K, K)
            r1 = np.einsum("ikjk->ij", rho4)
            r2 = np.einsum("kikj->ij", rho4)
            # Tr[(a1 a2^+) rho] = sum rho[(k,l),(i,j)] a[i,k] adag[j,l]
            cross_sc = np.einsum("klij,ik,jl->", rho4, a, adag)
            cross_cc = np.einsum("klij,ik,jl->", rho4, a, a)
        tr = self.trace
        return {
            "trace": tr,
            "n1": float(np.trace(num @ r1).real),
            "n2": float(np.trace(num @ r2).real),
            "sq1": complex(np.trace(a2 @ r1)),
            "sq2": complex(np.trace(a2 @ r2)),
            "a1": complex(np.trace(a @ r1)),
            "a2": complex(np.trace(a @ r2)),
            "a1a2dag": complex(cross_sc),
            "a1a2": complex(cross_cc),
        }

    def covariance(self) -> TwoModeCovariance:
        """Second moments in the covariance sign convention, normalized by
        the (possibly sub-unity) trace."""
        e = self._pair_expectations()
        tr = e["trace"]
        return TwoModeCovariance(
            n1=e["n1"] / tr + 0.5,
            n2=e["n2"] / tr + 0.5,
            m1=-e["sq1"] / tr,
            m2=-e["sq2"] / tr,
            ms=e["a1a2dag"] / tr,
            mc=-e["a1a2"] / tr,
        )

    def first_moments(self) -> tuple[complex, complex]:
        e = self._pair_expectations()
        return e["a1"] / e["trace"], e["a2"] / e["trace"]

    # -- mode-2 conditioning --------------------------------------------------

    def _mode1_conditioned(self, kept: np.ndarray) -> np.ndarray:
        """Unnormalized mode-1 operator after projecting mode 2 on the given
        photon numbers and tracing mode 2 out."""
        K = self.cutoff
        if self.vector is not None:
            psi = self.vector.reshape(K, K)[:, kept]
            return psi @ psi.conj().T
        rho4 = self.density.reshape(K, K, K, K)
        return np.einsum("ikjk->ij", rho4[:, kept][:, :, :, kept])


def _mode1_moments(T: np.ndarray, cutoff: int) -> tuple[float, complex, float]:
    """(number, anomalous, weight) of an unnormalized mode-1 operator, in the
    covariance sign convention."""
    _, num, a2 = _mode_ops(cutoff)
    w = float(np.trace(T).real)
    number = float(np.trace(num @ T).real) + 0.5 * w
    anomalous = -complex(np.trace(a2 @ T))
    return number, anomalous, w


def _build_once(recipe: GenerationRecipe, cutoff: int) -> FockState:
    n = np.arange(cutoff)
    if recipe.thermal[0] == 0.0 and recipe.thermal[1] == 0.0:
        vec = np.zeros(cutoff * cutoff, dtype=complex)
        vec[0] = 1.0
        state = FockState(cutoff, vector=vec)
    else:
        weights = []
        for nbar in recipe.thermal:
            if nbar < 0:
                raise InvalidInputError("thermal occupation must be >= 0")
            if nbar == 0.0:
                w = np.zeros(cutoff)
                w[0] = 1.0
            else:
                q = nbar / (1.0 + nbar)
                w = q**n / (1.0 + nbar)
            weights.append(w)
        state = FockState(cutoff, density=np.diag(np.kron(weights[0], weights[1])).astype(complex))
    for op in recipe.ops:
        state.apply(op)
    return state


def build_state(recipe: GenerationRecipe, cutoff: int | None = None, tail_tol: float = TAIL_TOL) -> FockState:
    """Replay a recipe in the truncated basis.

    With an explicit cutoff, raises TailTooLargeError when the final trace
    deficit exceeds tail_tol.  Without one, starts from cutoff_rule and
    escalates in steps of 8 until the deficit certifies the truncation or
    MAX_CUTOFF is reached.
    """
    if cutoff is not None:
        if cutoff < 2 or cutoff > MAX_CUTOFF:
            raise InvalidInputError(f"cutoff {cutoff} outside [2, {MAX_CUTOFF}]")
        state = _build_once(recipe, cutoff)
        tail = 1.0 - state.trace
        if tail > tail_tol:
            raise TailTooLargeError(
                f"truncation tail {tail:.3e} exceeds {tail_tol:.1e} at cutoff {cutoff}",
                tail=tail,
            )
        return state
    k = cutoff_rule(recipe, tail_tol)
    while True:
        state = _build_once(recipe, k)
        tail = 1.0 - state.trace
        if tail <= tail_tol:
            return state
        if k >= MAX_CUTOFF:
            raise TailTooLargeError(
                f"truncation tail {tail:.3e} exceeds {tail_tol:.1e} even at "
                f"cutoff {MAX_CUTOFF}",
                tail=tail,
            )
        k = min(k + 8, MAX_CUTOFF)


@dataclass(frozen=True)
class ParityMoments:
    """Conditioned mode-1 moments of the even/odd parity subensembles.

    Branch moments are traces against the unnormalized branch operators
    (absent branches are None with zero probability).
    """

    even: SubensembleMoments | None
    odd: SubensembleMoments | None
    p_even: float
    p_odd: float


def parity_conditioned_moments(state: FockState) -> ParityMoments:
    """Project mode 2 on even/odd photon number and trace it out."""
    K = state.cutoff
    out = {}
    probs = {}
    for name, kept in (("even", np.arange(0, K, 2)), ("odd", np.arange(1, K, 2))):
        T = state._mode1_conditioned(kept)
        number, anom, w = _mode1_moments(T, K)
        probs[name] = w
        out[name] = SubensembleMoments(number, anom) if w > 1e-14 else None
    return ParityMoments(out["even"], out["odd"], probs["even"], probs["odd"])


@dataclass(frozen=True)
class VacuumMoments:
    number: float
    anomalous: complex
    probability: float


def vacuum_conditioned_moments(state: FockState, p_min: float = P_MIN) -> VacuumMoments:
    """Project mode 2 on |0><0|, normalize, return mode-1 second moments."""
    T = state._mode1_conditioned(np.array([0]))
    number, anom, w = _mode1_moments(T, state.cutoff)
    if w < p_min:
        raise UnreliableConditioningError(
            f"vacuum probability {w:.3e} below p_min = {p_min:.1e}"
        )
    return VacuumMoments(number / w, anom / w, w)


def sigma_identity_check(state: FockState, V: TwoModeCovariance) -> float:
    """Max deviation of the parity-difference operator from its closed form.

    The weighted difference 2 sqrt(det V2) (rho_even - rho_odd) must be a
    trace-one Gaussian operator whose second moments are the parity Schur
    block of V; returns the largest of the trace and moment deviations.
    """
    K = state.cutoff
    Te = state._mode1_conditioned(np.arange(0, K, 2))
    To = state._mode1_conditioned(np.arange(1, K, 2))
    w = 2.0 * math.sqrt(V.mode2().det)
    sigma = w * (Te - To)
    number, anom, tr = _mode1_moments(sigma, K)
    block = schur_parity(V)
    return max(abs(tr - 1.0), abs(number - block.diag), abs(anom - block.offdiag))


def oracle_deviations(
    recipe: GenerationRecipe,
    V: TwoModeCovariance | None = None,
    cutoff: int | None = None,
    tail_tol: float = TAIL_TOL,
) -> dict:
    """All oracle-vs-formula deviations for one recipe state.

    Compares the Fock-space conditioned moments against the closed-form
    parity/vacuum blocks, checks the parity-difference identity, and the
    determinant identity |det C|^2 = det V2 * det(V1 - G).
    """
    from .conditioning import (
        conditional_moments_from_subensembles,
        correlation_det_magnitude,
    )

    V = V if V is not None else recipe.replay()
    state = build_state(recipe, cutoff=cutoff, tail_tol=tail_tol)
    d2 = V.mode2().det

    parity = parity_conditioned_moments(state)
    even = parity.even or SubensembleMoments(0.0, 0.0)
    odd = parity.odd or SubensembleMoments(0.0, 0.0)
    measured_parity = conditional_moments_from_subensembles(even, odd, d2)
    formula_parity = schur_parity(V)

    vac = vacuum_conditioned_moments(state)
    formula_vacuum = schur_vacuum(V)

    det_c = abs(V.ms) ** 2 - abs(V.mc) ** 2
    det_identity = abs(abs(det_c) - correlation_det_magnitude(d2, V.mode1(), formula_parity))

    return {
        "cutoff": state.cutoff,
        "tail": 1.0 - state.trace,
        "parity_diag": abs(measured_parity.diag - formula_parity.diag),
        "parity_offdiag": abs(measured_parity.offdiag - formula_parity.offdiag),
        "vacuum_diag": abs(vac.number - formula_vacuum.diag),
        "vacuum_offdiag": abs(vac.anomalous - formula_vacuum.offdiag),
        "sigma_identity": sigma_identity_check(state, V),
        "det_identity": det_identity,
        "p_even": parity.p_even,
        "p_odd": parity.p_odd,
        "p_vacuum": vac.probability,
    }
