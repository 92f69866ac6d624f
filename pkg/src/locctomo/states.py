"""Two-mode Gaussian states stored as six scalar second moments.

The covariance matrix of a zero-mean two-mode Gaussian state is

    V = [[ n1,   m1,   ms,   mc  ],
         [ m1*,  n1,   mc*,  ms* ],
         [ ms*,  mc,   n2,   m2  ],
         [ mc*,  ms,   m2*,  n2  ]]

with entries V_ij = (-1)^(i+j) <v_i v_j^+ + v_j^+ v_i>/2 over the operator
vector v = (a1, a1^+, a2, a2^+).  In terms of expectation values this means
n_j = <a_j^+ a_j> + 1/2, m_j = -<a_j^2>, ms = <a1 a2^+> and mc = -<a1 a2>.
The matrix is Hermitian by construction; a physical state additionally
satisfies V >= 0 and V + E/2 >= 0 with E = diag(1, -1, 1, -1).

Storing the six scalars (instead of the assembled matrix) keeps Hermiticity
exact; the 4x4 matrix is assembled on demand.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInputError

#: absolute eigenvalue tolerance for positive-semidefiniteness tests
EPS_PSD = 1e-9

#: E = diag(Z, Z) with Z = diag(1, -1); V + E/2 >= 0 is the uncertainty bound
E_MATRIX = np.diag([1.0, -1.0, 1.0, -1.0])


def _check_finite(*values):
    for v in values:
        if not (math.isfinite(v.real) and math.isfinite(complex(v).imag)):
            raise InvalidInputError(f"non-finite moment value {v!r}")


@dataclass(frozen=True)
class LocalCovariance:
    """Single-mode covariance block [[n, m], [m*, n]]."""

    n: float
    m: complex

    def matrix(self) -> np.ndarray:
        return np.array([[self.n, self.m], [np.conj(self.m), self.n]])

    @property
    def det(self) -> float:
        return self.n * self.n - abs(self.m) ** 2

    def is_physical(self, tol: float = EPS_PSD) -> bool:
        return self.n >= 0.5 - tol and self.det >= 0.25 - tol


@dataclass(frozen=True)
class TwoModeCovariance:
    """Six scalar moments of a two-mode Gaussian state."""

    n1: float
    n2: float
    m1: complex
    m2: complex
    ms: complex
    mc: complex

    def __post_init__(self):
        _check_finite(self.n1, self.n2, self.m1, self.m2, self.ms, self.mc)

    def matrix(self) -> np.ndarray:
        n1, n2, m1, m2, ms, mc = self.n1, self.n2, self.m1, self.m2, self.ms, self.mc
        return np.array(
            [
                [n1, m1, ms, mc],
                [np.conj(m1), n1, np.conj(mc), np.conj(ms)],
                [np.conj(ms), mc, n2, m2],
                [np.conj(mc), ms, np.conj(m2), n2],
            ]
        )

    def mode1(self) -> LocalCovariance:
        return LocalCovariance(self.n1, self.m1)

    def mode2(self) -> LocalCovariance:
        return LocalCovariance(self.n2, self.m2)

    def correlation(self) -> np.ndarray:
        """The 2x2 off-diagonal block C."""
        return np.array([[self.ms, self.mc], [np.conj(self.mc), np.conj(self.ms)]])

    @staticmethod
    def from_matrix(V: np.ndarray) -> "TwoModeCovariance":
        """Extract the six scalars from an assembled 4x4 matrix."""
        return TwoModeCovariance(
            n1=float(V[0, 0].real),
            n2=float(V[2, 2].real),
            m1=complex(V[0, 1]),
            m2=complex(V[2, 3]),
            ms=complex(V[0, 2]),
            mc=complex(V[0, 3]),
        )

    def to_dict(self) -> dict:
        def c(z):
            return [z.real, z.imag]

        return {
            "n1": self.n1,
            "n2": self.n2,
            "m1": c(complex(self.m1)),
            "m2": c(complex(self.m2)),
            "ms": c(complex(self.ms)),
            "mc": c(complex(self.mc)),
        }

    @staticmethod
    def from_dict(d: dict) -> "TwoModeCovariance":
        def c(v):
            return complex(v[0], v[1])

        try:
            return TwoModeCovariance(
                n1=float(d["n1"]),
                n2=float(d["n2"]),
                m1=c(d["m1"]),
                m2=c(d["m2"]),
                ms=c(d["ms"]),
                mc=c(d["mc"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed state record: {exc}") from exc


class Physicality(Enum):
    PHYSICAL = "physical"
    POSITIVE_UNPHYSICAL = "positive-but-unphysical"
    NOT_POSITIVE = "not-positive"


@dataclass(frozen=True)
class PhysicalityVerdict:
    status: Physicality
    min_eig_moment: float
    min_eig_uncertainty: float

    @property
    def is_physical(self) -> bool:
        return self.status is Physicality.PHYSICAL


def validate_physicality(V: TwoModeCovariance, tol: float = EPS_PSD) -> PhysicalityVerdict:
    """Classify V as physical, merely positive, or not even positive.

    A physical two-mode Gaussian covariance must have V >= 0 and satisfy the
    uncertainty bound V + E/2 >= 0; both are tested by eigenvalue with an
    absolute tolerance -tol on the minimum.
    """
    M = V.matrix()
    min_eig = float(np.linalg.eigvalsh(M)[0])
    min_unc = float(np.linalg.eigvalsh(M + 0.5 * E_MATRIX)[0])
    if min_eig < -tol:
        status = Physicality.NOT_POSITIVE
    elif min_unc < -tol:
        status = Physicality.POSITIVE_UNPHYSICAL
    else:
        status = Physicality.PHYSICAL
    return PhysicalityVerdict(status, min_eig, min_unc)


def characteristic_function(V: TwoModeCovariance, z1: complex, z2: complex) -> complex:
    """Gaussian characteristic value exp(-z^+ V z / 2) at (z1, z2).

    Here z^+ = (z1*, z1, z2*, z2); the exponent is a real quadratic form for
    any Hermitian V, so |C(z)| <= 1 whenever V >= 0, and C(0) = 1 exactly.
    """
    z = np.array([z1, np.conj(z1), z2, np.conj(z2)])
    quad = np.conj(z) @ V.matrix() @ z
    return complex(cmath.exp(-0.5 * quad.real))


# ---------------------------------------------------------------------------
# local symplectic transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalSymplectic:
    """Single-mode squeeze (r) plus quadrature rotation (s) on one mode.

    Acts on a covariance matrix as V -> S V S^+ with the 2x2 block

        S(r, s) = [[ e^{-is} cosh r,  sinh r         ],
                   [ sinh r,          e^{is} cosh r  ]]

    inserted on the targeted mode.  det S = 1 and S Z S^+ = Z, so the map
    preserves physicality.
    """

    mode: int
    r: float
    s: float

    def __post_init__(self):
        if self.mode not in (1, 2):
            raise InvalidInputError(f"mode must be 1 or 2, got {self.mode}")
        _check_finite(self.r, self.s)

    def block(self) -> np.ndarray:
        ch, sh = math.cosh(self.r), math.sinh(self.r)
        ph = cmath.exp(-1j * self.s)
        return np.array([[ph * ch, sh], [sh, np.conj(ph) * ch]])

    def full_matrix(self) -> np.ndarray:
        S = np.eye(4, dtype=complex)
        if self.mode == 1:
            S[:2, :2] = self.block()
        else:
            S[2:, 2:] = self.block()
        return S

    def inverse(self) -> "LocalSymplectic":
        """The explicit inverse, again of squeeze-rotation form:
        S(r, s)^{-1} = S(-r, -s) with entries e^{is} cosh r and -sinh r."""
        return LocalSymplectic(self.mode, -self.r, -self.s)


def apply_local_symplectic(V: TwoModeCovariance, S: LocalSymplectic) -> TwoModeCovariance:
    """Transform V -> S V S^+ where S acts on a single mode.

    Only the targeted mode's local block and the correlation block change:
    V_j -> S V_j S^+ and C -> S1 C S2^+.
    """
    B = S.block()
    if S.mode == 1:
        V1 = B @ V.mode1().matrix() @ B.conj().T
        C = B @ V.correlation()
        return TwoModeCovariance(
            n1=float(V1[0, 0].real), n2=V.n2,
            m1=complex(V1[0, 1]), m2=V.m2,
            ms=complex(C[0, 0]), mc=complex(C[0, 1]),
        )
    V2 = B @ V.mode2().matrix() @ B.conj().T
    C = V.correlation() @ B.conj().T
    return TwoModeCovariance(
        n1=V.n1, n2=float(V2[0, 0].real),
        m1=V.m1, m2=complex(V2[0, 1]),
        ms=complex(C[0, 0]), mc=complex(C[0, 1]),
    )


def invert_local_symplectic(S: LocalSymplectic) -> LocalSymplectic:
    """Inverse transform such that apply(apply(V, S), inverse) == V."""
    return S.inverse()


def rotation_matrix(phi: float) -> np.ndarray:
    """Covariance-space phase rotation block diag(e^{i phi}, e^{-i phi}).

    Corresponds to the unitary exp(i phi a^+ a), i.e. a -> e^{i phi} a.
    """
    return np.diag([cmath.exp(1j * phi), cmath.exp(-1j * phi)])


def two_mode_squeeze_matrix(r: float) -> np.ndarray:
    """Covariance-space two-mode squeeze.

    Generation convention: a1 -> a1 cosh r + a2^+ sinh r and
    a2 -> a2 cosh r + a1^+ sinh r (unitary exp[r (a1^+ a2^+ - a1 a2)]).
    On vacuum this produces n = cosh(2r)/2, ms = 0, mc = -sinh(2r)/2.
    """
    c, s = math.cosh(r), math.sinh(r)
    return np.array(
        [
            [c, 0, 0, -s],
            [0, c, -s, 0],
            [0, -s, c, 0],
            [-s, 0, 0, c],
        ],
        dtype=complex,
    )


# ---------------------------------------------------------------------------
# canonical correlation gauge
# ---------------------------------------------------------------------------


def correlation_gauge_sign(ms: complex, mc: complex, floor: float = 0.0) -> int:
    """Sign fixing the joint phase gauge of the correlation pair.

    The measurement data of the protocol is exactly invariant under
    (ms, mc) -> (-ms, -mc) (a pi phase rotation on either mode), so states are
    stored and reported in the gauge where the first significant component of
    (Re ms, Im ms, Re mc, Im mc) is positive.  `floor` discounts components
    below an absolute noise level when deciding significance.
    """
    comps = (ms.real, ms.imag, mc.real, mc.imag)
    scale = max(abs(c) for c in comps)
    if scale == 0.0:
        return 1
    thresh = max(1e-9 * scale, floor)
    for c in comps:
        if abs(c) > thresh:
            return 1 if c > 0 else -1
    return 1


def gauge_fix_correlations(ms: complex, mc: complex, floor: float = 0.0) -> tuple[complex, complex]:
    sign = correlation_gauge_sign(ms, mc, floor)
    return sign * ms, sign * mc


# ---------------------------------------------------------------------------
# generation recipes
# ---------------------------------------------------------------------------

OP_KINDS = ("sq", "rot", "tms")


@dataclass(frozen=True)
class RecipeOp:
    """One elementary Gaussian operation of a generation circuit."""

    kind: str
    mode: int | None = None
    r: float = 0.0
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise InvalidInputError(f"unknown op kind {self.kind!r}")
        if self.kind == "tms":
            if self.mode is not None:
                raise InvalidInputError("tms acts on both modes; mode must be null")
        elif self.mode not in (1, 2):
            raise InvalidInputError(f"op {self.kind!r} needs mode 1 or 2")

    def symplectic(self) -> np.ndarray:
        if self.kind == "tms":
            return two_mode_squeeze_matrix(self.r)
        if self.kind == "sq":
            block = LocalSymplectic(self.mode, self.r, self.s).block()
        else:
            block = rotation_matrix(self.s)
        S = np.eye(4, dtype=complex)
        if self.mode == 1:
            S[:2, :2] = block
        else:
            S[2:, 2:] = block
        return S

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mode": self.mode, "r": self.r, "s": self.s}

    @staticmethod
    def from_dict(d: dict) -> "RecipeOp":
        return RecipeOp(kind=d["kind"], mode=d["mode"], r=float(d["r"]), s=float(d["s"]))


@dataclass(frozen=True)
class GenerationRecipe:
    """Thermal occupations plus an ordered list of elementary operations.

    Replaying the recipe through the symplectic product reproduces the
    covariance matrix it generated; the Fock oracle replays the same circuit
    with truncated unitaries.
    """

    thermal: tuple[float, float]
    ops: tuple[RecipeOp, ...] = field(default_factory=tuple)

    def input_covariance(self) -> np.ndarray:
        t1 = self.thermal[0] + 0.5
        t2 = self.thermal[1] + 0.5
        return np.diag([t1, t1, t2, t2]).astype(complex)

    def symplectic(self) -> np.ndarray:
        S = np.eye(4, dtype=complex)
        for op in self.ops:
            S = op.symplectic() @ S
        return S

    def replay(self) -> TwoModeCovariance:
        S = self.symplectic()
        return TwoModeCovariance.from_matrix(S @ self.input_covariance() @ S.conj().T)

    @property
    def total_squeeze(self) -> float:
        return sum(abs(op.r) for op in self.ops)

    def extended(self, op: RecipeOp) -> "GenerationRecipe":
        return GenerationRecipe(self.thermal, self.ops + (op,))

    def to_dict(self) -> dict:
        return {
            "thermal": [self.thermal[0], self.thermal[1]],
            "ops": [op.to_dict() for op in self.ops],
        }

    @staticmethod
    def from_dict(d: dict) -> "GenerationRecipe":
        try:
            thermal = (float(d["thermal"][0]), float(d["thermal"][1]))
            ops = tuple(RecipeOp.from_dict(o) for o in d["ops"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed recipe record: {exc}") from exc
        return GenerationRecipe(thermal, ops)


def symplectic_of_local(S: LocalSymplectic) -> RecipeOp:
    """Recipe representation of a local squeeze-rotation transform."""
    return RecipeOp("sq", S.mode, S.r, S.s)


# ---------------------------------------------------------------------------
# random state generation
# ---------------------------------------------------------------------------

#: hard caps keeping the Fock oracle cutoff tractable
MAX_THERMAL = 3.0
MAX_SQUEEZE = 1.5

FAMILIES = ("product", "generic", "m2-zero", "one-cross-zero", "real-sin-zero", "tmsv")


@dataclass(frozen=True)
class GenerationParams:
    max_thermal: float = 0.6
    max_squeeze: float = 0.45
    correlation: bool = True

    def __post_init__(self):
        if not (0.0 <= self.max_thermal <= MAX_THERMAL):
            raise InvalidInputError(f"max_thermal outside [0, {MAX_THERMAL}]")
        if not (0.0 < self.max_squeeze <= MAX_SQUEEZE):
            raise InvalidInputError(f"max_squeeze outside (0, {MAX_SQUEEZE}]")


def _canonicalize(recipe: GenerationRecipe) -> tuple[TwoModeCovariance, GenerationRecipe]:
    """Append a mode-2 pi rotation when the correlation pair is in the
    non-canonical gauge, so recipe and state agree in the stored gauge."""
    V = recipe.replay()
    if correlation_gauge_sign(V.ms, V.mc) < 0:
        recipe = recipe.extended(RecipeOp("rot", 2, 0.0, math.pi))
        V = recipe.replay()
    return V, recipe


def _random_local_ops(rng, params: GenerationParams, mode: int, allow_rot=True) -> list[RecipeOp]:
    ops = [
        RecipeOp(
            "sq", mode,
            r=float(rng.uniform(0.08, params.max_squeeze)) * (1 if rng.random() < 0.5 else -1),
            s=float(rng.uniform(0.0, 2.0 * math.pi)),
        )
    ]
    if allow_rot and rng.random() < 0.4:
        ops.append(RecipeOp("rot", mode, 0.0, float(rng.uniform(0.0, 2.0 * math.pi))))
    return ops


def recipe_product(rng, params: GenerationParams) -> GenerationRecipe:
    """Uncorrelated state: thermal inputs with independent local dressing."""
    thermal = (float(rng.uniform(0, params.max_thermal)), float(rng.uniform(0, params.max_thermal)))
    ops = []
    for mode in (1, 2):
        if rng.random() < 0.85:
            ops += _random_local_ops(rng, params, mode)
    return GenerationRecipe(thermal, tuple(ops[:4]))


def recipe_tmsv(r: float) -> GenerationRecipe:
    """Two-mode squeezed vacuum, the canonical m2 = 0 degenerate state."""
    return GenerationRecipe((0.0, 0.0), (RecipeOp("tms", None, r=r),))


def recipe_generic(rng, params: GenerationParams) -> GenerationRecipe:
    """All six moments nonzero with generic phases: local squeezes on both
    modes followed by a two-mode squeeze."""
    thermal = (float(rng.uniform(0, params.max_thermal)), float(rng.uniform(0, params.max_thermal)))
    r_cap = params.max_squeeze
    ops = [
        RecipeOp("sq", 1, r=float(rng.uniform(0.1, 0.7 * r_cap)), s=float(rng.uniform(0, 2 * math.pi))),
        RecipeOp("sq", 2, r=float(rng.uniform(0.1, 0.7 * r_cap)), s=float(rng.uniform(0, 2 * math.pi))),
        RecipeOp("tms", None, r=float(rng.uniform(0.15, r_cap))),
    ]
    return GenerationRecipe(thermal, tuple(ops))


def recipe_m2_zero(rng, params: GenerationParams) -> GenerationRecipe:
    """m2 = 0 with nonzero correlations: a two-mode squeeze on thermal inputs
    leaves the mode-2 block anomalous moment exactly zero; mode-1 dressing
    afterwards makes the remaining moments generic without touching mode 2."""
    thermal = (float(rng.uniform(0, params.max_thermal)), float(rng.uniform(0, params.max_thermal)))
    ops = [
        RecipeOp("tms", None, r=float(rng.uniform(0.15, params.max_squeeze))),
        RecipeOp("sq", 1, r=float(rng.uniform(0.1, 0.7 * params.max_squeeze)),
                 s=float(rng.uniform(0.3, 2 * math.pi - 0.3))),
    ]
    return GenerationRecipe(thermal, tuple(ops))


def recipe_one_cross_zero(rng, params: GenerationParams) -> GenerationRecipe:
    """Exactly one of (ms, mc) zero while m2 != 0.

    ms = 0 variant: local squeezes tuned to m1 = -m2* followed by a two-mode
    squeeze (the tms mixes m1 + m2* into ms, which then cancels exactly).
    mc = 0 variant: start from a generic correlated state (ms != 0), rotate
    mc onto the real axis, then a second two-mode squeeze with
    tanh(2r) = 2 mc / (n1 + n2) cancels mc while ms survives.
    """
    if rng.random() < 0.5:
        t1 = float(rng.uniform(0.05, params.max_thermal)) + 0.5
        t2 = float(rng.uniform(0.05, params.max_thermal)) + 0.5
        s = float(rng.uniform(0, 2 * math.pi))
        r1 = float(rng.uniform(0.1, 0.6 * params.max_squeeze)) * (1 if rng.random() < 0.5 else -1)
        r2 = -0.5 * math.asinh(t1 * math.sinh(2 * r1) / t2)
        return GenerationRecipe(
            (t1 - 0.5, t2 - 0.5),
            (
                RecipeOp("sq", 1, r=r1, s=s),
                RecipeOp("sq", 2, r=r2, s=-s),
                RecipeOp("tms", None, r=float(rng.uniform(0.15, 0.8 * params.max_squeeze))),
            ),
        )
    recipe = recipe_generic(rng, params)
    V = recipe.replay()
    # mode-2 rotation moves mc onto the real axis without touching |m2|
    recipe = recipe.extended(RecipeOp("rot", 2, 0.0, -cmath.phase(V.mc)))
    V = recipe.replay()
    ratio = 2 * V.mc.real / (V.n1 + V.n2)
    r_fix = 0.5 * math.atanh(max(min(ratio, 0.99), -0.99))
    return recipe.extended(RecipeOp("tms", None, r=r_fix))


def recipe_real_sin_zero(rng, params: GenerationParams) -> GenerationRecipe:
    """All moments real with m2, ms, mc nonzero: the phase combination
    theta2 - theta_c + theta_s is then 0 mod pi, the degenerate case that
    needs a quadrature rotation to repair."""
    thermal = (float(rng.uniform(0.25, params.max_thermal)), float(rng.uniform(0.25, params.max_thermal)))
    ops = [
        RecipeOp("sq", 1, r=float(rng.uniform(0.1, 0.6 * params.max_squeeze)) * (1 if rng.random() < 0.5 else -1), s=0.0),
        RecipeOp("sq", 2, r=float(rng.uniform(0.12, 0.7 * params.max_squeeze)) * (1 if rng.random() < 0.5 else -1), s=0.0),
        RecipeOp("tms", None, r=float(rng.uniform(0.15, 0.8 * params.max_squeeze))),
    ]
    return GenerationRecipe(thermal, tuple(ops))


_FAMILY_BUILDERS = {
    "product": recipe_product,
    "generic": recipe_generic,
    "m2-zero": recipe_m2_zero,
    "one-cross-zero": recipe_one_cross_zero,
    "real-sin-zero": recipe_real_sin_zero,
}


def _family_ok(family: str, V: TwoModeCovariance) -> bool:
    """Reject draws that fell outside their family's defining structure
    (possible for tuned constructions when parameters conspire)."""
    scale = max(V.n1, V.n2)
    small, healthy = 1e-10 * scale, 5e-3 * scale
    if family == "m2-zero":
        return abs(V.m2) < small and min(abs(V.ms), abs(V.mc)) > healthy
    if family == "one-cross-zero":
        lo, hi = sorted((abs(V.ms), abs(V.mc)))
        return lo < small and hi > healthy and abs(V.m2) > healthy
    if family == "real-sin-zero":
        return (
            abs(V.m2) > healthy
            and min(abs(V.ms), abs(V.mc)) > healthy
            and abs(abs(V.ms) - abs(V.mc)) > healthy
        )
    if family == "generic":
        return min(abs(V.m2), abs(V.ms), abs(V.mc)) > healthy
    return True


def generate_random_state(
    seed,
    params: GenerationParams | None = None,
    family: str | None = None,
) -> tuple[TwoModeCovariance, GenerationRecipe]:
    """Draw a random physical state together with its generation recipe.

    `seed` may be an integer or a numpy Generator.  With params.correlation
    False the state is a product state (ms = mc = 0 exactly).  `family`
    selects one of the named degeneracy families; default draws generic or
    product states according to params.correlation.
    """
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    params = params or GenerationParams()
    if family is None:
        family = "generic" if params.correlation else "product"
    for _ in range(64):
        if family == "tmsv":
            recipe = recipe_tmsv(float(rng.uniform(0.15, params.max_squeeze)))
        else:
            try:
                builder = _FAMILY_BUILDERS[family]
            except KeyError:
                raise InvalidInputError(f"unknown family {family!r}") from None
            recipe = builder(rng, params)
        V, recipe = _canonicalize(recipe)
        if _family_ok(family, V) and validate_physicality(V).is_physical:
            return V, recipe
    raise InvalidInputError(f"could not draw a valid {family!r} state")  # pragma: no cover
