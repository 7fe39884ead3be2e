"""Two-level quantum kernel for sentiment states and modality observables.

States live on a 2-dimensional complex Hilbert space spanned by ``|+>``
(positive sentiment) and ``|->`` (negative sentiment).  Scalars are plain
Python ``complex`` values, operators are 2x2 ``numpy`` arrays.  All values
are immutable and every function is pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
IDENTITY = np.eye(2, dtype=complex)


def wrap_angle(angle: float) -> float:
    """Reduce an angle into ``[0, 2*pi)``."""
    wrapped = math.fmod(angle, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped


@dataclass(frozen=True)
class Ket2:
    """Pure state ``a_plus |+> + a_minus |->``."""

    a_plus: complex
    a_minus: complex

    def norm(self) -> float:
        return math.sqrt(abs(self.a_plus) ** 2 + abs(self.a_minus) ** 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.a_plus, self.a_minus], dtype=complex)

    def projector(self) -> np.ndarray:
        """Return ``|psi><psi|``."""
        v = self.as_array()
        return np.outer(v, v.conj())


PLUS = Ket2(1.0 + 0j, 0j)
MINUS = Ket2(0j, 1.0 + 0j)


@dataclass(frozen=True)
class BlochState:
    """Bloch angles of a pure state; both angles are wrapped into ``[0, 2*pi)``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "phi", wrap_angle(float(self.phi)))

    def bloch_vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


@dataclass(frozen=True)
class Observable:
    """Binary measurement with eigenvalues +1/-1.

    ``angles`` are the Bloch angles of the "+" eigenstate.  The final
    sentiment observable is the one aligned with the computational basis.
    """

    angles: BlochState

    @classmethod
    def from_angles(cls, theta: float, phi: float = 0.0) -> Observable:
        return cls(BlochState(theta, phi))

    @property
    def theta(self) -> float:
        return self.angles.theta

    @property
    def phi(self) -> float:
        return self.angles.phi


FINAL_OBSERVABLE = Observable.from_angles(0.0, 0.0)


@dataclass(frozen=True)
class PovmPair:
    """Two-outcome unsharp measurement ``{E_+, E_-}`` with noise level ``eta``."""

    e_plus: np.ndarray
    e_minus: np.ndarray
    eta: float


def state_from_angles(angles: BlochState) -> Ket2:
    half = 0.5 * angles.theta
    return Ket2(complex(math.cos(half)), complex(math.cos(angles.phi), math.sin(angles.phi)) * math.sin(half))


def inner_product(bra: Ket2, ket: Ket2) -> complex:
    """``<bra|ket>``, conjugating the bra amplitudes."""
    return bra.a_plus.conjugate() * ket.a_plus + bra.a_minus.conjugate() * ket.a_minus


def born_probability(state: Ket2, basis_state: Ket2) -> float:
    return abs(inner_product(basis_state, state)) ** 2


def eigenstates(obs: Observable) -> tuple[Ket2, Ket2]:
    """Return the (+1, -1) eigenstates, with the minus phase convention
    ``sin(t/2)|+> - e^{i p} cos(t/2)|->``."""
    half = 0.5 * obs.theta
    phase = complex(math.cos(obs.phi), math.sin(obs.phi))
    c, s = math.cos(half), math.sin(half)
    return Ket2(complex(c), phase * s), Ket2(complex(s), -phase * c)


def observable_matrix(obs: Observable) -> np.ndarray:
    plus, minus = eigenstates(obs)
    return plus.projector() - minus.projector()


def povm_effects(obs: Observable, eta: float) -> PovmPair:
    """Unsharp effects ``E_pm = eta/2 I + (1 - eta) |M,pm><M,pm|``.

    Raises:
        ValueError: if ``eta`` lies outside ``[0, 1]``.
    """
    if not 0.0 <= eta <= 1.0 or math.isnan(eta):
        raise ValueError(f"noise level eta must lie in [0, 1], got {eta!r}")
    plus, minus = eigenstates(obs)
    noise = 0.5 * eta * IDENTITY
    return PovmPair(
        e_plus=noise + (1.0 - eta) * plus.projector(),
        e_minus=noise + (1.0 - eta) * minus.projector(),
        eta=float(eta),
    )


def povm_probability(state: Ket2, effect: np.ndarray) -> float:
    """``<psi|E|psi>`` for a pure state."""
    v = state.as_array()
    return float(np.real(v.conj() @ effect @ v))


def unimodal_positive_prob_closed_form(obs: Observable, g: BlochState) -> float:
    """Probability that ``obs`` reads "+" on the state with angles ``g``."""
    tm, pm = obs.theta, obs.phi
    tg, pg = g.theta, g.phi
    return (
        math.cos(0.5 * tm) ** 2 * math.cos(0.5 * tg) ** 2
        + math.sin(0.5 * tm) ** 2 * math.sin(0.5 * tg) ** 2
        + 0.5 * math.sin(tm) * math.sin(tg) * math.cos(pm - pg)
    )


def quantum_correlation(obs1: Observable, obs2: Observable) -> float:
    """Half the signed sum of squared eigenbasis overlaps; lies in [-1, 1]."""
    p1, m1 = eigenstates(obs1)
    p2, m2 = eigenstates(obs2)
    same = abs(inner_product(p1, p2)) ** 2 + abs(inner_product(m1, m2)) ** 2
    cross = abs(inner_product(p1, m2)) ** 2 + abs(inner_product(m1, p2)) ** 2
    return 0.5 * (same - cross)


def correlation_trig(obs1: Observable, obs2: Observable) -> float:
    """Trigonometric form of :func:`quantum_correlation` (Bloch-vector dot product)."""
    return math.cos(obs1.theta) * math.cos(obs2.theta) + math.sin(obs1.theta) * math.sin(
        obs2.theta
    ) * math.cos(obs1.phi - obs2.phi)


def luders_sequential_prob(
    first: Observable, i: int, second: Observable, j: int, state: Ket2 | None = None
) -> float:
    """Probability of outcome ``j`` of ``second`` after ``first`` gave ``i``.

    Evaluated from projector matrices via the Lueders update
    ``tr(P_i rho P_i Q_j) / tr(P_i rho P_i)``.  For a pure state the result
    does not depend on the state; ``state`` defaults to the ``first``
    eigenstate for outcome ``i`` so the denominator is 1.
    """
    if i not in (1, -1) or j not in (1, -1):
        raise ValueError("outcomes must be +1 or -1")
    a_plus, a_minus = eigenstates(first)
    b_plus, b_minus = eigenstates(second)
    p_i = (a_plus if i == 1 else a_minus).projector()
    q_j = (b_plus if j == 1 else b_minus).projector()
    rho = (state if state is not None else (a_plus if i == 1 else a_minus)).projector()
    post = p_i @ rho @ p_i
    denom = float(np.real(np.trace(post)))
    if denom < 1e-15:
        # state orthogonal to the outcome; fall back to the state-independent overlap
        post, denom = p_i, 1.0
    return float(np.real(np.trace(post @ q_j))) / denom


def quantum_correlation_via_luders(obs1: Observable, obs2: Observable) -> float:
    total = 0.0
    for i in (1, -1):
        for j in (1, -1):
            total += i * j * luders_sequential_prob(obs1, i, obs2, j)
    return 0.5 * total
