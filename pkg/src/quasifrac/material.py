"""Cohesive bond potential, influence function and calibration.

Units
-----
Everything inside the solver uses the consistent system {mm, N, MPa}.
Engineering inputs arrive in GPa and J/m^2 and are converted once, in
:func:`calibrate`:

    1 GPa   = 1e3 MPa (N/mm^2)
    1 J/m^2 = 1e-3 N/mm

With these units ``g''(0)`` is in MPa, ``g_inf`` in N/mm, and the scaled
bond strain ``r = sqrt(|X_l - X_k|) * S`` in sqrt(mm).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

GPA_TO_MPA = 1.0e3
J_PER_M2_TO_N_PER_MM = 1.0e-3

#: Volume of the unit ball in R^n.
UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


class InfluenceKind(str, enum.Enum):
    CONSTANT = "constant"
    LINEAR_DECAY = "linear"


def influence(s, kind: InfluenceKind = InfluenceKind.CONSTANT):
    """Influence function J(s) on the normalized distance ``s = |xi| / eps``.

    Accepts scalars or arrays; raises ``ValueError`` for ``s`` outside [0, 1].
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(~np.isfinite(arr)):
        raise ValueError("normalized distance must lie in [0, 1]")
    kind = InfluenceKind(kind)
    if kind is InfluenceKind.CONSTANT:
        out = np.ones_like(arr)
    else:
        out = 1.0 - arr
    return float(out) if out.ndim == 0 else out


def influence_moment(k: int, kind: InfluenceKind) -> float:
    """Closed form of ``int_0^1 r^k J(r) dr``."""
    kind = InfluenceKind(kind)
    if kind is InfluenceKind.CONSTANT:
        return 1.0 / (k + 1)
    return 1.0 / (k + 1) - 1.0 / (k + 2)


@dataclass(frozen=True)
class MaterialModel:
    """Calibrated exponential cohesive law ``g(r) = g_inf (1 - exp(-beta r^2))``.

    The law is symmetric in tension and compression, so the breaking
    strains are ``r_e = -r_c`` with ``r_c = 1 / sqrt(2 beta)`` (the
    inflection points of ``g``).
    """

    g_inf: float
    beta: float
    horizon: float
    dimension: int = 2
    influence_kind: InfluenceKind = InfluenceKind.CONSTANT
    mu: float = float("nan")  # GPa, as supplied or derived
    Gc: float = float("nan")  # J/m^2, as supplied

    def __post_init__(self):
        if self.g_inf <= 0 or self.beta <= 0 or self.horizon <= 0:
            raise ValueError("g_inf, beta and horizon must be positive")
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        object.__setattr__(self, "influence_kind", InfluenceKind(self.influence_kind))

    @property
    def r_c(self) -> float:
        return 1.0 / math.sqrt(2.0 * self.beta)

    @property
    def r_e(self) -> float:
        return -self.r_c

    @property
    def g2_zero(self) -> float:
        """``g''(0) = 2 g_inf beta``, the maximum of ``|g''|``."""
        return 2.0 * self.g_inf * self.beta

    @property
    def normalization(self) -> float:
        """The common factor ``1 / (eps^(n+1) omega_n)``."""
        n = self.dimension
        return 1.0 / (self.horizon ** (n + 1) * UNIT_BALL_VOLUME[n])

    def J(self, distance):
        """Influence weight ``J(|xi| / eps)`` for bond lengths in mm."""
        return influence(np.asarray(distance, dtype=float) / self.horizon, self.influence_kind)

    def g(self, r):
        return self.g_inf * (1.0 - np.exp(-self.beta * np.square(r)))

    def g_prime(self, r):
        return 2.0 * self.g_inf * self.beta * r * np.exp(-self.beta * np.square(r))

    def g_2prime(self, r):
        br2 = self.beta * np.square(r)
        return 2.0 * self.g_inf * self.beta * (1.0 - 2.0 * br2) * np.exp(-br2)

    def g_3prime(self, r):
        br2 = self.beta * np.square(r)
        return 4.0 * self.g_inf * self.beta**2 * r * (2.0 * br2 - 3.0) * np.exp(-br2)


def shear_modulus_from_young(E_gpa: float, dimension: int = 2) -> float:
    """Bond-based materials have a fixed Poisson ratio: 1/3 (plane stress) or 1/4."""
    nu = 1.0 / 3.0 if dimension == 2 else 0.25
    return E_gpa / (2.0 * (1.0 + nu))


def calibrate(
    *,
    Gc: float,
    horizon: float,
    mu: float | None = None,
    E: float | None = None,
    dimension: int = 2,
    influence_kind: InfluenceKind = InfluenceKind.CONSTANT,
) -> MaterialModel:
    """Fit ``g_inf`` and ``beta`` to a shear (or Young's) modulus and fracture energy.

    Parameters
    ----------
    Gc : float
        Critical energy release rate in J/m^2.
    horizon : float
        Nonlocal length scale eps in mm.
    mu, E : float
        Exactly one of the shear modulus or Young's modulus, in GPa.
    dimension : int
        2 (plane stress, nu = 1/3) or 3 (nu = 1/4).
    influence_kind : InfluenceKind
        Shape of J.

    Returns
    -------
    MaterialModel
        With ``mu`` and ``Gc`` recorded in their engineering units.

    Notes
    -----
    Calibration identities (M_k = int_0^1 r^k J(r) dr)::

        mu  = g''(0) / (8 M_2)                      n = 2
        mu  = g''(0) / (10 M_3)                     n = 3
        Gc  = 2 (omega_n / omega_{n-1}) g_inf M_n
    """
    if (mu is None) == (E is None):
        raise ValueError("give exactly one of mu or E")
    if dimension not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    for name, val in (("Gc", Gc), ("horizon", horizon), ("mu", mu), ("E", E)):
        if val is not None and not (val > 0 and math.isfinite(val)):
            raise ValueError(f"{name} must be positive, got {val!r}")
    if mu is None:
        mu = shear_modulus_from_young(E, dimension)

    mu_mpa = mu * GPA_TO_MPA
    gc_n_per_mm = Gc * J_PER_M2_TO_N_PER_MM
    n = dimension
    if n == 2:
        g2_zero = 8.0 * influence_moment(2, influence_kind) * mu_mpa
    else:
        g2_zero = 10.0 * influence_moment(3, influence_kind) * mu_mpa
    ratio = UNIT_BALL_VOLUME[n] / UNIT_BALL_VOLUME[n - 1]
    g_inf = gc_n_per_mm / (2.0 * ratio * influence_moment(n, influence_kind))
    beta = g2_zero / (2.0 * g_inf)
    model = MaterialModel(
        g_inf=g_inf,
        beta=beta,
        horizon=horizon,
        dimension=n,
        influence_kind=influence_kind,
        mu=mu,
        Gc=Gc,
    )
    logger.debug(
        "calibrated: g''(0)=%.6g MPa g_inf=%.6g N/mm r_c=%.6g sqrt(mm)",
        g2_zero, g_inf, model.r_c,
    )
    return model


def bond_strain(u_k, u_l, X_k, X_l) -> float:
    """Nonlocal strain ``(u_l - u_k) . (X_l - X_k) / |X_l - X_k|^2``."""
    xi = np.asarray(X_l, dtype=float) - np.asarray(X_k, dtype=float)
    length2 = float(xi @ xi)
    if length2 == 0.0:
        raise ValueError("bond endpoints coincide")
    eta = np.asarray(u_l, dtype=float) - np.asarray(u_k, dtype=float)
    return float(eta @ xi) / length2


def is_bond_critical(S, bond_length, model: MaterialModel):
    """True where the scaled strain ``sqrt(length) * S`` leaves ``(r_e, r_c)``."""
    r = np.sqrt(bond_length) * np.asarray(S, dtype=float)
    out = (r > model.r_c) | (r < model.r_e)
    return bool(out) if out.ndim == 0 else out
