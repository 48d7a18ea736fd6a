"""Named experiment plans at desk scale (the ones the acceptance suite runs).

Sizes were chosen from pilot runs so that each study resolves its target rate
within the stated tolerance on a single core.
"""

from __future__ import annotations

from .ensemble import EnsembleKind, EnsembleSpec
from .study import StudyPlan

POISSON_2D = EnsembleSpec(EnsembleKind.POISSON, 2, contrast=0.25, inclusion_radius=1.0, intensity=1.0)
SEED = 1


def variance_plan() -> StudyPlan:
    """Variance of the masked estimator for L in {8, 16, 32}, T = L."""
    return StudyPlan(kind="variance", ensemble=POISSON_2D, L_values=(8, 16, 32), T_over_L=1.0, kappa=3.0,
                     h=0.25, n_samples=200, seed=SEED)


def systematic_plan() -> StudyPlan:
    """A_T on dyadic T in [16, 256] from coupled samples on one large box (L = 160).

    The systematic error of this weakly random medium is ~1.5e-3 / T, so the
    mask must be wide for the coupled differences to resolve it.
    """
    return StudyPlan(kind="systematic", ensemble=POISSON_2D, L_values=(160,), T_values=(16, 32, 64, 128, 256),
                     kappa=3.0, h=0.5, n_samples=60, seed=SEED, chunk_size=10)


def gradient_plan() -> StudyPlan:
    """Dyadic gradient differences D_T for T in [32, 512] (solves up to T = 1024)."""
    return StudyPlan(kind="gradient", ensemble=POISSON_2D, L_values=(16,), T_values=(32, 64, 128, 256, 512),
                     kappa=3.0, h=0.5, n_samples=50, seed=SEED, chunk_size=10)


def moments_plan() -> StudyPlan:
    """Corrector moments at the origin for T in [16, 1024]."""
    return StudyPlan(kind="moments", ensemble=POISSON_2D, T_values=(16, 32, 64, 128, 256, 512, 1024),
                     kappa=3.0, h=0.5, n_samples=200, q_list=(1.0, 2.0, 4.0), probe_radius=2.0, seed=SEED,
                     chunk_size=20)


def sensitivity_plan() -> StudyPlan:
    """Oscillation of phi_T(0) under ball perturbations at |z| in {6, 12, 24}."""
    return StudyPlan(kind="sensitivity", ensemble=POISSON_2D, T_values=(64,), kappa=3.0, h=0.5, n_samples=50,
                     ball_radius=2.0, distances=(6, 12, 24), seed=SEED, chunk_size=10)


PLANS = {
    "variance": variance_plan,
    "systematic": systematic_plan,
    "gradient": gradient_plan,
    "moments": moments_plan,
    "sensitivity": sensitivity_plan,
}
