import numpy as np
import pytest

from robust_hnoma.scenario import GenConfig, Scenario, generate_scenario
from robust_hnoma.uncertainty import PolySet

# first structurally feasible seed of the default configuration
FEASIBLE_SEED = 16


@pytest.fixture(scope="session")
def default_scenario():
    return generate_scenario(GenConfig(rng_seed=FEASIBLE_SEED))


def box_set(L, lo=1.0, hi=5.0):
    """Identity-matrix box [-lo, hi]^L."""
    return PolySet(np.eye(L), np.eye(L), np.full(L, lo), np.full(L, hi))


def single_user(h_gain=1e-6, alpha=(0.0, 0.0, 0.0), poly=None, rho=0.0, noise_var=1e-9):
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    L = alpha.shape[1]
    return Scenario(h_gain=np.array([h_gain]), g_gain=np.eye(1), alpha=alpha,
                    kappa=np.zeros((1, 1, L)), poly=[poly or box_set(L)], rho=rho,
                    sic=np.zeros((1, 1)), noise_var=noise_var)


def two_users(h=(2e-6, 1e-6), g10=0.5, sic00=2e-8, alpha=None, kappa=None, rho=0.0, L=2):
    """Small hand instance; shifts default to zero (nominal channels)."""
    al = np.zeros((2, L)) if alpha is None else np.asarray(alpha, dtype=float)
    ka = np.zeros((2, 2, L))
    if kappa is not None:
        ka[1, 0] = kappa
    sic = np.zeros((2, 2))
    sic[0, 0] = sic00
    return Scenario(h_gain=np.array(h), g_gain=np.array([[1.0, 0.0], [g10, 1.0]]), alpha=al, kappa=ka,
                    poly=[box_set(L), box_set(L)], rho=rho, sic=sic, noise_var=1e-9)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
