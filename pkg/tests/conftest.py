"""Shared long-running chain evolutions, computed once per test session."""

from types import SimpleNamespace

import pytest

from gpchain import Grid, SolitonParams, soliton_profile
from gpchain.evolution import SolverConfig, evolve
from gpchain.harness.config import validate
from gpchain.harness.experiments import momentum_transfer, monotonicity_report, run_chain, stability_report
from gpchain.modulation import track_modulation

# two-soliton chain with L0 = 60, centered so both solitons stay well inside the box up to t = 40
SPEEDS = (0.6, 1.0)
POSITIONS = (-56.0, 4.0)


def chain_config(n, interval, xnorm, t_end=40.0, speeds=SPEEDS, positions=POSITIONS, direction="forward",
                 kind="chain-stability", seed=7):
    raw = {"kind": kind, "grid": {"n": n, "length": 160.0},
           "chain": {"speeds": list(speeds), "positions": list(positions)},
           "solver": {"t_end": t_end, "output_interval": interval, "direction": direction}}
    if xnorm:
        # generated on the coarse grid and interpolated, so every resolution sees the same field
        raw["perturbation"] = {"type": "smooth-random", "seed": seed, "xnorm": xnorm, "base_n": 1024}
    return validate(raw)


def analyse(cfg):
    run = run_chain(cfg)
    two = run.ref.n > 1
    mono = monotonicity_report(run.traj, run.series, run.grid, run.nu_star, run.L0) if two else None
    transfer = momentum_transfer(run.traj, run.series, run.grid, nu_star=run.nu_star, L0=run.L0) if two else None
    return SimpleNamespace(run=run, mono=mono, transfer=transfer,
                           stability=stability_report(run, mono, transfer, require_converged=False))


@pytest.fixture(scope="session")
def chain_fine():
    return analyse(chain_config(2048, 0.25, 1e-3))


@pytest.fixture(scope="session")
def chain_coarse():
    return analyse(chain_config(1024, 0.5, 1e-3))


@pytest.fixture(scope="session")
def chain_fine_double():
    return analyse(chain_config(2048, 0.25, 2e-3))


@pytest.fixture(scope="session")
def chain_exact():
    return analyse(chain_config(2048, 0.25, 0.0))


@pytest.fixture(scope="session")
def transport_run():
    """Single soliton c = 0.8 carried over t = 20 and tracked."""
    g = Grid(1024, 100.0)
    s0 = soliton_profile(SolitonParams(0.8, -8.0), g)
    traj = evolve(s0, g, SolverConfig(t_end=20.0, output_interval=0.5), keep_snapshots=True)
    series = track_modulation(traj, g, n_solitons=1)
    return SimpleNamespace(grid=g, s0=s0, traj=traj, series=series, c=0.8, a0=-8.0)


# one line per acceptance criterion, echoed in the terminal summary so it survives output capture
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
