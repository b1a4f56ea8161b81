"""Run corpora shared by the acceptance and calibration tests.

Each datum is a staircase built by chaining the wave curves of all families
from a reference state.  Most strengths have the compressive sign of their
family, so that waves of one family catch up with each other and merge;
the others open rarefactions that later cancel.  The calibration corpus fixes
the frozen constants, the acceptance corpus (other seeds) is only ever
checked against them.
"""
import numpy as np

from glimmlab.errors import DomainExitError
from glimmlab.flux_model import get_model
from glimmlab.glimm import GlimmConfig
from glimmlab.riemann import composite_map

# reference state, strength amplitude, compressive sign per family, jump
# spacing, horizon, eps; system waves have small speed gaps, so their jumps
# sit one cell apart
MODEL_SETTINGS = {
    "burgers": ([0.5], 0.4, (-1,), 1 / 16, 2.0, 1 / 32),
    "cubic": ([0.5], 0.3, (-1,), 1 / 16, 2.0, 1 / 32),
    "psystem": ([1.0, 0.2], 0.05, (-1, 1), 1 / 32, 2.0, 1 / 32),
    "temple": ([0.25, 0.25], 0.045, (-1, -1), 1 / 32, 2.0, 1 / 32),
    "linear": ([0.0, 0.0], 0.2, (-1, -1), 1 / 16, 1.0, 1 / 32),
}

CALIBRATION_SEEDS = (101, 102, 103, 104)
ACCEPTANCE_SEEDS = (1, 2, 3)


def random_config(model: str, seed: int) -> GlimmConfig:
    ref, amp, compressive, dx, horizon, eps = MODEL_SETTINGS[model]
    rng = np.random.default_rng(seed)
    m = get_model(model)
    nb = int(rng.integers(3, 6))
    states = [np.asarray(ref, dtype=float)]
    while len(states) <= nb:
        flip = np.where(rng.random(m.n) < 0.25, -1.0, 1.0)
        s = np.asarray(compressive) * flip * amp * rng.uniform(0.3, 1.0, m.n)
        try:
            states.append(composite_map(m, states[-1], s)[-1].uR)
        except DomainExitError:
            continue
    breaks = (np.arange(nb) * dx).tolist()
    datum = {"kind": "pieces", "breaks": breaks, "states": [u.tolist() for u in states]}
    return GlimmConfig(model=model, eps=eps, horizon=horizon, datum=datum)


def corpus(seeds, models=tuple(MODEL_SETTINGS)) -> list:
    return [random_config(m, s) for m in models for s in seeds]


def calibration_corpus(models=tuple(MODEL_SETTINGS)) -> list:
    return corpus(CALIBRATION_SEEDS, models)


def acceptance_corpus(models=tuple(MODEL_SETTINGS)) -> list:
    return corpus(ACCEPTANCE_SEEDS, models)
