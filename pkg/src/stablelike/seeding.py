"""Deterministic seed-splitting for Monte Carlo studies.

Every random stream in the package is derived from a master seed through
``numpy.random.SeedSequence`` keyed on (master, study code, cell, replica).
The same tuple always yields the same generator, independent of execution
order, which is what makes study output byte-reproducible.
"""

import numpy as np

# Registry of study codes.  New studies append; codes are never reused.
STUDY_CODES = {
    "generic": 0,
    "sampler": 1,
    "path": 2,
    "krylov": 3,
    "exit": 4,
    "martingale": 5,
    "convergence": 6,
    "gof": 7,
}


def split_seed(master_seed, study="generic", cell=0, replica=0):
    """Return the SeedSequence for one (study, cell, replica) slot."""
    code = STUDY_CODES[study] if isinstance(study, str) else int(study)
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, code, int(cell), int(replica)])


def replica_rng(master_seed, study="generic", cell=0, replica=0):
    """Generator owned by a single replica of a single study cell."""
    return np.random.Generator(np.random.PCG64(split_seed(master_seed, study, cell, replica)))
