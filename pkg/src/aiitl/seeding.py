"""Named seed derivation; every random stream in a run comes through here."""
import numpy as np


def derive_seed(base, *keys):
    """Deterministic 32-bit seed from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1)[0])
