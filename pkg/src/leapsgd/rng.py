"""Counter-based random streams keyed by (master_seed, *stream ids)."""
import numpy as np

# stream ids used by the trainer
INIT = 0
TRAIN_X = 1
TRAIN_NOISE = 2
EVAL = 3
MC = 4


def stream(seed, *ids):
    """Philox generator keyed by ``(seed, *ids)``.

    Two calls with equal keys produce identical streams; streams with
    different keys are independent, so parallel sweep cells do not depend
    on scheduling order.
    """
    words = [int(seed)] + [int(i) for i in ids]
    if any(w < 0 for w in words):
        raise ValueError("seed and stream ids must be non-negative")
    key = np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
