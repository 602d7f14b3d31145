import numpy as np

from mttppi import model
from mttppi.embedder import EmbeddingTable
from mttppi.seqio import InteractionExample


def random_instance(seed, d=None, hid=None, n_vh=8, n_hh=8, alpha=None):
    """Random model plus VH/HH batches for gradient and loss checks."""
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 9))
    hid = hid or int(rng.integers(1, 5))
    n_p, n_h = 5, 7
    p_tab = EmbeddingTable(d, {f"v{i}": rng.normal(size=d) for i in range(n_p)})
    h_tab = EmbeddingTable(d, {f"h{i}": rng.normal(size=d) for i in range(n_h)})
    if alpha is None:
        alpha = float(rng.choice([1e-3, 1e-2, 1e-1, 1.0]))
    cfg = model.TrainConfig(alpha=alpha, hid=hid, seed=seed)
    state = model.init_model(cfg, p_tab, h_tab)
    # float64 copies, perturbed so biases are exercised too
    for k in ("theta_b", "phi_b"):
        state.params[k] = rng.normal(scale=0.5, size=hid)
    for k in ("w1", "w2"):
        state.params[k] = rng.normal(scale=1.5, size=hid)
    vh = [InteractionExample(f"v{rng.integers(n_p)}", f"h{rng.integers(n_h)}", float(rng.integers(2)))
          for _ in range(n_vh)]
    hh = [InteractionExample(f"h{rng.integers(n_h)}", f"h{rng.integers(n_h)}", float(rng.random()))
          for _ in range(n_hh)]
    return state, vh, hh
