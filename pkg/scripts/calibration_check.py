"""Exceedance rate of fresh analogous loads over tuned thresholds."""
import argparse

import numpy as np
from scipy.stats import binom

from shmnovelty.engine import EngineConfig, train_baseline, tune_baseline
from shmnovelty.features import window_array
from shmnovelty.gan import GanTrainConfig
from shmnovelty.reliability import mchs_sample_loads
from shmnovelty.synthetic import damage_sequence_spec, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--beta", type=float, default=3.0)
    ap.add_argument("--vl", type=int, default=10)
    ap.add_argument("--fresh", type=int, default=20000)
    ap.add_argument("--epochs", type=int, default=2000)
    args = ap.parse_args()

    stream, _ = generate_synthetic(damage_sequence_spec())
    windows = window_array(stream, 256)
    cfg = EngineConfig(v_l=args.vl, beta=args.beta, mode="static",
                       gan=GanTrainConfig(epochs=args.epochs, generator_hidden=(128, 256),
                                          discriminator_hidden=(128, 64)))
    b = tune_baseline(train_baseline(windows[: cfg.t_l], cfg), cfg)
    fresh = mchs_sample_loads(b.gan, b.one_cg, b.n_channels, b.d_l, args.vl, args.fresh,
                              seed=987654321, system=b.system)
    p = b.system.targets.p_fail_element
    lo, hi = binom.ppf(0.005, args.fresh, p) / args.fresh, binom.ppf(0.995, args.fresh, p) / args.fresh
    print(f"p_fail_element={p:.5f}  99% band [{lo:.5f}, {hi:.5f}]")
    for e in b.system.elements:
        raw, clean = b.system.histograms[e.id]
        rate = np.mean(fresh[e.id].samples > e.threshold)
        print(f"element {e.id}: T={e.threshold:.4g} fresh rate={rate:.5f} "
              f"removed by cleaning={len(raw.samples) - len(clean.samples)}")


if __name__ == "__main__":
    main()
