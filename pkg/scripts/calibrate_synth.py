"""Measure source-only and adapted accuracy on the synthetic benchmark.

Usage: python scripts/calibrate_synth.py [--seeds 0 1 2] [--adapt] [--target-epochs N]
"""

import argparse
import json
import logging
import time

import numpy as np

from sdalr.signals import DomainShift, SynthConfig, synth_benchmark
from sdalr.training import AdaptationConfig, adapt_target, evaluate, train_source


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--adapt", action="store_true")
    ap.add_argument("--target-epochs", type=int, default=20)
    ap.add_argument("--synth", type=json.loads, default={})
    ap.add_argument("--shift", type=json.loads, default={"speed_factor": 1.35, "noise_factor": 3.0})
    ap.add_argument("--cfg", type=json.loads, default={})
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for seed in args.seeds:
        src, tgt = synth_benchmark(SynthConfig(**args.synth), DomainShift(**args.shift), seed)
        cfg = AdaptationConfig(seed=seed, target_epochs=args.target_epochs, **args.cfg)
        t = time.perf_counter()
        model = train_source(src, cfg)
        so = evaluate(model, tgt)
        print(f"seed {seed}: val {model.meta['history']['val_acc'][-1]:.3f} "
              f"source-only {so.accuracy:.3f} ({time.perf_counter() - t:.0f}s)")
        print(so.confusion)
        if args.adapt:
            t = time.perf_counter()
            _, rec = adapt_target(model, tgt, cfg)
            print(f"seed {seed}: adapted {rec.final_accuracy:.3f} gain {rec.final_accuracy - so.accuracy:+.3f} "
                  f"({time.perf_counter() - t:.0f}s)")
            print(np.array(rec.final["confusion"]))


if __name__ == "__main__":
    main()
