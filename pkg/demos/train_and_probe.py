"""Pre-train a small MLP with MIO+L2 on separable blobs, then probe it.

A shortened version of the benchmark run (20 epochs instead of 100). The
linear probe is trained on frozen encoder features of the trained model and
of its own random initialisation.

Run: python3 demos/train_and_probe.py
"""

import dataclasses
import tempfile

from miolab.experiment import ExperimentConfig, run_experiment

cfg = ExperimentConfig(seed=0)
cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=20))
with tempfile.TemporaryDirectory() as out:
    res = run_experiment(cfg, out)
print(f"final loss {res['final_loss']:.4f}")
print(f"cosine: positives {res['pos_sim']:.3f}, negatives {res['neg_sim']:.3f}, gap {res['gap']:.3f}")
print(f"probe test accuracy: trained {res['probe_test_accuracy']:.4f}, random {res['random_test_accuracy']:.4f}")
