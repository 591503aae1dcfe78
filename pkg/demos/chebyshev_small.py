"""Vanilla reuploading model vs a K=5 mixture on noisy T_2 data (one seed, fewer epochs)."""
import sys

from dqnn.train import make_config, run_experiment

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 40
led = run_experiment(make_config("chebyshev-overfit", {"epochs": epochs}))
for m in led.models():
    r = led.final(m)
    print(f"{m:8s} train={r['train_loss']:.3f} test={r['test_loss']:.3f} gap={r['gap']:+.3f}")
