"""How well do the cheap saliency metrics agree with the greedy oracle?

Trains a small net for a few epochs, computes the true per-filter drop
in probe accuracy (the oracle), then scores every other metric against
it with Pearson and Spearman correlations. Run time about a minute.
"""
import tempfile

from reprune.config import parse_config
from reprune.experiment import do_analyze, do_train

cfg = parse_config(overrides={
    "seed": "3", "epochs": "12", "n": "0", "checkpoint_every": "0",
    "train_size": "4000", "probe_size": "800", "test_size": "1000",
})
out = tempfile.mkdtemp(prefix="agreement-demo-")
run = do_train(cfg, run_dir=out)
print(f"trained {cfg.epochs} epochs, "
      f"final test acc {run.log.column('test_acc')[-1]:.4f}\n")

report = do_analyze(cfg, f"{out}/final.ckpt", out)
print(f"{'metric':>12s} {'pearson':>8s} {'spearman':>9s}   (vs oracle)")
for name, (pe, sp) in report["agreement"].items():
    print(f"{name:>12s} {pe:8.3f} {sp:9.3f}")
print(f"\nartifacts in {out}")
