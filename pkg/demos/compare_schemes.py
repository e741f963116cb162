"""Paired run: standard training vs the cyclic drop/reinit scheme.

Both arms start from the same initial weights (same seed, consumed the
same way), so any difference is the training scheme, not the draw.
Scaled down from the package defaults to finish in about two minutes on
a laptop; pass --full for the calibrated 100-epoch configuration.
"""
import sys
import tempfile

from reprune.config import parse_config
from reprune.experiment import do_compare

overrides = {"seed": "0", "checkpoint_every": "0"}
if "--full" not in sys.argv[1:]:
    overrides.update({
        "epochs": "30", "s1": "6", "s2": "3", "n": "2",
        "train_size": "3000", "probe_size": "500", "test_size": "1000",
    })

cfg = parse_config(overrides=overrides)
out = tempfile.mkdtemp(prefix="compare-demo-")
result = do_compare(cfg, out)

print(f"{'':>12s} {'final test':>10s} {'best test':>10s} "
      f"{'gap(last5)':>10s} {'ortho sum':>10s}")
for arm in ("standard", "repr"):
    s = result[arm]
    print(f"{arm:>12s} {s['final_test_acc']:10.4f} {s['best_test_acc']:10.4f} "
          f"{s['gap_last5']:+10.4f} {s['final_ortho_sum']:10.3f}")

delta = result["repr"]["final_test_acc"] - result["standard"]["final_test_acc"]
print(f"\ntest accuracy delta (cyclic - standard): {delta:+.4f}")
print(f"joint per-epoch CSV: {result['joint_csv']}")
