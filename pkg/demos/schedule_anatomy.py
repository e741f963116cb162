"""Print the phase layout of a cyclic drop/reinit schedule.

No training happens here. The point is to see how s1/s2/n carve up an
epoch budget, and what the scheduler does at each boundary of a real
(tiny) run: rank, prune, retrain, reinitialize.
"""
from reprune.config import parse_config
from reprune.experiment import do_train
from reprune.scheduler import ReprSchedule, phase_timeline

BUDGET = 100

for s1, s2, n in [(20, 10, 3), (20, 10, 2), (5, 3, 6), (20, 10, 0)]:
    sched = ReprSchedule(s1=s1, s2=s2, n=n)
    spans = phase_timeline(sched, BUDGET)
    print(f"s1={s1} s2={s2} n={n} over {BUDGET} epochs:")
    for phase, iteration, start, end in spans:
        bar = "#" * (end - start)
        print(f"  {phase:4s} it={iteration}  [{start:3d},{end:3d})  {bar}")
    print()

# Now a tiny actual run so the event log shows the boundaries firing.
cfg = parse_config(overrides={
    "width": "4", "epochs": "8", "s1": "2", "s2": "1", "n": "2",
    "train_size": "300", "probe_size": "60", "test_size": "100",
    "synth_size": "6", "batch_size": "50", "checkpoint_every": "0",
})
result = do_train(cfg, run_dir=None)
print("event log of an 8-epoch run (s1=2, s2=1, n=2):")
for epoch, message in result.cycle.events:
    print(f"  epoch {epoch:2d}  {message}")
