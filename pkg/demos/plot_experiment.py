"""
Continual-learning comparison
=============================

Pretrain a linear student on task A, adapt on a conflicting task B with each
method, and compare new-task loss, forgetting of task A and rho_16.
"""
from dataclasses import replace

from oplora.experiment import default_config, run_experiment, summarize

cfg = default_config()
# three seeds keep the demo quick; the bundled config runs ten
cfg = replace(cfg, seeds=cfg.seeds[:3])
results = run_experiment(cfg)

###############################################################################
# Per-method medians and mean rho_k over seeds.
summary = summarize(cfg, results)
for label, row in summary["methods"].items():
    print(f"{label:10s} task B {row['median_task_b_loss']:.4f}  "
          f"forgetting {row['median_forgetting']:.4f}  rho_16 {row['mean_rho']['16']:.3g}")
