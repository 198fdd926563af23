"""Meta-datasets on disk and sweeps to CSV.

Externally prepared tasks can replace the generated ones: write them in the
``wfem-gp/v1`` JSON layout with a source/target tag per task.  Sweeps write
one row per (grid value, scheme, seed), ready for any plotting tool.  The
same runs are available from the command line as ``wfem-gp regression ...``.
"""
import tempfile
from pathlib import Path

from wfem_gp.environments import SinusoidEnvParams, build_meta_dataset, load_meta_dataset, save_meta_dataset
from wfem_gp.harness import ExperimentConfig, sweep

out = Path(tempfile.mkdtemp())
env = SinusoidEnvParams()
meta = build_meta_dataset(12, 0.5, env, env.shifted(0.5), 5, 0.1, seed=0)
save_meta_dataset(meta, out / "meta.json")
back = load_meta_dataset(out / "meta.json")
print(f"saved and reloaded {len(back)} tasks ({len(back.source)} source); identical: {back.tasks == meta.tasks}")

cfg = ExperimentConfig(meta_data=str(out / "meta.json"), deviation=0.5, seeds=(0,),
                       schemes=("gp", "pacoh_partial_target", "wfem"), map_iterations=200, n_test_tasks=5,
                       sweep="alpha", grid=(0.25, 0.75))
sweep(cfg, out / "alpha.csv")
print((out / "alpha.csv").read_text())
