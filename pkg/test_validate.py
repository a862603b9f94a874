import sys
import tempfile
sys.path.insert(0, '.')
import pandas as pd
from src.data.loaders import resolve_config
from src.harness.experiments import run_eval, run_oracle_check


if __name__ == "__main__":
    out = tempfile.mkdtemp(prefix="mpvic-smoke-")
    config = resolve_config(overrides={"out": out, "oracle": True, "trials": 2, "seed": 0}, steps=20)
    print(f"Running {config.trials} oracle episodes of {config.task_spec['horizon']} steps into {out}")
    result = run_eval(config)
    episodes = pd.read_csv(f"{out}/summary_episodes.csv")
    print(f"episodes: {len(episodes)}, mean |dx|: {episodes['mean_dx_norm'].mean():.4f} m, "
          f"mean K: {episodes['mean_lambda'].mean():.1f} N/m")
    print(f"outputs: {len(result.outputs)}, notes: {result.notes}")
    check = run_oracle_check(config)
    print(f"oracle check passed: {check.passed}")
    print("ALL OK")
