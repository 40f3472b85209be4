"""Posterior moments of a conjugate linear inverse problem, sampled by the Euler flow."""

import numpy as np

from follmerlab.config import load_config
from follmerlab.experiments import run_experiment


def main():
    config = load_config("bayes_linear")
    result = run_experiment(config)
    print("sampled mean :", np.round(result.summary["mean"], 4))
    print("oracle mean  :", np.round(result.summary["oracle_mean"], 4))
    for name, ok in result.assertions.items():
        print(f"{name:24s} {'pass' if ok else 'FAIL'}")


if __name__ == "__main__":
    main()
