"""Sample a 2D Gaussian mixture with the three flows and compare them by exact W2."""

from follmerlab.config import load_target
from follmerlab.experiments import target_M0
from follmerlab.integrate import log_uniform_schedule, make_field, run_flow, uniform_schedule
from follmerlab.metrics import mc_floor, w2_exact
from follmerlab.targets import sample_target_oracle

N, PARTICLES = 64, 1024


def main():
    target = load_target("mix2d")
    oracle = sample_target_oracle(target, PARTICLES, seed=7).points
    M0 = target_M0(target)
    print(f"Monte Carlo floor: {mc_floor(M0, PARTICLES):.4f}")
    for flow in ("follmer", "rectified", "prob-ode"):
        field_ = make_field(target, flow)
        grid = log_uniform_schedule(N) if flow == "prob-ode" else uniform_schedule(N)
        run = run_flow(field_, flow, grid, n=PARTICLES, seed=0)
        print(f"{flow:10s} W2 to oracle = {w2_exact(run.points, oracle).W2:.4f}"
              f"  ({run.wall_clock:.2f}s)")


if __name__ == "__main__":
    main()
