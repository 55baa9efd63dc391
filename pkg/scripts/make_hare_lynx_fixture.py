"""Write the synthetic hare-lynx-format fixture used by the Sim2Real smoke test.

The real Hudson's Bay series is not bundled. This series integrates the
deterministic Lotka-Volterra equations with the simulator's rates, samples
one point per year for 91 years, and applies log-normal observation noise,
so it has the same CSV layout and a comparable oscillating shape.
"""

import argparse

import numpy as np
from scipy.integrate import solve_ivp

from npsa.datagen import write_hare_lynx
from npsa.experiments import default_hare_lynx_path


def lv_rhs(_t, s, theta):
    pred, prey = s
    t1, t2, t3, t4 = theta
    return [t1 * pred * prey - t2 * pred, t3 * prey - t4 * pred * prey]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=default_hare_lynx_path())
    ap.add_argument("--seed", type=int, default=1845)
    ap.add_argument("--years", type=int, default=91)
    args = ap.parse_args()
    theta = (0.01, 0.5, 1.0, 0.01)
    dt = 30.0 / 99
    t_eval = np.arange(args.years) * dt
    sol = solve_ivp(lv_rhs, (0.0, t_eval[-1]), [70.0, 120.0], args=(theta,), t_eval=t_eval,
                    rtol=1e-9, atol=1e-9)
    rng = np.random.default_rng(args.seed)
    noise = np.exp(0.25 * rng.standard_normal((2, args.years)))
    lynx, hare = np.round(sol.y * noise, 1)
    years = 1845 + np.arange(args.years)
    write_hare_lynx(args.out, years, hare, lynx)


if __name__ == "__main__":
    main()
