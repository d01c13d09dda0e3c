"""Averaged sinusoidal exploration acts as heterogeneous step sizes.

Over a common period T of the sinusoid bank the average of xi xi' is
diagonal with entries a_i^2 T / 2, so averaged two-point zero-order steps
scale each gradient coordinate by its own step size.
"""

import warnings

import numpy as np

from hetofo.estimators import SINUSOID_BANK, ExplorationSignal, common_period, exploration_gamma


def main():
    amps, periods = [0.5, 1.0, 2.0], [1.0, 0.5, 0.25]
    sig = ExplorationSignal(SINUSOID_BANK, amps, periods)
    T = common_period(periods)
    G = exploration_gamma(sig, T)
    np.set_printoptions(precision=6, suppress=True)
    print(f"T = {T}")
    print(G)
    print("a_i^2 T / 2 =", np.asarray(amps) ** 2 * T / 2)
    print("\nwith a non-common window T = 0.3 the average is not diagonal:")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        print(exploration_gamma(sig, 0.3))


if __name__ == "__main__":
    main()
