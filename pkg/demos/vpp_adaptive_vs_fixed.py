"""Adaptive step sizes against the best fixed step size on the VPP step scenario.

For each seed the stability threshold alpha_bar is bisected on the frozen
problems at the start and after each band step, the best fixed step size is
picked from a grid below it, and the adaptive rule is run from the same
common step size.  Prints iterations-to-band after each step.
"""

import sys

from hetofo import adaptive_vs_fixed
from hetofo.scenario import default_vpp_step_scenario


def main(seeds):
    for seed in seeds:
        res = adaptive_vs_fixed(default_vpp_step_scenario(seed))
        print(f"seed {seed}: alpha_bar={res.alpha_bar:.3g} best fixed alpha={res.alpha_fixed:.3g}")
        print(f"  fixed    iterations-to-band {res.fixed.iterations_to_band}, "
              f"max voltage violation {res.fixed.max_voltage_violation:.3g}")
        print(f"  adaptive iterations-to-band {res.adaptive.iterations_to_band}, "
              f"max voltage violation {res.adaptive.max_voltage_violation:.3g}")
        print(f"  adaptive wins: {res.adaptive_wins}")


if __name__ == "__main__":
    main([int(s) for s in sys.argv[1:]] or [0])
