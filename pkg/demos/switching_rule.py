"""Heterogeneous projected gradient on min 1/2 |x|^2 s.t. x1 + x2 >= 8.

Without the switching rule the iteration with step sizes diag(3/4, 5/4)
stops at [5, 3]; falling back to the identity whenever a step would leave
the feasible set recovers the minimizer [4, 4].
"""

import numpy as np

from hetofo import Halfspace, QuadraticProgram, SolverConfig, StepSizeGroups
from hetofo.solvers import PrimalDualState, iterate


def main():
    qp = QuadraticProgram(np.eye(2), np.zeros(2), 0.0,
                          input_sets=(Halfspace(np.ones(2), 8.0, ">="),))
    start = PrimalDualState(np.array([10.0, 0.0]), np.zeros(0))
    for gamma, switching in (([0.75, 1.25], False), ([1.0, 1.0], False), ([0.75, 1.25], True)):
        g = StepSizeGroups(0.1, np.array(gamma), np.zeros(0))
        x = iterate(qp, SolverConfig(alpha=0.1, switching=switching, max_steps=2000), g,
                    start, primal_only=True).x
        print(f"gamma={gamma}, switching={switching!s:5}: x = {x.round(9)}, "
              f"f = {0.5 * x @ x:.9f}")


if __name__ == "__main__":
    main()
