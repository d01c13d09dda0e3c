"""Heterogeneous scaling of a strongly convex quadratic can lose monotonicity.

For W = [[2, -1], [-1, 2]] the symmetric part of diag(delta, 1) W is
positive definite up to delta = 13 and indefinite from delta = 14 on.  The
smallest regularization p that restores strong monotonicity is printed
for each delta.
"""

import numpy as np

from hetofo import min_regularization, monotonicity_matrix


def main():
    W = np.array([[2.0, -1.0], [-1.0, 2.0]])
    for delta in (1, 5, 13, 14, 20, 50):
        V = monotonicity_matrix(W, [delta, 1.0])
        p, eta, lam_min = min_regularization(V)
        verdict = "positive definite" if lam_min > 0 else "indefinite"
        print(f"delta={delta:3d}: lambda_min={lam_min:+.4f} ({verdict}), p={p:.4f}, eta={eta:.4g}")


if __name__ == "__main__":
    main()
