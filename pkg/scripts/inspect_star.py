"""Radial histogram of a densely sampled 5-arm star, printed as a text bar chart."""

import numpy as np

from bdm import toydata as td


def main():
    y = td.gen_shape(td.ShapeSpec("star", star_arms=5), 20000, np.random.default_rng(2), jitter=0.0)
    r = np.linalg.norm(y, axis=1)
    h, edges = np.histogram(r, bins=16)
    for count, lo, hi in zip(h, edges[:-1], edges[1:]):
        print(f"{lo:.3f}-{hi:.3f} {'#' * int(60 * count / h.max())}")


if __name__ == "__main__":
    main()
