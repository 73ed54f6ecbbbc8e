"""A 1-D convolution is a graph convolution on a weighted series digraph.

Builds the digraph for a small kernel, runs one linear message-passing step
over out-neighbours, restricts to the first nodes and compares with the
direct convolution.
"""
import numpy as np

from tsdigraph import autograd as ag
from tsdigraph.digraph import adjacency_matrix
from tsdigraph.graphconv import dilate_kernel, lemma1_build, lemma1_check, lemma1_gconv_path


def main():
    kernel = np.array([2.0, 3.0])
    x = np.array([1.0, -1.0, 0.5, 2.0, 0.0])
    g, h_nodes, _ = lemma1_build(kernel, len(x))
    print("adjacency of the kernel digraph:")
    print(adjacency_matrix(g))
    print("graph path :", lemma1_gconv_path(kernel, x))
    direct = ag.conv1d(x[:, None], kernel[None, None, :], causal=False).data[:, 0]
    print("convolution:", direct)

    # a dilated kernel is the same kernel with zeros in between
    k3 = np.array([1.0, -2.0, 0.5])
    print("dilation 2 as a plain kernel:", dilate_kernel(k3, 2))
    rng = np.random.default_rng(0)
    err = max(lemma1_check(rng.normal(size=3), rng.normal(size=40), d) for d in (1, 2, 3))
    print(f"worst deviation over dilations 1..3: {err:.1e}")


if __name__ == "__main__":
    main()
