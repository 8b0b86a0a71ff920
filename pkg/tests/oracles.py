"""Independent reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def all_path_scores(E, T, s, e):
    n, L = E.shape
    for path in itertools.product(range(L), repeat=n):
        score = s[path[0]] + e[path[-1]] + sum(E[t, y] for t, y in enumerate(path))
        score += sum(T[a, b] for a, b in zip(path, path[1:]))
        yield path, float(score)


def brute_log_partition(E, T, s, e):
    scores = [sc for _, sc in all_path_scores(E, T, s, e)]
    m = max(scores)
    return m + math.log(sum(math.exp(x - m) for x in scores))


def brute_argmax(E, T, s, e):
    """Best score and the lexicographically smallest path attaining it."""
    best_path, best = None, -math.inf
    for path, sc in all_path_scores(E, T, s, e):  # product() yields paths in lexicographic order
        if sc > best:
            best_path, best = path, sc
    return list(best_path), best


def stack_bracket_labels(line):
    """Label tokens of a bracketed line by scanning with an explicit stack.

    A token is disfluent when any enclosing group is still in its reparandum phase.
    """
    stack = []
    labels = []
    for item in line.split():
        if item not in ("{", "}"):
            item = item.strip("{}") or item
        if item == "[":
            stack.append("rm")
        elif item == "+":
            stack[-1] = "after"
        elif item in ("{", "}"):
            continue
        elif item == "]":
            stack.pop()
        else:
            labels.append("D" if "rm" in stack else "F")
    return labels


def matmul_loops(A, B):
    n, k = A.shape
    k2, m = B.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = sum(A[i, t] * B[t, j] for t in range(k))
    return out


def finite_diff(f, x, step=1e-5):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * step)
    return g
