"""Independent oracles used to freeze expected values in the test suite.

None of these import from the package under test.
"""

import itertools

import mpmath
import numpy as np


def t_quantile_by_quadrature(p, dof, dps=30):
    """Solve CDF(t) = p for Student's t by integrating the density with mpmath."""
    mpmath.mp.dps = dps
    nu = mpmath.mpf(dof)
    norm = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))

    def density(x):
        return norm * (1 + x * x / nu) ** (-(nu + 1) / 2)

    def cdf(t):
        return mpmath.mpf(1) / 2 + mpmath.quad(density, [0, t])

    return float(mpmath.findroot(lambda t: cdf(t) - p, mpmath.mpf(2)))


def normal_equation_solve(X, y):
    """Least squares by explicit inverse of the Gram matrix."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    gram_inv = np.linalg.inv(X.T @ X)
    beta = gram_inv @ (X.T @ y)
    resid = y - X @ beta
    dof = X.shape[0] - X.shape[1]
    s2 = resid @ resid / dof
    return beta, np.sqrt(s2 * np.diag(gram_inv))


def _undirected_paths(edges, a, b):
    nbrs = {}
    for u, v in edges:
        nbrs.setdefault(u, set()).add(v)
        nbrs.setdefault(v, set()).add(u)

    def walk(path):
        node = path[-1]
        if node == b:
            yield list(path)
            return
        for nxt in sorted(nbrs.get(node, ())):
            if nxt not in path:
                path.append(nxt)
                yield from walk(path)
                path.pop()

    yield from walk([a])


def _descendants(edges, node):
    children = {}
    for u, v in edges:
        children.setdefault(u, set()).add(v)
    seen, stack = set(), [node]
    while stack:
        for c in children.get(stack.pop(), ()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return seen


def d_separated_by_paths(edges, a, b, conditioning):
    """Enumerate every undirected path and apply the blocking rules to each."""
    edges = set(edges)
    conditioning = set(conditioning)
    for path in _undirected_paths(edges, a, b):
        blocked = False
        for prev, mid, nxt in zip(path, path[1:], path[2:]):
            collider = (prev, mid) in edges and (nxt, mid) in edges
            if collider:
                if mid not in conditioning and not (_descendants(edges, mid) & conditioning):
                    blocked = True
                    break
            elif mid in conditioning:
                blocked = True
                break
        if not blocked:
            return False
    return True


def random_dag_edges(rng, n_nodes, p_edge):
    names = [f"V{i}" for i in range(n_nodes)]
    order = list(rng.permutation(n_nodes))
    edges = set()
    for i, j in itertools.combinations(range(n_nodes), 2):
        if rng.random() < p_edge:
            edges.add((names[order[i]], names[order[j]]))
    return names, edges


def fig1_naive_slope(a, b, c, d, sd_x, sd_y, n=2_000_000, seed=2024):
    """Monte-Carlo slope of Y on X for the builtin fig1 linear model with U ~ Z ~ U(0, 1).

    Also returns the closed form b + d*Cov(X,U)/Var(X) for comparison.
    """
    rng = np.random.default_rng(seed)
    z = rng.random(n)
    u = rng.random(n)
    x = a * z + c * u + rng.normal(0, sd_x, n)
    y = b * x + d * u + rng.normal(0, sd_y, n)
    slope = np.cov(x, y)[0, 1] / np.var(x, ddof=1)
    var_x = (a * a + c * c) / 12 + sd_x ** 2
    closed = b + d * (c / 12) / var_x
    return float(slope), float(closed)
