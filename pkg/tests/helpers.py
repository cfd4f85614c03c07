"""Shared test utilities: finite differences and brute-force checkers."""

import numpy as np

FD_H = 1e-5


def fd_grad(f, x, h=FD_H):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy(); xp.flat[i] += h
        xm = x.copy(); xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g.reshape(x.shape)


def rel_err(analytic, numeric):
    """Relative error between gradient arrays, guarded for tiny norms."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def rand_unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def hinge_loss_ref(fx, fp, fn, m):
    """Test-local restatement of the margin hinge on squared distances."""
    dp = float(np.sum((fx - fp) ** 2))
    dn = float(np.sum((fx - fn) ** 2))
    return max(0.0, dp - dn + m)


def all_triplets_satisfied(points, labels, m):
    """Brute force: every (x, p, n) combination has zero hinge loss."""
    n = len(points)
    for i in range(n):
        for j in range(n):
            if i == j or labels[i] != labels[j]:
                continue
            for k in range(n):
                if labels[k] == labels[i]:
                    continue
                if hinge_loss_ref(points[i], points[j], points[k], m) > 0.0:
                    return False
    return True


def max_within_class_sq_dist(points, labels):
    best = 0.0
    for i in range(len(points)):
        for j in range(len(points)):
            if labels[i] == labels[j]:
                best = max(best, float(np.sum((points[i] - points[j]) ** 2)))
    return best


def min_cross_class_dist(points, labels):
    best = np.inf
    for i in range(len(points)):
        for j in range(len(points)):
            if labels[i] != labels[j]:
                best = min(best, float(np.linalg.norm(points[i] - points[j])))
    return best


def kmeans_sse(points, centers, assign):
    return float(sum(np.sum((points[i] - centers[a]) ** 2) for i, a in enumerate(assign)))


def exhaustive_kmeans(points, k):
    """Optimal k-partition by exhaustive enumeration (tiny inputs only)."""
    import itertools

    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    best_cost, best_centers = np.inf, None
    for assign in itertools.product(range(k), repeat=n):
        if len(set(assign)) < k:
            continue
        centers = np.array([points[np.array(assign) == c].mean(axis=0) for c in range(k)])
        cost = kmeans_sse(points, centers, assign)
        if cost < best_cost:
            best_cost, best_centers = cost, centers
    return best_centers, best_cost


def make_samples(features, labels, prefix="s"):
    from tripletboot import Sample

    out = []
    for i, (f, lab) in enumerate(zip(features, labels)):
        out.append(Sample(id=f"{prefix}{i}", features=np.asarray(f, dtype=np.float64), label=lab))
    return out
