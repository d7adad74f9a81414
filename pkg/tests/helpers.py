"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from rlab.nn import Network, grad_input, grad_weights, loss_and_score_grad

FD_STEP = 1e-5
KINK_GAP = 1e-3


def random_net(rng, activation, out_dim=None):
    d = int(rng.integers(2, 11))
    h1 = int(rng.integers(2, 9))
    h2 = int(rng.integers(2, 7))
    C = int(out_dim if out_dim is not None else rng.choice([1, 2, 3]))
    dims = [d, h1, h2, C]
    weights = [rng.normal(0, 1 / np.sqrt(i), (o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(0, 0.3, o) for o in dims[1:]]
    return Network(dims, weights, biases, activation)


def _preacts(net, X):
    pre, h = [], X
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        pre.append(z)
        h = z if l == len(net.weights) - 1 else (np.maximum(z, 0) if net.activation == "relu"
                                                  else np.tanh(z) if net.activation == "tanh" else z)
    return pre


def _smooth(net, X, y, loss):
    """Rows whose relu preactivations and loss kinks are all at least KINK_GAP away."""
    pre = _preacts(net, X)
    ok = np.ones(X.shape[0], dtype=bool)
    if net.activation == "relu":
        for z in pre[:-1]:
            ok &= (np.abs(z) > KINK_GAP).all(axis=1)
    S = pre[-1]
    if loss == "hinge":
        if S.shape[1] == 1:
            m = (2 * y - 1) * S[:, 0]
            ok &= np.abs(1 - m) > KINK_GAP
        else:
            rows = np.arange(len(y))
            others = S.copy()
            others[rows, y] = -np.inf
            top2 = np.sort(others, axis=1)[:, -2:]
            ok &= (top2[:, 1] - top2[:, 0]) > KINK_GAP if S.shape[1] > 2 else True
            ok &= np.abs(1 + top2[:, 1] - S[rows, y]) > KINK_GAP
    return ok


def smooth_batch(rng, net, loss, n=6):
    """Resample points until n of them sit away from every kink."""
    d, C = net.input_dim, net.n_classes
    X = np.empty((0, d))
    y = np.empty(0, dtype=np.int64)
    while X.shape[0] < n:
        Xc = rng.standard_normal((4 * n, d))
        yc = rng.integers(0, C, 4 * n)
        keep = _smooth(net, Xc, yc, loss)
        X = np.vstack([X, Xc[keep]])
        y = np.concatenate([y, yc[keep]])
    return X[:n], y[:n]


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def central_difference_errors(activation, loss, seeds):
    """Worst relative errors (weights, inputs) of analytic vs central differences."""
    worst_w = worst_x = 0.0
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        net = random_net(rng, activation)
        X, y = smooth_batch(rng, net, loss)

        _, grads = grad_weights(net, X, y, loss)
        analytic, numeric = [], []
        for l in range(len(net.weights)):
            for P, G in ((net.weights[l], grads[l][0]), (net.biases[l], grads[l][1])):
                num = np.zeros_like(P)
                for idx in np.ndindex(P.shape):
                    old = P[idx]
                    P[idx] = old + FD_STEP
                    up = loss_and_score_grad(net.scores(X), y, loss)[0]
                    P[idx] = old - FD_STEP
                    dn = loss_and_score_grad(net.scores(X), y, loss)[0]
                    P[idx] = old
                    num[idx] = (up - dn) / (2 * FD_STEP)
                analytic.append(G.ravel())
                numeric.append(num.ravel())
        # relative to the whole parameter gradient, so exact zeros compare cleanly
        worst_w = max(worst_w, rel_err(np.concatenate(analytic), np.concatenate(numeric)))

        v = rng.standard_normal(net.output_dim)
        for x in X:
            g = grad_input(net, x, v)
            num = np.zeros_like(x)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = FD_STEP
                num[i] = (net.scores((x + e)[None])[0] @ v - net.scores((x - e)[None])[0] @ v) / (2 * FD_STEP)
            worst_x = max(worst_x, rel_err(g, num))
    return worst_w, worst_x
