"""Independent reference solvers used as test oracles."""
import numpy as np


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def orthonormal_design(n, p, rng):
    """Centered columns with X'X/n = I."""
    A = rng.standard_normal((n, p))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(A)
    return Q * np.sqrt(n)


def _b(theta, family):
    return theta**2 / 2 if family == "gaussian" else np.logaddexp(0.0, theta)


def _mean(theta, family):
    return theta if family == "gaussian" else 1.0 / (1.0 + np.exp(-theta))


def prox_grad(X, responses, family, lam_weights, iters=20000, tol=1e-13):
    """FISTA on  sum_k a_k * mean(b(theta) - r_k * theta) + sum_j lam_j |beta_j|.

    ``responses`` is a list of ``(a_k, r_k)`` pairs; the intercept (first
    coordinate) is unpenalized.  Returns ``(intercept, slopes, objective)``.
    """
    n, p = X.shape
    Z = np.column_stack([np.ones(n), X])
    total = sum(a for a, _ in responses)
    curv = 1.0 if family == "gaussian" else 0.25
    L = total * curv * np.linalg.eigvalsh(Z.T @ Z / n).max()
    pen = np.concatenate([[0.0], lam_weights])

    def smooth(beta):
        th = Z @ beta
        return sum(a * np.mean(_b(th, family) - r * th) for a, r in responses)

    def grad(beta):
        th = Z @ beta
        mu = _mean(th, family)
        return sum(a * Z.T @ (mu - r) / n for a, r in responses)

    beta = np.zeros(p + 1)
    yv, t = beta.copy(), 1.0
    for _ in range(iters):
        new = soft_threshold(yv - grad(yv) / L, pen / L)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        yv = new + (t - 1) / t_new * (new - beta)
        if np.max(np.abs(new - beta)) < tol:
            beta = new
            break
        beta, t = new, t_new
    obj = smooth(beta) + float(pen @ np.abs(beta))
    return beta[0], beta[1:], obj


def objective(X, responses, family, lam_weights, b0, slopes):
    th = b0 + X @ slopes
    return sum(a * np.mean(_b(th, family) - r * th) for a, r in responses) + float(
        lam_weights @ np.abs(slopes))
