"""Central finite-difference gradient harness shared by unit and acceptance tests.

Coordinates whose perturbation flips any discrete choice (argmin, hinge
activity, coverage sets, soft-assignment winner, anchor eligibility) sit on
a non-smooth boundary and are excluded, as are whole instances whose
boundary margins are tighter than the exclusion radius allows.
"""

from __future__ import annotations

import numpy as np

from grlc import HyperParams, synth_mixture
from grlc.training import flatten_grads, total_loss, total_loss_and_grads

H = 1e-4
BOUNDARY_MARGIN = 1e-3
# relative error degenerates as the gradient vanishes: below this floor the
# check is effectively absolute (agreement within floor * tolerance = 1e-8)
DENOM_FLOOR = 1e-4


def make_fd_instance(seed: int, n=64, d=8, K=4):
    """Random instance with all three loss terms active and moderate scales.

    Gaussians sit near the mixture components with factors sized so points
    straddle the tau ball: some covered (confidence term live), some outside
    (hinge live), and anchors see >= 2 assigned points each. Draws are
    re-rolled until every boundary margin clears the finite-difference
    exclusion radius, so no point sits within 1e-3 of a hinge/argmin kink.
    """
    from grlc.core import GaussianSet

    hp = HyperParams(K_init=K, tau=3.0)
    for attempt in range(50):
        sub = seed * 1000 + attempt
        ds = synth_mixture(n, d, K - 1, 0.35, seed=sub)
        r = np.random.default_rng(sub + 500)
        # one Gaussian per component plus a sibling near component 0, so some
        # coverage sets have two members and the soft-assignment path is live
        mu = np.vstack([ds.component_means,
                        ds.component_means[0] + r.normal(scale=0.15, size=d)])
        mu += r.normal(scale=0.08, size=(K, d))
        log_diag = np.log(0.2) + r.normal(scale=0.25, size=(K, d))
        lower = np.tril(r.normal(scale=0.05, size=(K, d, d)), k=-1)
        G = GaussianSet(mu=mu, log_diag=log_diag, lower=lower)
        X = ds.vectors.as_f64()
        _, struct = total_loss(X, G, hp)
        margin = min(struct.margins.get(key, np.inf)
                     for key in ("hinge", "coverage", "argmin_gap", "argmax_gap"))
        if margin >= 3.0 * BOUNDARY_MARGIN:
            return X, G, hp
    raise RuntimeError(f"no well-margined instance found for seed {seed}")


def gradient_check(X, G, hp, h=H):
    """Per-coordinate relative error between analytic and central differences.

    Returns (errors, checked, skipped); a coordinate is skipped when either
    perturbed evaluation flips any discrete choice, which is exactly the
    within-h-of-a-boundary condition the tolerance excludes.
    """
    _, grads = total_loss_and_grads(X, G, hp)
    _, struct0 = total_loss(X, G, hp)
    g_flat = flatten_grads(G, grads)
    theta = G.get_param_vector()
    errors = np.full(theta.size, np.nan)
    skipped = 0
    for i in range(theta.size):
        vals, structs = [], []
        for sign in (+1.0, -1.0):
            t = theta.copy()
            t[i] += sign * h
            G.set_param_vector(t)
            lb, st = total_loss(X, G, hp)
            vals.append(lb.total)
            structs.append(st)
        G.set_param_vector(theta)
        if not (structs[0].same_as(struct0) and structs[1].same_as(struct0)):
            skipped += 1
            continue
        fd = (vals[0] - vals[1]) / (2.0 * h)
        denom = max(abs(fd), abs(g_flat[i]), DENOM_FLOOR)
        errors[i] = abs(fd - g_flat[i]) / denom
    checked = int(np.isfinite(errors).sum())
    return errors[np.isfinite(errors)], checked, skipped
