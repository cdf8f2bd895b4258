"""Objective, analytic gradients and the SGD loop that shapes the Gaussians.

Three loss terms: a hinge on the smallest whitened distance pushes Gaussians
to cover every point within tau; a confidence term rewards dominant
soft-assignments among covering Gaussians; an anchor term ties each Gaussian
to the empirical mean/covariance of the points it wins. Gradients are
derived by hand (f64) so they can be validated against central finite
differences; min/argmin/max use the subgradient of the selected branch with
ties broken toward the lowest Gaussian id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import refinement
from .core import (GaussianSet, HyperParams, VectorSet, materialize_cholesky_all,
                   solve_lower, solve_lower_t)
from .init import init_gaussians

EARLY_STOP_WINDOW = 10
EARLY_STOP_RTOL = 1e-4


class UncoveredPointError(ValueError):
    """Raised when a soft assignment is requested for an empty coverage set."""


class TrainingDivergenceError(RuntimeError):
    """Loss or gradient became non-finite during training."""


# ---------------------------------------------------------------------------
# Schedules


@dataclass
class LRSchedule:
    """Linear warm-up to the peak, then exponential decay toward the final rate."""

    start: float
    peak: float
    final: float
    warmup_epochs: int
    total_epochs: int


def lr_at(schedule: LRSchedule, epoch: int) -> float:
    """Learning rate for a 0-based epoch index."""
    if not (0 <= epoch < schedule.total_epochs):
        raise ValueError(f"epoch {epoch} outside schedule of {schedule.total_epochs}")
    w = schedule.warmup_epochs
    if epoch <= w:
        if w == 0:
            return schedule.peak
        return schedule.start + (schedule.peak - schedule.start) * epoch / w
    frac = (epoch - w) / (schedule.total_epochs - w)
    return schedule.peak * (schedule.final / schedule.peak) ** frac


def schedules_from_hp(hp: HyperParams) -> tuple[LRSchedule, LRSchedule]:
    mu = LRSchedule(hp.lr_mu_start, hp.lr_mu_peak, hp.lr_mu_final,
                    hp.warmup_epochs, hp.epochs_max)
    chol = LRSchedule(hp.lr_chol_start, hp.lr_chol_peak, hp.lr_chol_final,
                      hp.warmup_epochs, hp.epochs_max)
    return mu, chol


# ---------------------------------------------------------------------------
# Loss bookkeeping


@dataclass
class LossBreakdown:
    l_div: float
    l_cov: float
    l_anchor: float
    total: float
    epoch: int = -1


@dataclass
class ParamGrads:
    """Gradients aligned with the stacked GaussianSet arrays (inactive rows 0)."""

    mu: np.ndarray
    log_diag: np.ndarray
    lower: np.ndarray

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.log_diag))
                    and np.all(np.isfinite(self.lower)))


@dataclass
class BatchStructure:
    """The discrete choices made while evaluating one batch.

    Finite-difference checks compare these across perturbed evaluations:
    a coordinate whose perturbation flips any of them sits on a
    hinge/argmin/coverage boundary and is excluded.
    """

    argmin_id: np.ndarray          # (B,) nearest Gaussian per point
    hinge_active: np.ndarray       # (B,) bool, point outside tau
    cover: np.ndarray              # (B, K) bool coverage sets
    argmax_id: np.ndarray          # (B,) winning soft-assignment id, -1 if uncovered
    anchor_active: np.ndarray      # (K,) bool, Gaussian had >= 2 assigned points
    margins: dict = field(default_factory=dict)

    def same_as(self, other: "BatchStructure") -> bool:
        return (np.array_equal(self.argmin_id, other.argmin_id)
                and np.array_equal(self.hinge_active, other.hinge_active)
                and np.array_equal(self.cover, other.cover)
                and np.array_equal(self.argmax_id, other.argmax_id)
                and np.array_equal(self.anchor_active, other.anchor_active))


# ---------------------------------------------------------------------------
# Pointwise operations


def coverage_set(x: np.ndarray, G: GaussianSet, tau: float) -> np.ndarray:
    """Ids of active Gaussians whose whitened distance to x is <= tau."""
    from .core import mahalanobis_batch

    delta = mahalanobis_batch(np.asarray(x, dtype=np.float64)[None, :], G)[0]
    return np.flatnonzero(delta <= tau)


def soft_assign(x: np.ndarray, G: GaussianSet, member_ids: np.ndarray,
                eps_num: float) -> np.ndarray:
    """Euclidean soft-assignment probabilities over a coverage set.

    Stabilized with max-subtraction; each probability carries a +eps_num
    floor, so the sum lands in [1, 1 + |M| * eps_num].
    """
    member_ids = np.asarray(member_ids, dtype=int)
    if member_ids.size == 0:
        raise UncoveredPointError("point has an empty coverage set")
    x = np.asarray(x, dtype=np.float64)
    e = np.sqrt(((G.mu[member_ids] - x) ** 2).sum(axis=1))
    z = -e
    z -= z.max()
    w = np.exp(z)
    return w / w.sum() + eps_num


# ---------------------------------------------------------------------------
# Batch losses

def _as_batch(Xb) -> np.ndarray:
    data = Xb.as_f64() if isinstance(Xb, VectorSet) else np.asarray(Xb, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("batch must be a nonempty (B, d) array")
    return data


def loss_div(Xb, G: GaussianSet, tau: float) -> float:
    """Mean hinge of (closest whitened distance - tau) over the batch."""
    from .core import mahalanobis_batch

    delta = mahalanobis_batch(_as_batch(Xb), G)
    return float(np.maximum(delta.min(axis=1) - tau, 0.0).mean())


def _euclid_to_means(Xb: np.ndarray, G: GaussianSet) -> np.ndarray:
    d2 = (np.einsum("ij,ij->i", Xb, Xb)[:, None]
          + np.einsum("ij,ij->i", G.mu, G.mu)[None, :]
          - 2.0 * (Xb @ G.mu.T))
    return np.sqrt(np.maximum(d2, 0.0))


def _soft_assign_matrix(e: np.ndarray, cover: np.ndarray) -> np.ndarray:
    """Row-stable softmax of -e restricted to each row's coverage set."""
    z = np.where(cover, -e, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    covered = np.isfinite(zmax[:, 0])
    w = np.zeros_like(e)
    w[covered] = np.exp(z[covered] - zmax[covered])
    sums = w.sum(axis=1, keepdims=True)
    sums[~covered] = 1.0
    return w / sums


def loss_cov(Xb, G: GaussianSet, tau: float, eps_num: float) -> float:
    """One minus the mean winning soft-assignment over covered points."""
    from .core import mahalanobis_batch

    data = _as_batch(Xb)
    delta = mahalanobis_batch(data, G)
    cover = delta <= tau
    covered = cover.any(axis=1)
    if not covered.any():
        return 0.0
    s = _soft_assign_matrix(_euclid_to_means(data, G), cover)
    p_max = s[covered].max(axis=1) + eps_num
    return float(1.0 - p_max.mean())


def loss_anchor(Xb, G: GaussianSet, alpha_anchor: float) -> float:
    """Mismatch between each Gaussian and the empirical stats of its points."""
    from .core import mahalanobis_batch

    data = _as_batch(Xb)
    delta = mahalanobis_batch(data, G)
    assign = np.argmin(delta, axis=1)
    Ls = materialize_cholesky_all(G)
    active = G.active_ids()
    total = 0.0
    for j in active:
        members = data[assign == j]
        if members.shape[0] < 2:
            continue
        mu_hat = members.mean(axis=0)
        diff = members - mu_hat
        sigma_hat = diff.T @ diff / members.shape[0]
        sigma = Ls[j] @ Ls[j].T
        total += float(((G.mu[j] - mu_hat) ** 2).sum())
        total += alpha_anchor * float(((sigma - sigma_hat) ** 2).sum())
    return total / (G.d * len(active))


# ---------------------------------------------------------------------------
# Total loss with analytic gradients


def _evaluate(Xb: np.ndarray, G: GaussianSet, hp: HyperParams, with_grads: bool):
    from .core import mahalanobis_batch

    B, d = Xb.shape
    K = G.K
    active = G.active_ids()
    Ls = materialize_cholesky_all(G)
    delta = mahalanobis_batch(Xb, G)

    # discrete structure shared by all three terms
    argmin_id = np.argmin(delta, axis=1)
    delta_min = delta[np.arange(B), argmin_id]
    hinge_active = delta_min > hp.tau
    cover = delta <= hp.tau
    covered = cover.any(axis=1)

    grads = ParamGrads(np.zeros((K, d)), np.zeros((K, d)), np.zeros((K, d, d)))
    strict_lower_mask = np.tril(np.ones((d, d), dtype=bool), k=-1)

    def add_factor_grad(j: int, g_full: np.ndarray) -> None:
        grads.lower[j] += np.where(strict_lower_mask, g_full, 0.0)
        grads.log_diag[j] += np.diag(g_full) * np.diag(Ls[j])

    # -- divergence: hinge on the closest whitened distance
    l_div = float(np.maximum(delta_min - hp.tau, 0.0).mean())
    if with_grads and hinge_active.any():
        coeff = hp.lambda_div / B
        for j in active:
            rows = np.flatnonzero(hinge_active & (argmin_id == j))
            if rows.size == 0:
                continue
            U = Xb[rows] - G.mu[j]
            Y = solve_lower(Ls[j], U)
            dj = delta[rows, j][:, None]
            Z = solve_lower_t(Ls[j], Y)
            grads.mu[j] += coeff * -(Z / dj).sum(axis=0)
            add_factor_grad(j, coeff * -(Z / dj).T @ Y)

    # -- coverage confidence: winning soft-assignment among covering Gaussians
    e = _euclid_to_means(Xb, G)
    s = _soft_assign_matrix(e, cover)
    argmax_id = np.full(B, -1, dtype=int)
    n_cov = int(covered.sum())
    if n_cov:
        argmax_id[covered] = np.argmax(np.where(cover[covered], s[covered], -1.0), axis=1)
        p_max = s[covered, argmax_id[covered]] + hp.eps_num
        l_cov = float(1.0 - p_max.mean())
    else:
        l_cov = 0.0
    if with_grads and n_cov:
        rows = np.flatnonzero(covered)
        s_star = s[rows, argmax_id[rows]]
        onehot = np.zeros((rows.size, K))
        onehot[np.arange(rows.size), argmax_id[rows]] = 1.0
        # dL/de for each covering Gaussian
        g_e = -(hp.lambda_cov / n_cov) * s_star[:, None] * (s[rows] - onehot)
        g_e = np.where(cover[rows], g_e, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            W = np.where(e[rows] > 0, g_e / e[rows], 0.0)
        grads.mu += W.sum(axis=0)[:, None] * G.mu - W.T @ Xb[rows]

    # -- anchor: empirical stats of hard-assigned points, treated as constants
    l_anchor = 0.0
    anchor_active = np.zeros(K, dtype=bool)
    k_act = len(active)
    for j in active:
        members = Xb[argmin_id == j]
        if members.shape[0] < 2:
            continue
        anchor_active[j] = True
        mu_hat = members.mean(axis=0)
        diff = members - mu_hat
        sigma_hat = diff.T @ diff / members.shape[0]
        D = Ls[j] @ Ls[j].T - sigma_hat
        l_anchor += float(((G.mu[j] - mu_hat) ** 2).sum()) + hp.alpha_anchor * float((D * D).sum())
        if with_grads:
            norm = hp.lambda_anchor / (d * k_act)
            grads.mu[j] += norm * 2.0 * (G.mu[j] - mu_hat)
            add_factor_grad(j, norm * hp.alpha_anchor * 4.0 * D @ Ls[j])
    l_anchor /= d * k_act

    total = hp.lambda_div * l_div + hp.lambda_cov * l_cov + hp.lambda_anchor * l_anchor
    breakdown = LossBreakdown(l_div=l_div, l_cov=l_cov, l_anchor=l_anchor, total=total)

    # boundary margins, used to vet finite-difference instances
    with np.errstate(invalid="ignore"):
        part = np.partition(np.where(np.isfinite(delta), delta, np.inf), 1, axis=1) \
            if K >= 2 else None
    margins = {
        "hinge": float(np.abs(delta_min - hp.tau).min()),
        "coverage": float(np.abs(delta[:, active] - hp.tau).min()),
        "argmin_gap": float((part[:, 1] - part[:, 0]).min()) if part is not None else np.inf,
    }
    if n_cov:
        rows = np.flatnonzero(covered)
        s_masked = np.where(cover[rows], s[rows], -np.inf)
        top2 = -np.partition(-s_masked, 1, axis=1)[:, :2] if K >= 2 else None
        if top2 is not None:
            gaps = top2[:, 0] - top2[:, 1]
            finite = np.isfinite(gaps)
            margins["argmax_gap"] = float(gaps[finite].min()) if finite.any() else np.inf
    structure = BatchStructure(argmin_id=argmin_id, hinge_active=hinge_active,
                               cover=cover, argmax_id=argmax_id,
                               anchor_active=anchor_active, margins=margins)
    return breakdown, grads, structure


def total_loss(Xb, G: GaussianSet, hp: HyperParams) -> tuple[LossBreakdown, BatchStructure]:
    """Loss breakdown plus the discrete structure of the evaluation."""
    breakdown, _, structure = _evaluate(_as_batch(Xb), G, hp, with_grads=False)
    return breakdown, structure


def total_loss_and_grads(Xb, G: GaussianSet,
                         hp: HyperParams) -> tuple[LossBreakdown, ParamGrads]:
    """Weighted loss and its analytic gradients for every active Gaussian."""
    breakdown, grads, _ = _evaluate(_as_batch(Xb), G, hp, with_grads=True)
    if not grads.all_finite():
        raise TrainingDivergenceError("non-finite gradient in batch evaluation")
    return breakdown, grads


def flatten_grads(G: GaussianSet, grads: ParamGrads) -> np.ndarray:
    """Gradients in the same layout as GaussianSet.get_param_vector."""
    rows, cols = np.tril_indices(G.d, k=-1)
    blocks = []
    for i in G.active_ids():
        blocks.extend([grads.mu[i], grads.log_diag[i], grads.lower[i][rows, cols]])
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# Normalization preprocessing


@dataclass
class NormTransform:
    """Affine preprocessing applied to data and queries; identity when mode none."""

    mode: str = "none"
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    def apply(self, X: np.ndarray) -> np.ndarray:
        if self.mode == "none":
            return np.asarray(X, dtype=np.float64)
        return (np.asarray(X, dtype=np.float64) - self.shift) / self.scale


def fit_transform(data: np.ndarray, mode: str) -> NormTransform:
    if mode == "none":
        return NormTransform()
    shift = data.mean(axis=0)
    if mode == "perdim":
        scale = np.maximum(data.std(axis=0), 1e-12)
    else:  # global
        scale = np.full(data.shape[1], max(float(data.std()), 1e-12))
    return NormTransform(mode=mode, shift=shift, scale=scale)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainState:
    gaussians: GaussianSet
    epoch: int
    loss_history: list
    events: list
    hp: HyperParams
    norm: NormTransform
    rng_state: dict | None = None
    moments: ParamGrads | None = None


def _grow_moments(m: ParamGrads, K: int, d: int) -> ParamGrads:
    if m.mu.shape[0] == K:
        return m
    grow = K - m.mu.shape[0]
    return ParamGrads(
        np.concatenate([m.mu, np.zeros((grow, d))]),
        np.concatenate([m.log_diag, np.zeros((grow, d))]),
        np.concatenate([m.lower, np.zeros((grow, d, d))]),
    )


def fit(X: VectorSet, hp: HyperParams, csv_path: str | None = None) -> TrainState:
    """Train a GaussianSet on X with scheduled SGD and periodic refinement.

    Structural operations are frozen during warm-up; afterwards split+clone
    fire every splitclone_period epochs and prune every prune_period epochs.
    Training stops early once the epoch-mean total loss improves by less
    than a relative 1e-4 over a 10-epoch window (evaluated after warm-up).
    """
    hp.validate()
    norm = fit_transform(X.as_f64(), hp.normalize)
    data = norm.apply(X.data)
    n = data.shape[0]

    G, _ = init_gaussians(VectorSet(data), hp)
    mu_sched, chol_sched = schedules_from_hp(hp)
    rng = np.random.default_rng([hp.seed, 2])
    refine_rng = np.random.default_rng([hp.seed, 3])

    moments = ParamGrads(np.zeros_like(G.mu), np.zeros_like(G.log_diag),
                         np.zeros_like(G.lower))
    history: list[LossBreakdown] = []
    events: list[refinement.RefinementEvent] = []
    last_struct_epoch = -1

    for epoch in range(hp.epochs_max):
        perm = rng.permutation(n)
        lr_mu = lr_at(mu_sched, epoch)
        lr_chol = lr_at(chol_sched, epoch)
        sums = np.zeros(3)
        for start in range(0, n, hp.batch_size):
            batch = data[perm[start:start + hp.batch_size]]
            try:
                lb, grads = total_loss_and_grads(batch, G, hp)
            except TrainingDivergenceError as err:
                raise TrainingDivergenceError(f"epoch {epoch}: {err}") from err
            if not np.isfinite(lb.total):
                raise TrainingDivergenceError(f"epoch {epoch}: non-finite loss {lb}")
            w = batch.shape[0]
            sums += w * np.array([lb.l_div, lb.l_cov, lb.l_anchor])
            if hp.momentum > 0.0:
                moments.mu = hp.momentum * moments.mu + grads.mu
                moments.log_diag = hp.momentum * moments.log_diag + grads.log_diag
                moments.lower = hp.momentum * moments.lower + grads.lower
                step = moments
            else:
                step = grads
            G.mu -= lr_mu * step.mu
            G.log_diag -= lr_chol * step.log_diag
            G.lower -= lr_chol * step.lower

        mean = sums / n
        total = hp.lambda_div * mean[0] + hp.lambda_cov * mean[1] + hp.lambda_anchor * mean[2]
        history.append(LossBreakdown(float(mean[0]), float(mean[1]), float(mean[2]),
                                     float(total), epoch=epoch))

        past_warmup = (epoch + 1) >= hp.warmup_epochs
        if past_warmup and (epoch + 1) % hp.splitclone_period == 0:
            new_events = refinement.split_pass(VectorSet(data), G, hp, refine_rng, epoch)
            new_events += refinement.clone_pass(VectorSet(data), G, hp, refine_rng, epoch)
            events += new_events
            moments = _grow_moments(moments, G.K, G.d)
            if new_events:
                last_struct_epoch = epoch
        if past_warmup and (epoch + 1) % hp.prune_period == 0:
            new_events = refinement.prune_pass(VectorSet(data), G, hp, epoch)
            events += new_events
            if new_events:
                last_struct_epoch = epoch

        # early stop needs a quiet window: structural ops move the loss in
        # steps, so the comparison only counts epochs since the last mutation
        if (epoch + 1 > hp.warmup_epochs + EARLY_STOP_WINDOW
                and epoch - last_struct_epoch > EARLY_STOP_WINDOW):
            prev = history[-1 - EARLY_STOP_WINDOW].total
            improvement = (prev - total) / max(abs(prev), 1e-30)
            if improvement < EARLY_STOP_RTOL:
                break

    # active count must reconcile with the event log: K = K_init + S + C - P
    expected = hp.K_init + sum(ev.net_change() for ev in events)
    if G.n_active != expected:
        raise RuntimeError(f"refinement accounting broken: {G.n_active} active "
                           f"Gaussians but event log implies {expected}")

    state = TrainState(gaussians=G, epoch=history[-1].epoch, loss_history=history,
                       events=events, hp=hp, norm=norm,
                       rng_state={"train": rng.bit_generator.state},
                       moments=moments)
    if csv_path is not None:
        write_training_csv(csv_path, state, mu_sched, chol_sched)
    return state


TRAINING_CSV_HEADER = ["row_type", "epoch", "l_div", "l_cov", "l_anchor", "total",
                       "active_k", "lr_mu", "lr_chol", "kind", "target", "created",
                       "trigger_card", "trigger_ratio"]


def write_training_csv(path: str, state: TrainState,
                       mu_sched: LRSchedule | None = None,
                       chol_sched: LRSchedule | None = None) -> None:
    """One row per epoch plus typed rows for each refinement event."""
    if mu_sched is None or chol_sched is None:
        mu_sched, chol_sched = schedules_from_hp(state.hp)
    by_epoch: dict[int, list] = {}
    for ev in state.events:
        by_epoch.setdefault(ev.epoch, []).append(ev)
    # track the active count as it evolved
    k = state.hp.K_init
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(TRAINING_CSV_HEADER)
        for lb in state.loss_history:
            wr.writerow(["epoch", lb.epoch, repr(float(lb.l_div)), repr(float(lb.l_cov)),
                         repr(float(lb.l_anchor)), repr(float(lb.total)), k,
                         repr(float(lr_at(mu_sched, lb.epoch))),
                         repr(float(lr_at(chol_sched, lb.epoch))),
                         "", "", "", "", ""])
            for ev in by_epoch.get(lb.epoch, []):
                k += ev.net_change()
                wr.writerow(["event", ev.epoch, "", "", "", "", "", "", "",
                             ev.kind, ev.target,
                             "|".join(str(c) for c in ev.created),
                             ev.cardinality, repr(float(ev.ratio))])
