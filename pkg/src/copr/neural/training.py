"""Training loops for the descriptor regressor and the synthetic encoders.

Everything here is deterministic given the config seed: weight init draws
from SplitMix64-derived per-layer streams, and all sampling/shuffling uses
one seeded generator consumed in a fixed order. Two runs with the same
config produce bitwise-identical models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatch, EmptyTrainingSet, InsufficientScenes, InvalidConfig
from ..geometry import RelativePose
from .core import (
    Activation,
    MlpModel,
    RawAdam,
    RawNet,
    add_grads,
    backward_batch,
    forward_batch,
    init_mlp,
    mse_batch_grad,
    splitmix64,
    zero_grads,
)
from .losses import distance_grads, relative_grads, triplet_grads

ENCODER_VARIANTS = ("triplet", "relative", "distance")
# Per-variant Adam learning rates used when no explicit config is given.
ENCODER_DEFAULT_LR = {"triplet": 1e-5, "relative": 1e-4, "distance": 5e-5}
REGRESSOR_DEFAULT_LR = 5e-4
DEFAULT_TRIPLET_MARGIN = 0.3


@dataclass(frozen=True)
class TrainConfig:
    lr: float = REGRESSOR_DEFAULT_LR
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    validation_fraction: float = 0.4
    early_stop_patience: int = 20

    def __post_init__(self):
        if self.lr <= 0 or self.epochs <= 0 or self.batch_size <= 0 or self.early_stop_patience <= 0:
            raise InvalidConfig("lr, epochs, batch_size and early_stop_patience must be positive")
        if not (0.0 < self.validation_fraction < 1.0):
            raise InvalidConfig("validation_fraction must lie in (0, 1)")


def regressor_widths(descriptor_dim: int) -> list[int]:
    """Layer widths of the non-linear regressor for a given descriptor dim.

    Input and the 7 hidden layers are all descriptor_dim + 7 wide; the
    output layer is descriptor_dim wide.
    """
    wide = descriptor_dim + 7
    return [wide] * 8 + [descriptor_dim]


def init_regressor(descriptor_dim: int, seed: int) -> MlpModel:
    widths = regressor_widths(descriptor_dim)
    acts = [Activation.GELU] * 7 + [Activation.IDENTITY]
    return init_mlp(widths, acts, seed)


def _split_indices(n: int, fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(round(fraction * n))
    if n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    else:
        n_val = 0
    return perm[n_val:], perm[:n_val]


def mse_over(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared error of the model over a stacked evaluation set."""
    out, _ = forward_batch(model, x)
    return float(np.mean((out - y) ** 2))


def _minibatches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


@dataclass(frozen=True)
class TrainResult:
    """A trained snapshot plus the validation losses bracketing the run."""

    model: MlpModel
    initial_val_loss: float
    best_val_loss: float


def train_regressor_full(pairs, cfg: TrainConfig, descriptor_dim: int) -> TrainResult:
    """Train the non-linear descriptor regressor on (anchor, dp, target) pairs.

    Uses mean-squared error with Adam, a validation split for early
    stopping, and keeps the snapshot with the best validation MSE (which
    is the untrained init if training never improves on it).
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyTrainingSet("no regressor training pairs")
    x_rows, y_rows = [], []
    for f_anchor, dp, f_target in pairs:
        f_anchor = np.asarray(f_anchor, dtype=np.float64).reshape(-1)
        f_target = np.asarray(f_target, dtype=np.float64).reshape(-1)
        if f_anchor.shape[0] != descriptor_dim or f_target.shape[0] != descriptor_dim:
            raise DimMismatch("training pair descriptor dims are inconsistent")
        x_rows.append(np.concatenate([f_anchor, dp.as_vector()]))
        y_rows.append(f_target)
    x = np.asarray(x_rows)
    y = np.asarray(y_rows)

    init_seed, rng_seed = splitmix64(cfg.seed)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    net = RawNet.from_model(init_regressor(descriptor_dim, init_seed))
    opt = RawAdam(net, cfg.lr)

    train_idx, val_idx = _split_indices(len(pairs), cfg.validation_fraction, rng)
    if len(val_idx) == 0:
        val_idx = train_idx
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_va, y_va = x[val_idx], y[val_idx]

    initial_val = mse_over(net, x_va, y_va)
    best_val = initial_val
    best_params = net.snapshot()
    stale = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x_tr))
        for batch in _minibatches(order, cfg.batch_size):
            _, grads = mse_batch_grad(net, x_tr[batch], y_tr[batch])
            opt.step(net, grads)
        val = mse_over(net, x_va, y_va)
        if val < best_val:
            best_val = val
            best_params = net.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return TrainResult(model=net.to_model(best_params), initial_val_loss=initial_val, best_val_loss=best_val)


def train_regressor(pairs, cfg: TrainConfig, descriptor_dim: int) -> MlpModel:
    """Best-validation regressor snapshot; see :func:`train_regressor_full`."""
    return train_regressor_full(pairs, cfg, descriptor_dim).model


def build_training_pairs(ref_map, max_translation: float, max_pairs: int, seed: int):
    """Ordered (f_anchor, dp, f_target) pairs from one trajectory map.

    Keeps all ordered pairs whose relative translation stays at or below
    ``max_translation`` (matching the span the regressor will be asked to
    cover), then subsamples to ``max_pairs`` with a seeded draw.
    """
    n = len(ref_map)
    if n < 2:
        raise EmptyTrainingSet("need at least two map entries to form pairs")
    t = ref_map.translations
    diff = t[:, None, :] - t[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    ii, jj = np.nonzero((dist <= max_translation) & ~np.eye(n, dtype=bool))
    if len(ii) == 0:
        raise EmptyTrainingSet(f"no pairs within {max_translation} m")
    if len(ii) > max_pairs:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(ii), size=max_pairs, replace=False)
        keep.sort()
        ii, jj = ii[keep], jj[keep]
    pairs = []
    for a, b in zip(ii, jj):
        dp = RelativePose(
            dt=t[b] - t[a],
            dq=_conj_multiply(ref_map.quaternions[a], ref_map.quaternions[b]),
        )
        pairs.append((ref_map.descriptors[a], dp, ref_map.descriptors[b]))
    return pairs


def _conj_multiply(q_anchor: np.ndarray, q_target: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = q_anchor[0], -q_anchor[1], -q_anchor[2], -q_anchor[3]
    bw, bx, by, bz = q_target
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True)
class EncoderDataset:
    """Observations with poses and scene labels for encoder training."""

    observations: np.ndarray  # (n, obs_dim) float64
    translations: np.ndarray  # (n, 3)
    quaternions: np.ndarray  # (n, 4)
    labels: tuple[int, ...]
    descriptor_dim: int

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        n = obs.shape[0]
        if len(self.labels) != n or self.translations.shape[0] != n or self.quaternions.shape[0] != n:
            raise DimMismatch("dataset arrays disagree in length")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def observation_dim(self) -> int:
        return int(self.observations.shape[1])


def encoder_widths(observation_dim: int, descriptor_dim: int) -> list[int]:
    return [observation_dim, 2 * descriptor_dim, 2 * descriptor_dim, descriptor_dim]


def init_encoder(observation_dim: int, descriptor_dim: int, seed: int) -> MlpModel:
    widths = encoder_widths(observation_dim, descriptor_dim)
    return init_mlp(widths, [Activation.GELU, Activation.GELU, Activation.IDENTITY], seed)


def init_rpe_head(descriptor_dim: int, seed: int) -> MlpModel:
    widths = [2 * descriptor_dim, 2 * descriptor_dim, 7]
    return init_mlp(widths, [Activation.GELU, Activation.IDENTITY], seed)


def default_encoder_config(variant: str, seed: int = 0) -> TrainConfig:
    return TrainConfig(lr=ENCODER_DEFAULT_LR[variant], epochs=200, batch_size=32, seed=seed)


def _sample_triplets(dataset: EncoderDataset, count: int, rng: np.random.Generator):
    labels = np.asarray(dataset.labels)
    by_label = {lab: np.nonzero(labels == lab)[0] for lab in sorted(set(dataset.labels))}
    if len(by_label) < 2:
        raise InsufficientScenes("triplet training needs at least two scenes for negatives")
    anchor_labels = [lab for lab, idx in by_label.items() if len(idx) >= 2]
    if not anchor_labels:
        raise InsufficientScenes("no scene has two observations to form a positive pair")
    all_labels = sorted(by_label)
    out = np.empty((count, 3), dtype=np.int64)
    for r in range(count):
        lab = anchor_labels[rng.integers(len(anchor_labels))]
        members = by_label[lab]
        qi, pi = rng.choice(len(members), size=2, replace=False)
        neg_lab = lab
        while neg_lab == lab:
            neg_lab = all_labels[rng.integers(len(all_labels))]
        ni = rng.integers(len(by_label[neg_lab]))
        out[r] = (members[qi], members[pi], by_label[neg_lab][ni])
    return out


def _sample_same_scene_pairs(dataset: EncoderDataset, count: int, rng: np.random.Generator):
    labels = np.asarray(dataset.labels)
    by_label = {lab: np.nonzero(labels == lab)[0] for lab in sorted(set(dataset.labels))}
    usable = [lab for lab, idx in by_label.items() if len(idx) >= 2]
    if not usable:
        raise EmptyTrainingSet("no scene has two observations to pair")
    out = np.empty((count, 2), dtype=np.int64)
    for r in range(count):
        lab = usable[rng.integers(len(usable))]
        members = by_label[lab]
        i, j = rng.choice(len(members), size=2, replace=False)
        out[r] = (members[i], members[j])
    return out


def _relative_pose_rows(dataset: EncoderDataset, idx_a: np.ndarray, idx_b: np.ndarray) -> np.ndarray:
    rows = np.empty((len(idx_a), 7))
    for r, (a, b) in enumerate(zip(idx_a, idx_b)):
        dp = RelativePose(
            dt=dataset.translations[b] - dataset.translations[a],
            dq=_conj_multiply(dataset.quaternions[a], dataset.quaternions[b]),
        )
        rows[r] = dp.as_vector()
    return rows


def train_encoder_full(
    dataset: EncoderDataset,
    variant: str,
    cfg: TrainConfig | None = None,
    margin: float = DEFAULT_TRIPLET_MARGIN,
    pool_size: int = 3000,
) -> TrainResult:
    """Train a synthetic feature encoder with one of three objectives.

    ``triplet`` pulls same-scene observations together against other-scene
    negatives (needs at least two scenes); ``relative`` trains the encoder
    jointly with a relative-pose head that is discarded afterwards;
    ``distance`` matches descriptor distances to physical distances on
    same-scene pairs. Returns the best-validation encoder snapshot.
    """
    if variant not in ENCODER_VARIANTS:
        raise InvalidConfig(f"unknown encoder variant {variant!r}")
    if len(dataset) == 0:
        raise EmptyTrainingSet("empty encoder dataset")
    if cfg is None:
        cfg = default_encoder_config(variant)

    seed_a, state = splitmix64(cfg.seed)
    seed_b, state = splitmix64(state)
    seed_c, _ = splitmix64(state)
    rng = np.random.Generator(np.random.PCG64(seed_b))
    encoder = RawNet.from_model(init_encoder(dataset.observation_dim, dataset.descriptor_dim, seed_a))
    enc_opt = RawAdam(encoder, cfg.lr)
    head = head_opt = None
    if variant == "relative":
        head = RawNet.from_model(init_rpe_head(dataset.descriptor_dim, seed_c))
        head_opt = RawAdam(head, cfg.lr)

    if variant == "triplet":
        samples = _sample_triplets(dataset, pool_size, rng)
    else:
        samples = _sample_same_scene_pairs(dataset, pool_size, rng)
    train_idx, val_idx = _split_indices(len(samples), cfg.validation_fraction, rng)
    if len(val_idx) == 0:
        val_idx = train_idx
    obs = dataset.observations

    def batch_loss_and_grads(model, head_model, rows, with_grads):
        if variant == "triplet":
            xq, xp, xn = obs[rows[:, 0]], obs[rows[:, 1]], obs[rows[:, 2]]
            fq, cq = forward_batch(model, xq, keep_cache=with_grads)
            fp, cp = forward_batch(model, xp, keep_cache=with_grads)
            fn, cn = forward_batch(model, xn, keep_cache=with_grads)
            loss, gq, gp, gn = triplet_grads(fq, fp, fn, margin)
            if not with_grads:
                return loss, None, None
            grads = zero_grads(model)
            for cache, g in ((cq, gq), (cp, gp), (cn, gn)):
                layer_grads, _ = backward_batch(model, cache, g)
                grads = add_grads(grads, layer_grads)
            return loss, grads, None
        if variant == "relative":
            xa, xb = obs[rows[:, 0]], obs[rows[:, 1]]
            fa, ca = forward_batch(model, xa, keep_cache=with_grads)
            fb, cb = forward_batch(model, xb, keep_cache=with_grads)
            stacked = np.hstack([fa, fb])
            dp_hat, ch = forward_batch(head_model, stacked, keep_cache=with_grads)
            dp_gt = _relative_pose_rows(dataset, rows[:, 0], rows[:, 1])
            loss, g_dp = relative_grads(dp_hat, dp_gt)
            if not with_grads:
                return loss, None, None
            head_grads, g_stacked = backward_batch(head_model, ch, g_dp)
            n = dataset.descriptor_dim
            grads_a, _ = backward_batch(model, ca, g_stacked[:, :n])
            grads_b, _ = backward_batch(model, cb, g_stacked[:, n:])
            return loss, add_grads(grads_a, grads_b), head_grads
        xa, xb = obs[rows[:, 0]], obs[rows[:, 1]]
        fa, ca = forward_batch(model, xa, keep_cache=with_grads)
        fb, cb = forward_batch(model, xb, keep_cache=with_grads)
        loss, g1, g2 = distance_grads(
            fa, fb, dataset.translations[rows[:, 0]], dataset.translations[rows[:, 1]]
        )
        if not with_grads:
            return loss, None, None
        grads_a, _ = backward_batch(model, ca, g1)
        grads_b, _ = backward_batch(model, cb, g2)
        return loss, add_grads(grads_a, grads_b), None

    def val_loss(model, head_model):
        loss, _, _ = batch_loss_and_grads(model, head_model, samples[val_idx], with_grads=False)
        return loss

    initial_val = val_loss(encoder, head)
    best_val = initial_val
    best_params = encoder.snapshot()
    stale = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train_idx))
        for batch in _minibatches(order, cfg.batch_size):
            rows = samples[train_idx[batch]]
            _, enc_grads, head_grads = batch_loss_and_grads(encoder, head, rows, with_grads=True)
            enc_opt.step(encoder, enc_grads)
            if head_grads is not None:
                head_opt.step(head, head_grads)
        val = val_loss(encoder, head)
        if val < best_val:
            best_val = val
            best_params = encoder.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return TrainResult(model=encoder.to_model(best_params), initial_val_loss=initial_val, best_val_loss=best_val)


def train_encoder(
    dataset: EncoderDataset,
    variant: str,
    cfg: TrainConfig | None = None,
    margin: float = DEFAULT_TRIPLET_MARGIN,
    pool_size: int = 3000,
) -> MlpModel:
    """Best-validation encoder snapshot; see :func:`train_encoder_full`."""
    return train_encoder_full(dataset, variant, cfg, margin=margin, pool_size=pool_size).model
