"""Image-level illuminant estimation by pooling per-patch network outputs,
plus the training and fine-tuning loops.

Training fits the network per patch with half squared error against the
image's ground truth; fine-tuning then optimizes the image-level angular
error, backpropagating through the pooling step (median pooling routes each
channel's gradient to the estimate(s) realizing the median, average pooling
spreads it 1/N).

Cross-validation convention for test fold k: train on fold (k+1) % 3,
validate on fold (k+2) % 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabeledImage
from .errors import (
    DegenerateEstimateError,
    EstimationImpossibleError,
    ParameterError,
)
from .evaluation import angular_error, angular_error_many
from .image import Illuminant, LinearImage, normalize
from .network import (
    HyperParams,
    NetworkGrads,
    NetworkParams,
    angular_loss,
    backward,
    euclidean_loss,
    forward,
    forward_cache,
    init_params,
    sgd_step,
    zero_momentum,
)
from .patches import Patch, extract_grid_patches, histogram_stretch, resize_max_side, sample_random_patches

RESIZE_TARGET = 1200
POOLINGS = ("average", "median")


@dataclass(frozen=True)
class PooledEstimate:
    """An image-level estimate with its per-patch provenance.

    per_patch holds (origin, raw network output, normalized estimate) for
    every non-degenerate patch; `degenerate_skipped` counts the flat patches
    that were left out.
    """

    illuminant: Illuminant
    per_patch: tuple
    pooling: str
    degenerate_skipped: int = 0


def rectified_unit(raw: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and scale to unit length.

    Raw network outputs are unconstrained; a light color cannot have negative
    components, so the estimate is the rectified direction.
    """
    clamped = np.maximum(raw, 0.0)
    norm = float(np.linalg.norm(clamped))
    if norm < 1e-9:
        raise DegenerateEstimateError(f"network output {raw} has no usable direction")
    return clamped / norm


def _usable_output_rows(raw: np.ndarray) -> np.ndarray:
    """Rows whose rectified output still has a direction."""
    return np.linalg.norm(np.maximum(raw, 0.0), axis=1) >= 1e-9


def estimate_patch(params: NetworkParams, patch: Patch) -> Illuminant:
    """Normalized illuminant estimate for one contrast-normalized patch."""
    if patch.degenerate:
        raise DegenerateEstimateError("cannot estimate from a degenerate patch")
    return Illuminant(rectified_unit(forward(params, patch.data)), normalized=True)


def pool_average(estimates) -> Illuminant:
    """Channel-wise arithmetic mean of normalized estimates, renormalized."""
    rows = _estimate_rows(estimates)
    return normalize(rows.mean(axis=0))


def pool_median(estimates) -> Illuminant:
    """Channel-wise median of normalized estimates, renormalized.

    Even counts take the mean of the two middle values per channel.
    """
    rows = _estimate_rows(estimates)
    med = np.median(rows, axis=0)
    if not np.any(med > 0):
        raise DegenerateEstimateError("channel-wise median is the zero vector")
    return normalize(med)


def _estimate_rows(estimates) -> np.ndarray:
    rows = [np.asarray(getattr(e, "rgb", e), dtype=np.float64) for e in estimates]
    if not rows:
        raise ParameterError("cannot pool an empty estimate list")
    return np.stack(rows)


def _pool(rows: np.ndarray, pooling: str) -> Illuminant:
    if pooling == "average":
        return pool_average(rows)
    if pooling == "median":
        return pool_median(rows)
    raise ParameterError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


def prepared_patches(
    img: LinearImage, patch_size: int, resize_target: int = RESIZE_TARGET
) -> tuple[list[Patch], int]:
    """Resize, tile, and contrast-normalize; returns (usable patches, skipped)."""
    resized = resize_max_side(img, resize_target)
    stretched = [histogram_stretch(p) for p in extract_grid_patches(resized, patch_size)]
    usable = [p for p in stretched if not p.degenerate]
    return usable, len(stretched) - len(usable)


def estimate_image(
    params: NetworkParams,
    img: LinearImage,
    pooling: str = "median",
    patch_size: int = 32,
    resize_target: int = RESIZE_TARGET,
) -> PooledEstimate:
    """Grid-patch the image and pool the per-patch network estimates."""
    if pooling not in POOLINGS:
        raise ParameterError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    usable, skipped = prepared_patches(img, patch_size, resize_target)
    if not usable:
        raise EstimationImpossibleError("no usable patches in image")
    batch = np.stack([p.data for p in usable])
    raw = forward(params, batch)
    keep = _usable_output_rows(raw)
    if not np.any(keep):
        raise EstimationImpossibleError("every patch estimate is direction-free")
    units_list, per_patch = [], []
    for i, p in enumerate(usable):
        if not keep[i]:
            continue
        unit = rectified_unit(raw[i])
        units_list.append(unit)
        per_patch.append((p.origin, raw[i].copy(), Illuminant(unit, normalized=True)))
    return PooledEstimate(
        illuminant=_pool(np.stack(units_list), pooling),
        per_patch=tuple(per_patch),
        pooling=pooling,
        degenerate_skipped=skipped + int(len(usable) - keep.sum()),
    )


# --------------------------------------------------------------------------
# training


def _fold_samples(samples, fold: int) -> list[LabeledImage]:
    return [s for s in samples if s.fold == fold]


def training_patch_arrays(
    samples, hyper: HyperParams, resize_target: int = RESIZE_TARGET
) -> tuple[np.ndarray, np.ndarray]:
    """Random stretched patches and their per-image illuminant labels.

    Every patch of an image carries that image's ground truth. Each image
    gets its own generator seeded by (seed, position in the full list), so
    the extraction is order-stable and reproducible.
    """
    xs, ys = [], []
    for idx, sample in enumerate(samples):
        img = resize_max_side(sample.image, resize_target)
        pats = sample_random_patches(
            img, hyper.patch_size, hyper.patches_per_image,
            mask=sample.mask, seed=[hyper.seed, idx],
        )
        for p in pats:
            sp = histogram_stretch(p)
            if sp.degenerate:
                continue
            xs.append(sp.data)
            ys.append(sample.illuminant.rgb)
    if not xs:
        raise EstimationImpossibleError("no usable training patches")
    return np.stack(xs), np.stack(ys)


@dataclass
class TrainResult:
    models: dict
    log: list


def train(
    dataset,
    folds,
    hyper: HyperParams,
    resize_target: int = RESIZE_TARGET,
) -> TrainResult:
    """Three-fold cross-validated patch training with half-squared-error loss.

    For each requested test fold k the model trains on fold (k+1) % 3 and
    early-stops on the patch-level angular error of fold (k+2) % 3, keeping
    the best validation checkpoint.
    """
    samples = list(dataset)
    present = {s.fold for s in samples}
    log: list[dict] = []
    models: dict[int, NetworkParams] = {}
    for k in folds:
        train_fold, val_fold = (k + 1) % 3, (k + 2) % 3
        for f in (k, train_fold, val_fold):
            if f not in present:
                raise ParameterError(f"dataset has no images in fold {f}")
        dtype = np.dtype(hyper.dtype)
        x_tr, y_tr = training_patch_arrays(_fold_samples(samples, train_fold), hyper, resize_target)
        x_val, y_val = training_patch_arrays(_fold_samples(samples, val_fold), hyper, resize_target)
        x_tr, y_tr = x_tr.astype(dtype), y_tr.astype(dtype)
        if len(x_val) > hyper.val_patch_cap:
            keep = np.random.default_rng([hyper.seed, k, 2]).choice(
                len(x_val), size=hyper.val_patch_cap, replace=False
            )
            x_val, y_val = x_val[keep], y_val[keep]
        x_val = x_val.astype(dtype)
        params = init_params(hyper, seed=[hyper.seed, k])
        state = zero_momentum(params)
        shuffle_rng = np.random.default_rng([hyper.seed, k, 1])
        best_params, best_err, best_epoch = params, float("inf"), -1
        for epoch in range(hyper.epochs):
            order = shuffle_rng.permutation(len(x_tr))
            total, seen = 0.0, 0
            for start in range(0, len(order), hyper.batch_size):
                sel = order[start : start + hyper.batch_size]
                est, cache = forward_cache(params, x_tr[sel])
                loss, grad = euclidean_loss(est, y_tr[sel])
                grads = backward(params, cache, grad)
                params, state = sgd_step(params, grads, hyper, state)
                total += loss * len(sel)
                seen += len(sel)
            val_err = float(np.mean(angular_error_many(forward(params, x_val), y_val)))
            log.append({
                "fold": k, "epoch": epoch, "split": "train",
                "loss": total / max(seen, 1),
            })
            log.append({
                "fold": k, "epoch": epoch, "split": "val",
                "angular_mean": val_err,
            })
            if val_err < best_err:
                best_params, best_err, best_epoch = params, val_err, epoch
            elif epoch - best_epoch >= hyper.patience:
                log.append({"fold": k, "epoch": epoch, "split": "early_stop",
                            "best_epoch": best_epoch, "angular_mean": best_err})
                break
        models[k] = best_params
    return TrainResult(models=models, log=log)


# --------------------------------------------------------------------------
# fine-tuning through the pooling step


def _median_routing(rows: np.ndarray) -> np.ndarray:
    """Per-channel subgradient weights of the median over axis 0.

    Odd counts give the realizing row weight 1; even counts split 0.5/0.5
    between the two middle rows (stable sort order breaks ties).
    """
    n = rows.shape[0]
    weights = np.zeros_like(rows)
    order = np.argsort(rows, axis=0, kind="stable")
    cols = np.arange(rows.shape[1])
    if n % 2 == 1:
        weights[order[n // 2], cols] = 1.0
    else:
        weights[order[n // 2 - 1], cols] += 0.5
        weights[order[n // 2], cols] += 0.5
    return weights


def image_level_loss(
    params: NetworkParams,
    img: LinearImage,
    gt: Illuminant,
    pooling: str = "median",
    patch_size: int = 32,
    resize_target: int = RESIZE_TARGET,
) -> tuple[float, NetworkGrads]:
    """Angular loss (radians) of the pooled estimate, with exact parameter
    gradients through pooling, per-patch normalization, and the network."""
    usable, _ = prepared_patches(img, patch_size, resize_target)
    if not usable:
        raise EstimationImpossibleError("no usable patches in image")
    batch = np.stack([p.data for p in usable])
    raw, cache = forward_cache(params, batch)
    keep = _usable_output_rows(raw)
    if not np.any(keep):
        raise EstimationImpossibleError("every patch estimate is direction-free")
    clamped = np.maximum(raw[keep], 0.0)
    norms = np.linalg.norm(clamped, axis=1, keepdims=True)
    units = clamped / norms
    if pooling == "median":
        pooled = np.median(units, axis=0)
        routing = _median_routing(units)
    elif pooling == "average":
        pooled = units.mean(axis=0)
        routing = np.full_like(units, 1.0 / len(units))
    else:
        raise ParameterError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    loss, grad_pooled = angular_loss(pooled, gt)
    grad_units = routing * grad_pooled[None, :]
    # d(unit)/d(clamped) = (I - unit unit^T) / norm, then the clamp mask
    grad_clamped = (grad_units - (grad_units * units).sum(axis=1, keepdims=True) * units) / norms
    grad_raw = np.zeros_like(raw)
    grad_raw[keep] = grad_clamped * (raw[keep] > 0)
    return loss, backward(params, cache, grad_raw)


def fine_tune(
    params: NetworkParams,
    dataset,
    hyper: HyperParams,
    pooling: str = "median",
    val_dataset=None,
    min_improvement: float = 0.1,
    resize_target: int = RESIZE_TARGET,
    log: list | None = None,
) -> NetworkParams:
    """Continue training on the image-level angular loss, one image per step.

    When a validation set is given, the checkpoint with the lowest pooled
    median error is returned; a checkpoint only displaces the current best
    (initially the input parameters) when it wins by more than
    `min_improvement` degrees, so small-sample validation noise cannot hand
    back something worse than the starting point.
    """
    samples = list(dataset)
    if not samples:
        raise ParameterError("fine_tune needs at least one image")
    state = zero_momentum(params)
    shuffle_rng = np.random.default_rng([hyper.seed, 7])

    def val_median(p: NetworkParams) -> float:
        errs = [
            angular_error(
                estimate_image(p, s.image, pooling, hyper.patch_size, resize_target).illuminant,
                s.illuminant,
            )
            for s in val_dataset
        ]
        return float(np.median(errs))

    best_params, best_err = params, val_median(params) if val_dataset else float("inf")
    for epoch in range(hyper.epochs):
        order = shuffle_rng.permutation(len(samples))
        for i in order:
            s = samples[i]
            loss, grads = image_level_loss(
                params, s.image, s.illuminant, pooling, hyper.patch_size, resize_target
            )
            params, state = sgd_step(params, grads, hyper, state)
            if log is not None:
                log.append({
                    "epoch": epoch, "image": s.image_id,
                    "loss_rad": loss, "loss_deg": float(np.degrees(loss)),
                })
        if val_dataset:
            err = val_median(params)
            if log is not None:
                log.append({"epoch": epoch, "split": "val", "pooled_median": err})
            if err < best_err - min_improvement:
                best_params, best_err = params, err
    return best_params if val_dataset else params
