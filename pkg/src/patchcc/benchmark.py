"""Cross-validated benchmark: one angular-error summary row per estimator."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import ParameterError
from .estimator import estimate_image
from .evaluation import ErrorStats, angular_error, summarize
from .minkowski import PRESETS, do_nothing, minkowski_estimate, preset

STAT_ALGOS = ("DN",) + tuple(PRESETS)
CNN_ALGOS = ("cnn-patch", "cnn-average", "cnn-median", "cnn-finetuned")
ALL_ALGOS = STAT_ALGOS + CNN_ALGOS


@dataclass
class BenchmarkReport:
    """Summary rows plus the raw per-image (or per-patch) error dumps."""

    rows: dict
    per_image: dict

    def render_text(self) -> str:
        lines = [f"{'Algorithm':<14} {'Min':>7} {'10th':>7} {'Med':>7} "
                 f"{'Avg':>7} {'90th':>7} {'Max':>7}"]
        for name, stats in self.rows.items():
            cells = " ".join(f"{v:7.2f}" for v in stats.as_row())
            lines.append(f"{name:<14} {cells}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["algorithm", "min", "prc10", "median", "mean", "prc90", "max"])
            for name, stats in self.rows.items():
                writer.writerow([name] + [f"{v:.6f}" for v in stats.as_row()])

    def write_per_image_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "estimator", "degrees"])
            for name, errors in self.per_image.items():
                for image_id, err in errors:
                    writer.writerow([image_id, name, f"{err:.6f}"])


def _model_for(sample, fold_models, algo):
    if fold_models is None or sample.fold not in fold_models:
        raise ParameterError(f"no fold-{sample.fold} model available for {algo}")
    return fold_models[sample.fold]


def _map_images(fn, samples, threads: int):
    if threads <= 1:
        return [fn(s) for s in samples]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, samples))


def benchmark(
    samples,
    algos=ALL_ALGOS,
    fold_models=None,
    finetuned_models=None,
    patch_size: int = 32,
    threads: int = 1,
) -> BenchmarkReport:
    """Evaluate estimators over a labeled dataset.

    Statistical rows run on every image; network rows evaluate each image
    with the model of its own fold. The cnn-patch row pools the errors of
    every patch of every image into one sample.
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("benchmark needs at least one image")
    rows: dict[str, ErrorStats] = {}
    per_image: dict[str, list] = {}
    for algo in algos:
        if algo == "DN":
            fn = lambda s: [(s.image_id, angular_error(do_nothing(), s.illuminant))]
        elif algo in PRESETS:
            p = preset(algo)
            fn = lambda s, p=p: [
                (s.image_id, angular_error(minkowski_estimate(s.image, p), s.illuminant))
            ]
        elif algo in ("cnn-average", "cnn-median"):
            pooling = algo.split("-")[1]
            fn = lambda s, pooling=pooling: [(
                s.image_id,
                angular_error(
                    estimate_image(
                        _model_for(s, fold_models, algo), s.image, pooling, patch_size
                    ).illuminant,
                    s.illuminant,
                ),
            )]
        elif algo == "cnn-finetuned":
            fn = lambda s: [(
                s.image_id,
                angular_error(
                    estimate_image(
                        _model_for(s, finetuned_models, algo), s.image, "median", patch_size
                    ).illuminant,
                    s.illuminant,
                ),
            )]
        elif algo == "cnn-patch":
            fn = lambda s: [
                (s.image_id, angular_error(unit, s.illuminant))
                for _, _, unit in estimate_image(
                    _model_for(s, fold_models, algo), s.image, "median", patch_size
                ).per_patch
            ]
        else:
            raise ParameterError(f"unknown estimator {algo!r}; valid: {', '.join(ALL_ALGOS)}")
        collected = []
        for chunk in _map_images(fn, samples, threads):
            collected.extend(chunk)
        per_image[algo] = collected
        rows[algo] = summarize([err for _, err in collected])
    return BenchmarkReport(rows=rows, per_image=per_image)
