"""Evaluation: cross-modal retrieval, bridge transfer, zero-shot classifier
transfer, a ridge-regression baseline, and hidden-unit probing.

Retrieval reports the average median rank over seeded splits: queries are
standardized per dimension (statistics from the query split only), candidates
ranked by cosine similarity, ties broken by sample id so every number is
exactly reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .errors import ConfigError, ContractError, DegenerateInputError
from .networks import ModelParams, TAP_NAMES, forward_batch

EMBED_BATCH = 64
DEFAULT_LAYER = "shared2"
DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0)

# Published full-scale results for these tasks, kept as reference rows in
# reports. A year of audio and millions of sentences went into them; desk
# runs are not expected to reproduce them.
FULL_SCALE_REFERENCE = {
    "retrieval_average_median_rank": {
        "random": {"image->sound": 500.0, "sound->image": 500.0,
                   "image->text": 500.0, "text->image": 500.0},
        "linear_regression": {"image->sound": 345.8, "sound->image": 319.8,
                              "image->text": 14.2, "text->image": 18.0},
        "aligned_model_transfer": {"image->sound": 144.6, "sound->image": 143.8,
                                   "image->text": 8.5, "text->image": 10.8},
        "aligned_ranking": {"image->sound": 49.0, "sound->image": 47.8,
                            "image->text": 8.6, "text->image": 8.2},
        "aligned_both": {"image->sound": 47.5, "sound->image": 49.5,
                         "image->text": 5.8, "text->image": 6.0},
    },
    "bridge_average_median_rank": {
        "random": {"text->sound": 500.0, "sound->text": 500.0},
        "linear_regression": {"text->sound": 315.0, "sound->text": 309.0},
        "aligned_model_transfer": {"text->sound": 140.5, "sound->text": 142.0},
        "aligned_ranking": {"text->sound": 190.0, "sound->text": 189.5},
        "aligned_both": {"text->sound": 135.0, "sound->text": 140.5},
    },
    "zero_shot_accuracy_percent": {
        "chance_42_categories": 2.3,
        "aligned_both": {"image->image": 32.6, "image->sound": 5.8, "image->text": 33.8,
                         "sound->image": 12.8, "sound->sound": 9.0, "sound->text": 15.2,
                         "text->image": 22.6, "text->sound": 6.2, "text->text": 40.3},
    },
}


def embed_all(params: ModelParams, samples: list[Sample], layer: str = DEFAULT_LAYER,
              standardize: bool = False) -> dict[str, np.ndarray]:
    """One representation vector per sample, keyed by id.

    With standardize=True the whole returned set is z-scored per dimension
    (that is how query sides are prepared for retrieval).
    """
    if layer not in TAP_NAMES:
        raise ConfigError(f"unknown tap {layer!r}; valid taps are {TAP_NAMES}")
    vectors: dict[str, np.ndarray] = {}
    by_modality: dict[str, list[Sample]] = {}
    for s in samples:
        by_modality.setdefault(s.modality, []).append(s)
    for modality, group in by_modality.items():
        for lo in range(0, len(group), EMBED_BATCH):
            chunk = group[lo:lo + EMBED_BATCH]
            arr = np.stack([s.payload for s in chunk]).astype(np.float64)
            acts = forward_batch(params, arr, modality)[layer].data
            for s, vec in zip(chunk, acts):
                vectors[s.id] = vec.copy()
    if standardize:
        ids = list(vectors)
        matrix = standardize_features(np.stack([vectors[i] for i in ids]))
        vectors = {i: row for i, row in zip(ids, matrix)}
    return vectors


def standardize_features(matrix: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per dimension (guarded for constant dims)."""
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    return (matrix - mean) / (std + 1e-12)


def _cosine_matrix(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    qn = np.sqrt((queries * queries).sum(axis=1))
    tn = np.sqrt((targets * targets).sum(axis=1))
    if (qn == 0).any() or (tn == 0).any():
        raise DegenerateInputError("zero-norm embedding row in retrieval")
    return (queries / qn[:, None]) @ (targets / tn[:, None]).T


def _ranks_with_id_ties(sims: np.ndarray, target_ids: list[str]) -> np.ndarray:
    """1-based rank of the true pair (diagonal), ties broken by target id."""
    n = sims.shape[0]
    id_order = np.empty(n, dtype=np.intp)
    id_order[np.argsort(np.array(target_ids))] = np.arange(n)
    true_sims = np.diag(sims)
    better = (sims > true_sims[:, None]).sum(axis=1)
    tied = (sims == true_sims[:, None]) & (id_order[None, :] < id_order[np.arange(n)][:, None])
    return 1 + better + tied.sum(axis=1)


@dataclass
class RetrievalResult:
    direction: str
    per_split_medians: list[float]
    average_median_rank: float
    split_size: int
    ranks: list[np.ndarray] = field(default_factory=list, repr=False)


def median_rank_retrieval(queries: dict[str, np.ndarray], targets: dict[str, np.ndarray],
                          pairs: list[tuple[str, str]], n_splits: int, split_size: int,
                          seed: int, direction: str = "",
                          standardize_queries: bool = True) -> RetrievalResult:
    """Average median rank over n_splits disjoint splits of split_size pairs.

    For each query the candidates are that split's target vectors; the rank of
    the true counterpart is 1-based and the per-split statistic is the median.
    """
    if n_splits < 1 or split_size < 2:
        raise ConfigError("need n_splits >= 1 and split_size >= 2")
    if n_splits * split_size > len(pairs):
        raise ConfigError(
            f"{n_splits} splits of {split_size} need {n_splits * split_size} pairs, "
            f"only {len(pairs)} available"
        )
    for qid, tid in pairs:
        if qid not in queries:
            raise ConfigError(f"query vector missing for {qid}")
        if tid not in targets:
            raise ConfigError(f"target vector missing for {tid}")

    order = np.random.default_rng(seed).permutation(len(pairs))
    medians: list[float] = []
    all_ranks: list[np.ndarray] = []
    for s in range(n_splits):
        chunk = [pairs[i] for i in order[s * split_size:(s + 1) * split_size]]
        q = np.stack([queries[qid] for qid, _ in chunk])
        t = np.stack([targets[tid] for _, tid in chunk])
        if standardize_queries:
            q = standardize_features(q)
        sims = _cosine_matrix(q, t)
        ranks = _ranks_with_id_ties(sims, [tid for _, tid in chunk])
        medians.append(float(np.median(ranks)))
        all_ranks.append(ranks)
    return RetrievalResult(direction, medians, float(np.mean(medians)), split_size, all_ranks)


def retrieval_between(params: ModelParams, query_samples: list[Sample],
                      target_samples: list[Sample], pairs, n_splits: int,
                      split_size: int, seed: int, layer: str = DEFAULT_LAYER,
                      direction: str = "") -> RetrievalResult:
    q = embed_all(params, query_samples, layer)
    t = embed_all(params, target_samples, layer)
    return median_rank_retrieval(q, t, pairs, n_splits, split_size, seed, direction)


def bridge_transfer_eval(params: ModelParams, sound_samples: list[Sample],
                         text_samples: list[Sample], pairs: list[tuple[str, str]],
                         n_splits: int, split_size: int, seed: int,
                         layer: str = DEFAULT_LAYER) -> dict[str, RetrievalResult]:
    """Sound<->text retrieval through the shared space. The ground-truth
    pairing exists only here, at evaluation time; training never saw it."""
    snd = embed_all(params, sound_samples, layer)
    txt = embed_all(params, text_samples, layer)
    reverse = [(t, s) for s, t in pairs]
    return {
        "sound->text": median_rank_retrieval(snd, txt, pairs, n_splits, split_size,
                                             seed, "sound->text"),
        "text->sound": median_rank_retrieval(txt, snd, reverse, n_splits, split_size,
                                             seed, "text->sound"),
    }


# -- zero-shot classifier transfer ---------------------------------------------


def _hinge_ova_fit(features: np.ndarray, labels: np.ndarray, n_classes: int,
                   c_value: float, iterations: int) -> np.ndarray:
    """One-vs-all linear hinge + L2, deterministic full-batch subgradient
    descent (Pegasos-style 1/(lambda t) step sizes). Returns (K, D) weights."""
    n = features.shape[0]
    lam = 1.0 / (c_value * n)
    targets = np.where(labels[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)
    weights = np.zeros((n_classes, features.shape[1]))
    for t in range(1, iterations + 1):
        margins = features @ weights.T
        violating = (targets * margins) < 1.0
        grad = lam * weights - ((targets * violating).T @ features) / n
        weights -= (1.0 / (lam * t)) * grad
    return weights


@dataclass
class ZeroShotResult:
    train_modality: str
    test_modality: str
    accuracy: float
    best_c: float


def zero_shot_transfer(params: ModelParams, train_samples: list[Sample],
                       train_labels: dict[str, int], test_samples: list[Sample],
                       test_labels: dict[str, int], n_classes: int,
                       layer: str = DEFAULT_LAYER, c_grid=DEFAULT_C_GRID,
                       seed: int = 0, iterations: int = 300) -> ZeroShotResult:
    """Fit one-vs-all linear classifiers on one modality's representations and
    score them on another's. C is chosen by two-fold cross validation on the
    training set; features are standardized with training statistics only."""
    y_train = np.array([train_labels[s.id] for s in train_samples])
    present = set(int(v) for v in y_train)
    missing = sorted(set(range(n_classes)) - present)
    if missing:
        raise ConfigError(f"classes missing from training set: {missing}")

    train_vecs = embed_all(params, train_samples, layer)
    x_train = np.stack([train_vecs[s.id] for s in train_samples])
    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0) + 1e-12
    z_train = np.hstack([(x_train - mean) / std, np.ones((len(x_train), 1))])

    order = np.random.default_rng(seed).permutation(len(z_train))
    half = len(z_train) // 2
    folds = (order[:half], order[half:])
    best_c, best_acc = None, -1.0
    for c_value in c_grid:
        accs = []
        for fit_idx, val_idx in ((folds[0], folds[1]), (folds[1], folds[0])):
            w = _hinge_ova_fit(z_train[fit_idx], y_train[fit_idx], n_classes,
                               c_value, iterations)
            pred = np.argmax(z_train[val_idx] @ w.T, axis=1)
            accs.append(float((pred == y_train[val_idx]).mean()))
        acc = float(np.mean(accs))
        if acc > best_acc:
            best_acc, best_c = acc, c_value

    weights = _hinge_ova_fit(z_train, y_train, n_classes, best_c, iterations)
    test_vecs = embed_all(params, test_samples, layer)
    x_test = np.stack([test_vecs[s.id] for s in test_samples])
    z_test = np.hstack([(x_test - mean) / std, np.ones((len(x_test), 1))])
    pred = np.argmax(z_test @ weights.T, axis=1)
    y_test = np.array([test_labels[s.id] for s in test_samples])
    accuracy = float((pred == y_test).mean())
    train_modality = train_samples[0].modality
    test_modality = test_samples[0].modality
    return ZeroShotResult(train_modality, test_modality, accuracy, best_c)


# -- linear regression baseline --------------------------------------------------


def linear_regression_baseline(source: np.ndarray, target: np.ndarray,
                               ridge_lambda: float = 1e-3) -> np.ndarray:
    """Closed-form ridge map W minimizing ||S W - T||^2 + lambda ||W||^2."""
    if ridge_lambda <= 0:
        raise ConfigError(f"ridge lambda must be positive, got {ridge_lambda}")
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or target.ndim != 2 or source.shape[0] != target.shape[0]:
        raise ContractError(
            f"paired feature matrices required, got {source.shape} and {target.shape}"
        )
    gram = source.T @ source + ridge_lambda * np.eye(source.shape[1])
    return np.linalg.solve(gram, source.T @ target)


def baseline_retrieval(train_source: dict[str, np.ndarray], train_target: dict[str, np.ndarray],
                       train_pairs, test_source: dict[str, np.ndarray],
                       test_target: dict[str, np.ndarray], test_pairs,
                       n_splits: int, split_size: int, seed: int,
                       ridge_lambda: float = 1e-3, direction: str = "") -> RetrievalResult:
    """Ridge-map source features into the target (vision) space, then retrieve
    there by cosine similarity."""
    s = np.stack([train_source[a] for a, _ in train_pairs])
    t = np.stack([train_target[b] for _, b in train_pairs])
    w = linear_regression_baseline(s, t, ridge_lambda)
    regressed = {qid: test_source[qid] @ w for qid, _ in test_pairs}
    return median_rank_retrieval(regressed, test_target, test_pairs,
                                 n_splits, split_size, seed, direction)


# -- hidden-unit probing ----------------------------------------------------------


def probe_units(params: ModelParams, samples: list[Sample], layer: str = DEFAULT_LAYER,
                k: int = 5, units=None) -> dict[int, dict[str, list[tuple[str, float]]]]:
    """Per hidden unit, the top-k activating sample ids for each modality.

    Ordering is by activation descending, ties by sample id; listings are
    deterministic across runs.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    vectors = embed_all(params, samples, layer)
    by_modality: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for modality in sorted(set(s.modality for s in samples)):
        ids = np.array(sorted(s.id for s in samples if s.modality == modality))
        acts = np.stack([vectors[i] for i in ids])
        by_modality[modality] = (ids, acts)

    width = next(iter(by_modality.values()))[1].shape[1]
    chosen = range(width) if units is None else units
    listings: dict[int, dict[str, list[tuple[str, float]]]] = {}
    for unit in chosen:
        per_mod: dict[str, list[tuple[str, float]]] = {}
        for modality, (ids, acts) in by_modality.items():
            # ids are pre-sorted, so a stable sort on -activation keeps id order on ties
            top = np.argsort(-acts[:, unit], kind="stable")[:k]
            per_mod[modality] = [(str(ids[i]), float(acts[i, unit])) for i in top]
        listings[unit] = per_mod
    return listings


# -- report files ------------------------------------------------------------------


def write_ranks_csv(path, results: list[RetrievalResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["direction", "split", "split_size", "median_rank"])
        for res in results:
            for i, median in enumerate(res.per_split_medians):
                writer.writerow([res.direction, i, res.split_size, repr(median)])
            writer.writerow([res.direction, "average", res.split_size,
                             repr(res.average_median_rank)])


def write_accuracies_csv(path, results: list[ZeroShotResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_modality", "test_modality", "accuracy", "best_c"])
        for res in results:
            writer.writerow([res.train_modality, res.test_modality,
                             repr(res.accuracy), repr(res.best_c)])


def write_probe_csv(path, listings) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "modality", "rank", "sample_id", "activation"])
        for unit in sorted(listings):
            for modality in sorted(listings[unit]):
                for rank, (sample_id, act) in enumerate(listings[unit][modality], start=1):
                    writer.writerow([unit, modality, rank, sample_id, repr(act)])


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
