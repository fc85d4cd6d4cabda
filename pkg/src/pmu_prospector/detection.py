"""Per-event attack detection with scalar logistic regression.

For each candidate event the pipeline synthesizes labeled count windows
from three scenario kinds (clean victim, attack-like-but-benign, attack),
trains a single-feature logistic model on a stratified 70/30 split, and
screens the resulting metrics.  Labels: 1 = attack running, 0 = not.
"""

from __future__ import annotations

import csv
import enum
import json
import random
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .backend import CounterBackend, SLOTS
from .errors import CapabilityError, DegenerateDataError, NotFittedError, ReportParseError
from .events import EventSelector, format_selector, parse_selector, scan_control
from .seeding import derive_seed

Sample = tuple[int, int]  # (count delta, label)


class ScenarioKind(enum.Enum):
    CLEAN = "clean"
    NO_ATTACK = "no_attack"
    ATTACK = "attack"


@dataclass(frozen=True)
class ClassActivity:
    """Executions of one instruction class per window: base +/- jitter."""

    base: int
    jitter: int = 0

    def __post_init__(self) -> None:
        if self.base < 0 or self.jitter < 0:
            raise ValueError("activity counts must be non-negative")


Profile = Mapping[str, ClassActivity]


@dataclass(frozen=True)
class ScenarioSpec:
    """One measurable workload scenario.

    Attack scenarios share the monitor's logical core, so their activity
    merges with the victim's into the one stream the backend counts.
    """

    kind: ScenarioKind
    attack_name: str | None
    workload_profile: Mapping[str, ClassActivity]

    def __post_init__(self) -> None:
        if self.kind is ScenarioKind.CLEAN and self.attack_name is not None:
            raise ValueError("clean scenarios carry no attack name")
        if self.kind is not ScenarioKind.CLEAN and not self.attack_name:
            raise ValueError(f"{self.kind.value} scenarios need an attack name")
        object.__setattr__(self, "workload_profile", dict(self.workload_profile))


@dataclass(frozen=True)
class AttackRecipe:
    """Scaffold activity (shared with benign lookalikes) plus the
    attack-primitive classes only the real attack executes."""

    scaffold: Mapping[str, ClassActivity]
    primitives: Mapping[str, ClassActivity]


VICTIM_PROFILE: Profile = {
    "alu": ClassActivity(40, 10),
    "branch": ClassActivity(18, 6),
    "memory-load": ClassActivity(30, 8),
    "memory-store": ClassActivity(12, 4),
}

DEFAULT_ATTACKS: Mapping[str, AttackRecipe] = {
    "spectre_v1": AttackRecipe(
        scaffold={"branch": ClassActivity(24, 6), "memory-load": ClassActivity(10, 3)},
        primitives={"transient-bounds-bypass": ClassActivity(10, 3)},
    ),
    "spectre_v2": AttackRecipe(
        scaffold={"branch": ClassActivity(36, 8), "alu": ClassActivity(8, 2)},
        primitives={
            "indirect-mistrain": ClassActivity(14, 4),
            "transient-gadget-load": ClassActivity(8, 3),
        },
    ),
    "meltdown": AttackRecipe(
        scaffold={"memory-load": ClassActivity(16, 4), "alu": ClassActivity(10, 3)},
        primitives={
            "fault-load": ClassActivity(12, 4),
            "exception-suppress": ClassActivity(6, 2),
        },
    ),
    "spectre_v4": AttackRecipe(
        scaffold={"memory-store": ClassActivity(14, 4), "memory-load": ClassActivity(10, 3)},
        primitives={"store-bypass-load": ClassActivity(10, 3)},
    ),
    "zombieload_v1": AttackRecipe(
        scaffold={"memory-load": ClassActivity(20, 5)},
        primitives={"fill-buffer-leak": ClassActivity(12, 4)},
    ),
    "zombieload_v2": AttackRecipe(
        scaffold={"memory-load": ClassActivity(18, 5), "alu": ClassActivity(6, 2)},
        primitives={"tsx-async-abort": ClassActivity(12, 4)},
    ),
}


def _merge_profiles(*profiles: Profile) -> dict[str, ClassActivity]:
    merged: dict[str, ClassActivity] = {}
    for profile in profiles:
        for tag, activity in profile.items():
            if tag in merged:
                merged[tag] = ClassActivity(
                    merged[tag].base + activity.base, merged[tag].jitter + activity.jitter
                )
            else:
                merged[tag] = activity
    return merged


def scenario_suite(
    attack_name: str,
    victim_profile: Profile = VICTIM_PROFILE,
    attacks: Mapping[str, AttackRecipe] = DEFAULT_ATTACKS,
) -> tuple[ScenarioSpec, ScenarioSpec, ScenarioSpec]:
    """The (clean, no-attack, attack) scenario triple for one attack.

    The no-attack scenario is the attack scenario minus its primitive
    classes: same scaffold, no leak.
    """
    if attack_name not in attacks:
        raise ValueError(f"unknown attack {attack_name!r}; known: {sorted(attacks)}")
    recipe = attacks[attack_name]
    clean = ScenarioSpec(ScenarioKind.CLEAN, None, dict(victim_profile))
    no_attack = ScenarioSpec(
        ScenarioKind.NO_ATTACK, attack_name, _merge_profiles(victim_profile, recipe.scaffold)
    )
    attack = ScenarioSpec(
        ScenarioKind.ATTACK,
        attack_name,
        _merge_profiles(victim_profile, recipe.scaffold, recipe.primitives),
    )
    return clean, no_attack, attack


def collect_samples(
    selector: EventSelector,
    scenario: ScenarioSpec,
    n: int,
    backend: CounterBackend,
    seed: int = 0,
) -> list[Sample]:
    """Measure n windows of one scenario on one selector.

    Each window is one program/read cycle around the scenario's jittered
    activity mix.  Scenario synthesis drives the simulated backend's class
    dispatch, so a simulated backend is required.
    """
    if not backend.capabilities().is_simulated:
        raise CapabilityError("scenario synthesis requires a simulated backend")
    value = scan_control(selector)
    rng = random.Random(
        derive_seed(
            seed, "collect", scenario.kind.value, scenario.attack_name or "", selector.packed
        )
    )
    label = 1 if scenario.kind is ScenarioKind.ATTACK else 0
    activity = sorted(scenario.workload_profile.items())
    record = backend.record_execution  # type: ignore[attr-defined]
    slot = SLOTS[0]
    samples: list[Sample] = []
    for _ in range(n):
        backend.program(slot, value)
        for tag, act in activity:
            count = act.base if act.jitter == 0 else act.base + rng.randint(-act.jitter, act.jitter)
            for _ in range(max(0, count)):
                record(tag)
        samples.append((backend.read(slot), label))
    return samples


@dataclass(frozen=True)
class LabeledDataset:
    selector: EventSelector
    samples: tuple[Sample, ...]
    split_seed: int = 0


def build_dataset(
    selector: EventSelector,
    attack_name: str,
    backend: CounterBackend,
    samples_per_class: int = 2000,
    seed: int = 0,
    victim_profile: Profile = VICTIM_PROFILE,
    attacks: Mapping[str, AttackRecipe] = DEFAULT_ATTACKS,
) -> LabeledDataset:
    """Balanced dataset for one (selector, attack) pair.

    The negative class mixes clean and no-attack windows half and half, so
    the detector cannot get away with recognising the scaffold alone.
    """
    clean, no_attack, attack = scenario_suite(attack_name, victim_profile, attacks)
    clean_n = samples_per_class // 2
    samples = collect_samples(selector, clean, clean_n, backend, seed)
    samples += collect_samples(selector, no_attack, samples_per_class - clean_n, backend, seed)
    samples += collect_samples(selector, attack, samples_per_class, backend, seed)
    return LabeledDataset(
        selector=selector,
        samples=tuple(samples),
        split_seed=derive_seed(seed, "split", selector.packed),
    )


def train_test_split(
    dataset: LabeledDataset, train_fraction: float = 0.7
) -> tuple[list[Sample], list[Sample]]:
    """Stratified split preserving label balance within one sample per class."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = random.Random(dataset.split_seed)
    train: list[Sample] = []
    test: list[Sample] = []
    for label in (0, 1):
        group = [s for s in dataset.samples if s[1] == label]
        rng.shuffle(group)
        k = int(round(len(group) * train_fraction))
        train += group[:k]
        test += group[k:]
    return train, test


def _sigmoid(scores: np.ndarray) -> np.ndarray:
    # clamped away from exact 0/1 so probabilities stay in the open interval
    p = 1.0 / (1.0 + np.exp(-np.clip(scores, -60.0, 60.0)))
    return np.clip(p, 1e-12, 1.0 - 1e-12)


@dataclass(frozen=True)
class LogisticModel:
    """Trained scalar detector: standardization parameters plus weights."""

    weight: float
    bias: float
    feature_mean: float
    feature_stddev: float
    threshold: float = 0.5

    def predict_proba(self, deltas) -> np.ndarray:
        z = (np.asarray(deltas, dtype=float) - self.feature_mean) / self.feature_stddev
        return _sigmoid(self.weight * z + self.bias)

    def predict(self, deltas) -> np.ndarray:
        return (self.predict_proba(deltas) >= self.threshold).astype(int)


class LogisticDetector:
    """Single-feature logistic regression, fitted by full-batch gradient
    descent from zero weights.

    Standardization parameters are estimated from the fitted data, so fit
    on the training split only.  The procedure has no random state: the
    same samples always give the same model.
    """

    def __init__(
        self,
        learning_rate: float = 0.1,
        max_epochs: int = 2000,
        grad_tolerance: float = 1e-6,
        threshold: float = 0.5,
    ):
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.grad_tolerance = grad_tolerance
        self.threshold = threshold
        self.model_: LogisticModel | None = None
        self.epochs_: int = 0

    def get_params(self, deep: bool = True) -> dict[str, float | int]:
        return {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "grad_tolerance": self.grad_tolerance,
            "threshold": self.threshold,
        }

    def set_params(self, **params) -> "LogisticDetector":
        valid = self.get_params()
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, deltas: Sequence[int], labels: Sequence[int]) -> "LogisticDetector":
        x = np.asarray(deltas, dtype=float)
        y = np.asarray(labels, dtype=float)
        if x.shape != y.shape or x.ndim != 1 or x.size == 0:
            raise ValueError("deltas and labels must be equal-length 1-d sequences")
        present = set(np.unique(y))
        if not present <= {0.0, 1.0}:
            raise ValueError(f"labels must be 0 or 1, got {sorted(present)}")
        if len(present) < 2:
            raise DegenerateDataError("training data needs both labels present")
        mean = float(x.mean())
        stddev = float(x.std())
        if stddev == 0.0:
            stddev = 1.0  # constant feature: fall back to a pure shift
        z = (x - mean) / stddev
        weight = 0.0
        bias = 0.0
        epochs = 0
        inv_n = 1.0 / x.size
        for epochs in range(1, self.max_epochs + 1):
            error = _sigmoid(weight * z + bias) - y
            grad_w = float(error @ z) * inv_n
            grad_b = float(error.sum()) * inv_n
            if max(abs(grad_w), abs(grad_b)) < self.grad_tolerance:
                break
            weight -= self.learning_rate * grad_w
            bias -= self.learning_rate * grad_b
        self.model_ = LogisticModel(weight, bias, mean, stddev, self.threshold)
        self.epochs_ = epochs
        return self

    def _fitted(self) -> LogisticModel:
        if self.model_ is None:
            raise NotFittedError("call fit before predicting")
        return self.model_

    def predict_proba(self, deltas) -> np.ndarray:
        return self._fitted().predict_proba(deltas)

    def predict(self, deltas) -> np.ndarray:
        return self._fitted().predict(deltas)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 2000
    grad_tolerance: float = 1e-6
    train_fraction: float = 0.7
    threshold: float = 0.5


@dataclass(frozen=True)
class TrainResult:
    model: LogisticModel
    train_samples: tuple[Sample, ...]
    test_samples: tuple[Sample, ...]
    epochs: int


def train(dataset: LabeledDataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Split, standardize on the training side, fit, and keep the held-out
    test samples with the result."""
    train_samples, test_samples = train_test_split(dataset, config.train_fraction)
    detector = LogisticDetector(
        learning_rate=config.learning_rate,
        max_epochs=config.max_epochs,
        grad_tolerance=config.grad_tolerance,
        threshold=config.threshold,
    )
    detector.fit([s[0] for s in train_samples], [s[1] for s in train_samples])
    assert detector.model_ is not None
    return TrainResult(
        model=detector.model_,
        train_samples=tuple(train_samples),
        test_samples=tuple(test_samples),
        epochs=detector.epochs_,
    )


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    undefined: frozenset[str] = frozenset()


def confusion_ratios(tp: int, fp: int, fn: int, tn: int) -> tuple[float, float, float, float, frozenset[str]]:
    """(accuracy, precision, recall, f1) from confusion counts.

    A zero denominator yields 0.0 and marks the metric undefined instead of
    raising; screening then treats it as a failing value.
    """
    undefined: set[str] = set()
    total = tp + fp + fn + tn
    if total:
        accuracy = (tp + tn) / total
    else:
        accuracy = 0.0
        undefined.add("accuracy")
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        undefined.add("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        undefined.add("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        undefined.add("f1")
    return accuracy, precision, recall, f1, frozenset(undefined)


def rank_auc(scores: Sequence[float], labels: Sequence[int]) -> tuple[float, bool]:
    """ROC AUC as the normalized rank sum of the positive class.

    Ties contribute half a pair through average ranks.  With only one class
    present the statistic is undefined: (0.0, False).
    """
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return 0.0, False
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=float)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # average rank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[y == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg), True


def compute_metrics(
    model: LogisticModel, samples: Sequence[Sample], threshold: float | None = None
) -> MetricsReport:
    """Evaluate a model on labeled samples at its decision threshold."""
    if not samples:
        raise DegenerateDataError("cannot evaluate on an empty sample set")
    cut = model.threshold if threshold is None else threshold
    deltas = [s[0] for s in samples]
    labels = np.asarray([s[1] for s in samples])
    probs = model.predict_proba(deltas)
    predictions = probs >= cut
    actual = labels == 1
    tp = int(np.sum(predictions & actual))
    fp = int(np.sum(predictions & ~actual))
    fn = int(np.sum(~predictions & actual))
    tn = int(np.sum(~predictions & ~actual))
    accuracy, precision, recall, f1, undefined = confusion_ratios(tp, fp, fn, tn)
    auc, auc_defined = rank_auc(probs, labels)
    if not auc_defined:
        undefined = undefined | {"auc"}
    return MetricsReport(tp, fp, fn, tn, accuracy, precision, recall, f1, auc, undefined)


@dataclass(frozen=True)
class ScreenCriteria:
    """Metric thresholds a usable detector must clear (all strict)."""

    min_accuracy: float = 0.8
    min_f1: float = 0.8
    min_auc: float = 0.7
    exclude_perfect: bool = False      # drop events with any metric exactly 1.0
    exclude_f1_band: bool = False      # drop events with F1 in the open band (0.9, 1)


_PERFECTABLE = ("accuracy", "precision", "recall", "f1", "auc")


def passes_screen(report: MetricsReport, criteria: ScreenCriteria = ScreenCriteria()) -> bool:
    if not (
        report.accuracy > criteria.min_accuracy
        and report.f1 > criteria.min_f1
        and report.auc > criteria.min_auc
    ):
        return False
    if criteria.exclude_perfect and any(
        getattr(report, name) == 1.0 for name in _PERFECTABLE
    ):
        return False
    if criteria.exclude_f1_band and 0.9 < report.f1 < 1.0:
        return False
    return True


def screen(
    reports: Mapping[EventSelector, MetricsReport],
    criteria: ScreenCriteria = ScreenCriteria(),
) -> list[EventSelector]:
    """Selectors whose metrics clear the screen, in packed order."""
    return sorted(
        (sel for sel, rep in reports.items() if passes_screen(rep, criteria)),
        key=lambda sel: sel.packed,
    )


def write_dataset_csv(dataset: LabeledDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "label"])
        for delta, label in dataset.samples:
            writer.writerow([delta, label])


def load_dataset_csv(path: str, selector: EventSelector, split_seed: int = 0) -> LabeledDataset:
    samples: list[Sample] = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            for row_no, row in enumerate(reader, start=1):
                if not row or row[0].strip().lower() == "delta":
                    continue
                if len(row) != 2:
                    raise ReportParseError(f"{path}:{row_no}: expected delta,label")
                try:
                    samples.append((int(row[0]), int(row[1])))
                except ValueError:
                    raise ReportParseError(f"{path}:{row_no}: non-integer field") from None
    except OSError as exc:
        raise ReportParseError(f"cannot read dataset {path}: {exc}") from exc
    return LabeledDataset(selector=selector, samples=tuple(samples), split_seed=split_seed)


def save_model_json(
    selector: EventSelector, model: LogisticModel, metrics: MetricsReport, path: str
) -> None:
    doc = {
        "selector": format_selector(selector),
        "weight": model.weight,
        "bias": model.bias,
        "feature_mean": model.feature_mean,
        "feature_stddev": model.feature_stddev,
        "threshold": model.threshold,
        "metrics": {
            "tp": metrics.tp,
            "fp": metrics.fp,
            "fn": metrics.fn,
            "tn": metrics.tn,
            "accuracy": metrics.accuracy,
            "precision": metrics.precision,
            "recall": metrics.recall,
            "f1": metrics.f1,
            "auc": metrics.auc,
            "undefined": sorted(metrics.undefined),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model_json(path: str) -> tuple[EventSelector, LogisticModel, MetricsReport]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ReportParseError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReportParseError(f"model {path}: invalid JSON at byte {exc.pos}") from exc
    try:
        selector = parse_selector(doc["selector"])
        model = LogisticModel(
            weight=float(doc["weight"]),
            bias=float(doc["bias"]),
            feature_mean=float(doc["feature_mean"]),
            feature_stddev=float(doc["feature_stddev"]),
            threshold=float(doc.get("threshold", 0.5)),
        )
        m = doc["metrics"]
        metrics = MetricsReport(
            tp=int(m["tp"]), fp=int(m["fp"]), fn=int(m["fn"]), tn=int(m["tn"]),
            accuracy=float(m["accuracy"]), precision=float(m["precision"]),
            recall=float(m["recall"]), f1=float(m["f1"]), auc=float(m["auc"]),
            undefined=frozenset(m.get("undefined", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportParseError(f"model {path} has an invalid field: {exc}") from exc
    return selector, model, metrics


def evaluate(dataset: LabeledDataset, config: TrainConfig = TrainConfig()) -> tuple[LogisticModel, MetricsReport]:
    """Train on the dataset's training split and score its held-out split."""
    result = train(dataset, config)
    return result.model, compute_metrics(result.model, result.test_samples)


def write_screen_csv(
    reports: Mapping[EventSelector, MetricsReport],
    passed: Iterable[EventSelector],
    path: str,
) -> None:
    passed_set = set(passed)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["selector", "accuracy", "precision", "recall", "f1", "auc", "passed"])
        for selector in sorted(reports, key=lambda s: s.packed):
            rep = reports[selector]
            writer.writerow(
                [
                    format_selector(selector),
                    f"{rep.accuracy:.6f}",
                    f"{rep.precision:.6f}",
                    f"{rep.recall:.6f}",
                    f"{rep.f1:.6f}",
                    f"{rep.auc:.6f}",
                    str(selector in passed_set).lower(),
                ]
            )
