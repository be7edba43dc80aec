"""Query-synthesis substitute training and the gradient-step baseline.

The active strategy brackets the substitute's decision boundary by
repeated midpoint halving between an opposite-labeled pair, then queries
a point offset from the refined midpoint along a direction orthogonal to
the pair difference.  Only the freshly synthesized epochs are sent to the
target oracle; all boundary probing happens against the substitute.

Accounting conventions:

* one target query per epoch the oracle labels;
* one substitute query per midpoint evaluation inside the halving loop,
  so a synthesized epoch costs ``2 * bisection_steps`` substitute queries
  (one halving run to refine the pair, a second one inside the
  mid-perpendicular step).  Endpoint validation peeks are free.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledSet, as_epoch_batch
from .errors import (
    BoundaryLostError,
    BudgetExhaustedError,
    DegenerateDirectionError,
    NoOppositePairError,
)
from .models import ModelSpec, SoftmaxClassifier, TrainConfig

_NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class OppositePair:
    """Two same-shape epochs carrying different class labels."""

    x_plus: np.ndarray
    x_minus: np.ndarray
    label_plus: int
    label_minus: int

    def __post_init__(self):
        object.__setattr__(self, "x_plus", np.asarray(self.x_plus, dtype=np.float64))
        object.__setattr__(self, "x_minus", np.asarray(self.x_minus, dtype=np.float64))
        if self.x_plus.shape != self.x_minus.shape:
            raise ValueError("pair endpoints must share one shape")
        if self.label_plus == self.label_minus:
            raise ValueError("pair labels must differ")

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.x_plus - self.x_minus))


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs of the active augmentation loop."""

    n_iterations: int = 2        # outer augment-and-retrain rounds
    per_iteration: int = 200     # synthesized epochs per round
    bisection_steps: int = 10    # midpoint halvings per boundary search
    offset_norm: float = 1.0     # L2 magnitude of the orthogonal offset
    seed: int = 0
    retrain: str = "fine-tune"   # "fine-tune" | "from-scratch"
    resample_limit: int = 16     # redraws allowed on degenerate orthogonalization
    reselect_limit: int = 32     # pair reselections before the random fallback
    random_fallback: bool = True

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.per_iteration < 1:
            raise ValueError("per_iteration must be >= 1")
        if self.bisection_steps < 1:
            raise ValueError("bisection_steps must be >= 1")
        if self.offset_norm <= 0:
            raise ValueError("offset_norm must be > 0")
        if self.retrain not in ("fine-tune", "from-scratch"):
            raise ValueError(f"unknown retrain mode {self.retrain!r}")
        if self.resample_limit < 1 or self.reselect_limit < 1:
            raise ValueError("resample_limit and reselect_limit must be >= 1")


@dataclass(frozen=True)
class JacobianConfig:
    """Gradient-step augmentation baseline."""

    step_size: float = 0.5
    n_iterations: int = 1
    retrain: str = "fine-tune"
    seed: int = 0                # used only when query_cap forces subsampling
    query_cap: int | None = None  # max new target queries across all rounds

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.retrain not in ("fine-tune", "from-scratch"):
            raise ValueError(f"unknown retrain mode {self.retrain!r}")
        if self.query_cap is not None and self.query_cap < 0:
            raise ValueError("query_cap must be >= 0 when set")


class QueryCounter:
    """Monotone counter used for substitute-query bookkeeping."""

    def __init__(self):
        self.count = 0

    def add(self, n: int = 1) -> None:
        self.count += n


@dataclass
class TraceRow:
    iteration: int
    target_queries: int
    substitute_queries: int
    train_set_size: int
    synthesized: np.ndarray | None = None
    new_labels: np.ndarray | None = None


@dataclass
class AugmentationTrace:
    """Per-iteration accounting for one substitute training run.

    Row 0 describes the state right after the initial set was labeled and
    the substitute pre-trained; row ``i`` the state after outer iteration
    ``i``.  Query counts are relative to the start of the run.
    """

    rows: list = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    @property
    def target_query_total(self) -> int:
        return self.rows[-1].target_queries if self.rows else 0

    @property
    def substitute_query_total(self) -> int:
        return self.rows[-1].substitute_queries if self.rows else 0

    def to_csv(self, path) -> None:
        """Serialize as CSV: iteration, target_queries, substitute_queries, train_set_size."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "target_queries", "substitute_queries", "train_set_size"])
            for row in self.rows:
                writer.writerow(
                    [row.iteration, row.target_queries, row.substitute_queries, row.train_set_size]
                )


def binary_search_pair(pair: OppositePair, model, steps: int, counter: QueryCounter | None = None) -> OppositePair:
    """Shrink an opposite pair toward the substitute boundary by midpoint halving.

    Each step replaces one endpoint with the midpoint, so the endpoint
    distance contracts by exactly ``2**-steps``.  Issues ``steps``
    substitute queries; the endpoint validation peeks are not counted.
    Raises :class:`BoundaryLostError` when the substitute puts both
    endpoints in one class.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    y_plus = model.predict(pair.x_plus)
    y_minus = model.predict(pair.x_minus)
    if y_plus == y_minus:
        raise BoundaryLostError(
            f"substitute labels both endpoints as class {y_plus}; reselect the pair"
        )
    x_plus, x_minus = pair.x_plus, pair.x_minus
    label_minus = y_minus
    for _ in range(steps):
        mid = 0.5 * (x_plus + x_minus)
        y_mid = model.predict(mid)
        if counter is not None:
            counter.add(1)
        if y_mid == y_plus:
            x_plus = mid
        else:
            x_minus = mid
            label_minus = y_mid
    return OppositePair(x_plus, x_minus, int(y_plus), int(label_minus))


def mid_perpendicular(
    pair: OppositePair,
    model,
    steps: int,
    offset_norm: float,
    rng: np.random.Generator,
    counter: QueryCounter | None = None,
    resample_limit: int = 16,
) -> np.ndarray:
    """Synthesize one epoch offset orthogonally from a refined boundary midpoint.

    A random epoch is orthogonalized against the pair difference
    (projection removal), rescaled to L2 norm ``offset_norm``, and added
    to the midpoint of a fresh ``steps``-step halving run on the pair.
    Raises :class:`DegenerateDirectionError` when every redraw leaves an
    orthogonal component below the norm floor.
    """
    if offset_norm <= 0:
        raise ValueError("offset_norm must be > 0")
    diff = (pair.x_plus - pair.x_minus).ravel()
    denom = float(diff @ diff)
    if denom < _NORM_FLOOR**2:
        raise DegenerateDirectionError("pair endpoints coincide; no direction to keep")
    offset = None
    for _ in range(max(1, resample_limit)):
        draw = rng.standard_normal(pair.x_plus.shape).ravel()
        candidate = draw - (float(diff @ draw) / denom) * diff
        norm = float(np.linalg.norm(candidate))
        if norm >= _NORM_FLOOR:
            offset = (offset_norm / norm) * candidate
            break
    if offset is None:
        raise DegenerateDirectionError(
            f"orthogonal component stayed below {_NORM_FLOOR} after {resample_limit} redraws"
        )
    refined = binary_search_pair(pair, model, steps, counter)
    midpoint = 0.5 * (refined.x_plus + refined.x_minus)
    return offset.reshape(pair.x_plus.shape) + midpoint


def select_opposite_pair(
    data: LabeledSet, rng: np.random.Generator, class_pair: tuple[int, int] | None = None
) -> OppositePair:
    """Draw one uniformly random member of each of two classes.

    Without ``class_pair`` the set must contain exactly two classes (the
    binary case).  Raises :class:`NoOppositePairError` when a requested
    class has no examples.
    """
    if class_pair is None:
        present = data.present_classes()
        if len(present) != 2:
            if len(present) < 2:
                raise NoOppositePairError(
                    f"need two classes to form a pair, found {present}"
                )
            raise ValueError(
                f"{len(present)} classes present; pass class_pair explicitly"
            )
        class_pair = (present[0], present[1])
    a, b = class_pair
    if a == b:
        raise ValueError("class_pair entries must differ")
    idx_a = data.class_indices(a)
    idx_b = data.class_indices(b)
    if len(idx_a) == 0 or len(idx_b) == 0:
        raise NoOppositePairError(f"classes {a} and {b} are not both present")
    i = idx_a[int(rng.integers(len(idx_a)))]
    j = idx_b[int(rng.integers(len(idx_b)))]
    return OppositePair(data.epochs[i], data.epochs[j], int(a), int(b))


def _synthesize_one(
    data: LabeledSet,
    model,
    cfg: SynthesisConfig,
    rng: np.random.Generator,
    counter: QueryCounter | None,
    class_pair: tuple[int, int] | None,
) -> np.ndarray:
    """One synthesized epoch, falling back to a random draw when allowed."""
    shape = data.shape
    exhausted_reason = None
    for _ in range(cfg.reselect_limit):
        try:
            pair = select_opposite_pair(data, rng, class_pair)
        except NoOppositePairError as exc:
            exhausted_reason = exc
            break
        # validation peeks; uncounted, see module docstring
        if model.predict(pair.x_plus) == model.predict(pair.x_minus):
            exhausted_reason = BoundaryLostError(
                f"substitute agrees on every selected pair after {cfg.reselect_limit} tries"
            )
            continue
        refined = binary_search_pair(pair, model, cfg.bisection_steps, counter)
        return mid_perpendicular(
            refined,
            model,
            cfg.bisection_steps,
            cfg.offset_norm,
            rng,
            counter,
            cfg.resample_limit,
        )
    if cfg.random_fallback:
        return rng.standard_normal(shape)
    raise exhausted_reason if exhausted_reason is not None else BoundaryLostError(
        "no usable opposite pair found"
    )


def one_vs_one_quotas(
    n_classes: int, total: int, realizable: set[tuple[int, int]] | None = None
) -> dict[tuple[int, int], int]:
    """Split ``total`` epochs across the class pairs of a one-vs-one decomposition.

    Base quota is ``total // k2`` per pair with the remainder going to the
    first pairs in canonical (a < b) lexicographic order.  Quota owned by
    unrealizable pairs is redistributed round-robin over the realizable
    ones, so the grand total stays ``total`` whenever any pair survives.
    """
    if n_classes < 3:
        raise ValueError("one-vs-one decomposition needs n_classes >= 3")
    if total < 1:
        raise ValueError("total must be >= 1")
    pairs = [(a, b) for a in range(n_classes) for b in range(a + 1, n_classes)]
    base, remainder = divmod(total, len(pairs))
    quotas = {p: base + (1 if i < remainder else 0) for i, p in enumerate(pairs)}
    if realizable is None:
        realizable = set(pairs)
    alive = [p for p in pairs if p in realizable]
    if not alive:
        return {}
    spare = sum(quotas.pop(p) for p in pairs if p not in realizable)
    for i in range(spare):
        quotas[alive[i % len(alive)]] += 1
    return {p: quotas[p] for p in alive}


def synthesize_one_vs_one(
    data: LabeledSet,
    model,
    n_classes: int,
    cfg: SynthesisConfig,
    rng: np.random.Generator,
    counter: QueryCounter | None = None,
) -> list[np.ndarray]:
    """One iteration's worth of epochs across all realizable class pairs."""
    if n_classes < 3:
        raise ValueError("one-vs-one synthesis needs n_classes >= 3")
    present = set(data.present_classes())
    realizable = {
        (a, b)
        for a in range(n_classes)
        for b in range(a + 1, n_classes)
        if a in present and b in present
    }
    if not realizable:
        if cfg.random_fallback:
            return [rng.standard_normal(data.shape) for _ in range(cfg.per_iteration)]
        raise NoOppositePairError("no class pair is realizable in the labeled set")
    quotas = one_vs_one_quotas(n_classes, cfg.per_iteration, realizable)
    out = []
    for pair_classes in sorted(quotas):
        for _ in range(quotas[pair_classes]):
            out.append(_synthesize_one(data, model, cfg, rng, counter, pair_classes))
    return out


def jacobian_augment(
    data: LabeledSet, model, step_size: float, counter: QueryCounter | None = None
) -> list[np.ndarray]:
    """Baseline augmentation: one signed gradient step from every epoch.

    Uses the substitute's own predicted label for each epoch (the
    loss-gradient variant), so no target queries are needed to build the
    candidates.  ``sign(0) == 0``, hence a flat loss copies the input.
    """
    if step_size <= 0:
        raise ValueError("step_size must be > 0")
    labels = model.predict_batch(data.epochs)
    if counter is not None:
        counter.add(len(labels))
    grads = model.input_gradient_batch(data.epochs, labels)
    stepped = data.epochs + step_size * np.sign(grads)
    return [stepped[i] for i in range(len(stepped))]


def _pretrain(oracle, initial_epochs, model_spec, train_cfg):
    xs = as_epoch_batch(initial_epochs, model_spec.input_shape)
    if len(xs) == 0:
        raise ValueError("initial epoch set is empty")
    start = oracle.query_count
    labels = oracle.query_labels(xs)
    data = LabeledSet(xs, labels)
    model = SoftmaxClassifier(model_spec)
    model.fit(data, train_cfg)
    return model, data, start


def train_substitute_active(
    oracle,
    initial_epochs,
    model_spec: ModelSpec,
    train_cfg: TrainConfig,
    syn_cfg: SynthesisConfig,
) -> tuple[SoftmaxClassifier, AugmentationTrace]:
    """Label the initial set, pre-train, then augment by query synthesis.

    Per outer iteration, ``per_iteration`` epochs are synthesized against
    the current substitute (binary path for two classes, one-vs-one for
    more), labeled by the target in one batch, appended, and the
    substitute retrained.  Target queries total
    ``len(initial) + n_iterations * per_iteration`` exactly.
    """
    xs = as_epoch_batch(initial_epochs, model_spec.input_shape)
    needed = len(xs) + syn_cfg.n_iterations * syn_cfg.per_iteration
    if oracle.remaining is not None and oracle.remaining < needed:
        raise BudgetExhaustedError(
            f"plan needs {needed} target queries but only {oracle.remaining} remain",
            remaining=oracle.remaining,
        )
    model, data, start = _pretrain(oracle, xs, model_spec, train_cfg)
    counter = QueryCounter()
    rng = np.random.default_rng(syn_cfg.seed)
    trace = AugmentationTrace()
    trace.append(TraceRow(0, oracle.query_count - start, counter.count, len(data)))
    for iteration in range(1, syn_cfg.n_iterations + 1):
        if model_spec.classes == 2:
            new = [
                _synthesize_one(data, model, syn_cfg, rng, counter, None)
                for _ in range(syn_cfg.per_iteration)
            ]
        else:
            new = synthesize_one_vs_one(data, model, model_spec.classes, syn_cfg, rng, counter)
        new = np.stack(new)
        new_labels = oracle.query_labels(new)
        data = data.extended(new, new_labels)
        if syn_cfg.retrain == "from-scratch":
            model = SoftmaxClassifier(model_spec)
        model.fit(data, train_cfg)
        trace.append(
            TraceRow(
                iteration,
                oracle.query_count - start,
                counter.count,
                len(data),
                synthesized=new,
                new_labels=new_labels,
            )
        )
    return model, trace


def train_substitute_jacobian(
    oracle,
    initial_epochs,
    model_spec: ModelSpec,
    train_cfg: TrainConfig,
    jac_cfg: JacobianConfig,
) -> tuple[SoftmaxClassifier, AugmentationTrace]:
    """Baseline substitute training by repeated signed-gradient augmentation.

    Each round doubles the labeled set, so after N uncapped rounds the new
    target queries total ``len(initial) * (2**N - 1)``.  When ``query_cap``
    is set, the final round is subsampled (seeded) to stay within it.
    """
    model, data, start = _pretrain(oracle, initial_epochs, model_spec, train_cfg)
    counter = QueryCounter()
    cap_rng = np.random.default_rng(jac_cfg.seed)
    trace = AugmentationTrace()
    trace.append(TraceRow(0, oracle.query_count - start, counter.count, len(data)))
    spent = 0
    for iteration in range(1, jac_cfg.n_iterations + 1):
        if jac_cfg.query_cap is not None and spent >= jac_cfg.query_cap:
            break
        new = jacobian_augment(data, model, jac_cfg.step_size, counter)
        if jac_cfg.query_cap is not None and spent + len(new) > jac_cfg.query_cap:
            keep = cap_rng.choice(len(new), size=jac_cfg.query_cap - spent, replace=False)
            new = [new[i] for i in np.sort(keep)]
        new = np.stack(new)
        new_labels = oracle.query_labels(new)
        spent += len(new)
        data = data.extended(new, new_labels)
        if jac_cfg.retrain == "from-scratch":
            model = SoftmaxClassifier(model_spec)
        model.fit(data, train_cfg)
        trace.append(
            TraceRow(
                iteration,
                oracle.query_count - start,
                counter.count,
                len(data),
                synthesized=new,
                new_labels=new_labels,
            )
        )
    return model, trace
