"""Sign-gradient adversarial perturbations and the random-sign control.

All three methods emit quantized steps: every perturbation component is
exactly ``-epsilon``, ``0`` or ``+epsilon`` (``sign(0) == 0``), so the
max-norm bound holds by construction.  The stored ``delta`` is computed
directly as ``epsilon * sign(...)`` and the perturbed epoch as
``original + delta``; nothing is clipped afterwards, signals have no box
bounds here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledSet, as_epoch_batch, write_epochs

_METHODS = ("fgsm", "ufgsm", "noise")


@dataclass(frozen=True)
class AttackConfig:
    """Perturbation bound and crafting method."""

    epsilon: float = 0.1
    method: str = "ufgsm"
    noise_seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.method not in _METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")


@dataclass(frozen=True)
class AdversarialExample:
    """One perturbed epoch; ``label_used`` is the loss label (None for noise)."""

    original: np.ndarray
    perturbed: np.ndarray
    delta: np.ndarray
    label_used: int | None


def _example(x: np.ndarray, delta: np.ndarray, label) -> AdversarialExample:
    return AdversarialExample(
        original=x.copy(), perturbed=x + delta, delta=delta, label_used=label
    )


def fgsm(model, x, label: int, epsilon: float) -> AdversarialExample:
    """Supervised one-step sign-gradient perturbation of max-norm ``epsilon``."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    grad = model.input_gradient(x, label)
    delta = epsilon * np.sign(grad)
    return _example(x, delta, int(label))


def ufgsm(model, x, epsilon: float) -> AdversarialExample:
    """Unsupervised variant: the model's own prediction replaces the true label."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    label = model.predict(x)
    grad = model.input_gradient(x, label)
    delta = epsilon * np.sign(grad)
    return _example(x, delta, label)


def random_noise(x, epsilon: float, rng: np.random.Generator) -> AdversarialExample:
    """Control perturbation: ``epsilon`` times the sign of a standard-normal draw."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    delta = epsilon * np.sign(rng.standard_normal(x.shape))
    return _example(x, delta, None)


def craft_batch(model, epochs, cfg: AttackConfig, true_labels=None) -> list[AdversarialExample]:
    """Apply the configured method to every epoch.

    ``fgsm`` needs ``true_labels``; ``ufgsm`` and ``noise`` ignore them.
    Gradient-based methods run batched for speed.  ``model`` may be None
    for the noise method.
    """
    xs = as_epoch_batch(epochs, model.spec.input_shape if model is not None else None)
    if cfg.method == "noise":
        rng = np.random.default_rng(cfg.noise_seed)
        return [random_noise(x, cfg.epsilon, rng) for x in xs]
    if cfg.method == "fgsm":
        if true_labels is None:
            raise ValueError("fgsm needs true labels")
        labels = np.asarray(true_labels, dtype=np.int64)
    else:
        labels = model.predict_batch(xs)
    grads = model.input_gradient_batch(xs, labels)
    deltas = cfg.epsilon * np.sign(grads)
    return [_example(xs[i], deltas[i], int(labels[i])) for i in range(len(xs))]


def perturbed_batch(examples) -> np.ndarray:
    """(n, C, T) array of the perturbed epochs."""
    return np.stack([e.perturbed for e in examples])


def save_adversarial_batch(out_dir, examples, cfg: AttackConfig, gradient_source: str) -> None:
    """Write originals and perturbed epochs as EPO1 files plus a JSON manifest.

    ``gradient_source`` names the model whose gradients produced the
    perturbations (the substitute in a black-box run); it is recorded so
    the provenance of every batch stays explicit.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = np.array(
        [e.label_used if e.label_used is not None else -1 for e in examples], dtype=np.int64
    )
    write_epochs(out / "originals.epo", LabeledSet(np.stack([e.original for e in examples]), labels))
    write_epochs(out / "perturbed.epo", LabeledSet(perturbed_batch(examples), labels))
    manifest = {
        "method": cfg.method,
        "epsilon": cfg.epsilon,
        "noise_seed": cfg.noise_seed,
        "count": len(examples),
        "gradient_source": gradient_source,
        "files": ["originals.epo", "perturbed.epo"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
