"""Plain gradient descent with a stepped learning-rate decay."""

from __future__ import annotations


def lr_schedule(base_lr: float, step: int, decay_every: int = 100,
                decay_factor: float = 0.9) -> float:
    """Learning rate after `step` completed steps: multiplied by
    `decay_factor` once per `decay_every` steps (iterations during
    pretraining, epochs downstream)."""
    if base_lr <= 0:
        raise ValueError(f"learning rate must be positive, got {base_lr}")
    return base_lr * decay_factor ** (step // decay_every)


def sgd_step(named_params, lr: float) -> None:
    """In-place theta <- theta - lr * grad over (name, param, grad) triples."""
    for _, param, grad in named_params:
        param -= lr * grad
