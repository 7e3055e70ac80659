"""Adaptive-moment optimizer over named parameter groups, plus weight schedules."""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


def decay_factor(iteration: int, rate: float = 0.0002) -> float:
    """Learning-rate multiplier 10^(-rate * t)."""
    return float(10.0 ** (-rate * iteration))


class Adam:
    """Adam with one learning rate per named group.

    Parameters
    ----------
    shapes : dict
        group name -> array shape
    learning_rates : dict
        group name -> initial learning rate
    """

    def __init__(self, shapes: dict, learning_rates: dict, betas=(0.9, 0.99), epsilon: float = 1e-8, decay_rate: float = 0.0002):
        missing = set(shapes) - set(learning_rates)
        if missing:
            raise InvalidArgumentError(f"no learning rate for group(s) {sorted(missing)}")
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.learning_rates = dict(learning_rates)
        self.beta1, self.beta2 = betas
        self.epsilon = epsilon
        self.decay_rate = decay_rate
        self.t = 0

    def step(self, gradients: dict) -> dict:
        """Update the moments and return the change to apply to each group."""
        self.t += 1
        bias_correction_1 = 1 - self.beta1 ** self.t
        bias_correction_2 = 1 - self.beta2 ** self.t
        lr_scale = decay_factor(self.t - 1, self.decay_rate)

        updates = {}
        for name, gradient in gradients.items():
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * gradient
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * gradient**2
            m_hat = self.m[name] / bias_correction_1
            v_hat = self.v[name] / bias_correction_2
            updates[name] = -self.learning_rates[name] * lr_scale * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return updates


@dataclass(frozen=True)
class WeightSchedule:
    """Piecewise-constant weight: `steps` is [[from_iteration, weight], ...], first entry from 0."""

    steps: tuple

    @classmethod
    def parse(cls, value) -> "WeightSchedule":
        if isinstance(value, WeightSchedule):
            return value
        if isinstance(value, (int, float)):
            value = [[0, value]]
        steps = []
        for item in value:
            if len(item) != 2:
                raise InvalidArgumentError(f"schedule entry {item!r} must be [from_iteration, weight]")
            start = float(item[0])
            if not start.is_integer():
                raise InvalidArgumentError(f"schedule entry {item!r} must start at a whole iteration")
            steps.append((int(start), float(item[1])))
        if not steps or steps[0][0] != 0:
            raise InvalidArgumentError(f"schedule must start at iteration 0: {value!r}")
        starts = [s for s, _ in steps]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidArgumentError(f"schedule iterations must increase: {value!r}")
        if any(w < 0 for _, w in steps):
            raise InvalidArgumentError(f"schedule weights must be >= 0: {value!r}")
        return cls(tuple(steps))

    def __call__(self, iteration: int) -> float:
        weight = self.steps[0][1]
        for start, w in self.steps:
            if iteration >= start:
                weight = w
        return weight

    @property
    def is_zero(self) -> bool:
        return all(w == 0 for _, w in self.steps)

    def to_list(self) -> list:
        return [[s, w] for s, w in self.steps]
