from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class SfmParams:
    """Social-force constants. Defaults are the usual literature values, not fitted ones."""

    desired_speed: float = 1.34      # v0, m/s
    relaxation_time: float = 0.5     # tau, s
    agent_strength: float = 3.0      # A_p, m/s^2
    agent_range: float = 0.3         # B_p, m
    wall_strength: float = 5.0       # A_w, m/s^2
    wall_range: float = 0.2          # B_w, m
    radius: float = 0.25             # r, m
    max_speed: float = 2.0           # v_max, m/s
    dt: float = 0.05                 # s
    arrival_radius: float = 0.5      # m

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"SfmParams.{name} must be strictly positive, got {value}")
        if self.dt > 0.1:
            raise ValueError(f"SfmParams.dt must be <= 0.1 s, got {self.dt}")
        if self.max_speed < self.desired_speed:
            raise ValueError("SfmParams.max_speed must be >= desired_speed")

    @property
    def agent_cutoff(self) -> float:
        """Center distance beyond which agents do not interact (3 ranges past contact)."""
        return 2.0 * self.radius + 3.0 * self.agent_range

    @property
    def wall_cutoff(self) -> float:
        return self.radius + 3.0 * self.wall_range

    def packed(self) -> np.ndarray:
        return np.array([
            self.desired_speed, self.relaxation_time, self.agent_strength, self.agent_range,
            self.wall_strength, self.wall_range, self.radius, self.max_speed, self.dt,
            self.arrival_radius, self.agent_cutoff, self.wall_cutoff,
        ], dtype=np.float64)
