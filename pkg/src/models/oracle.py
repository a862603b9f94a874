"""
Analytic oracle model for MPVIC Lab.
Single-member, zero-variance DynamicsModel that integrates the true plant.
"""

import numpy as np

from src.models.impedance_dynamics import PlantConfig, damping_from_stiffness, integrate
from src.models.penn import DynamicsModel


class AnalyticPlantModel(DynamicsModel):
    n_members = 1
    deterministic = True

    def __init__(self, plant: PlantConfig = None, control_period: float = 0.1, substep: float = 1e-3):
        self.plant = plant or PlantConfig()
        self.control_period = float(control_period)
        self.substep = float(substep)

    def predict_partitioned(self, S, U):
        S = np.asarray(S, dtype=float)
        U = np.asarray(U, dtype=float)
        K, f, target = U[..., 0:3], U[..., 3:6], U[..., 6:9]
        pos, vel = integrate(
            S[..., :3], S[..., 3:], target, K, damping_from_stiffness(K),
            np.asarray(self.plant.inertia, dtype=float), f, self.control_period, self.substep,
        )
        mean = np.concatenate([pos, vel], axis=-1) - S
        return mean, np.zeros_like(mean)
