"""Full model container and its canonical flat parameter ordering.

The flat vector concatenates, in order: recognition mean net, recognition
precision net, evolution (a_base, b_net, gamma_log, a0, gamma0_log), then
the observation model (decoder net and, for Gaussian emissions, log_sigma).
Each network contributes w0, b0, w1, b1, ... row-major.  ``alpha`` is a
hyperparameter, not a trained value, so it is not part of the vector.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from .dynamics import EvolutionModel, evolution_init
from .generative import GaussianObs, PoissonObs, gaussian_obs_init, poisson_obs_init
from .errors import InvalidConfigError
from .nn import flatten_params, set_flat_params
from .recognition import RecognitionNet, recognition_init


@dataclass
class VindModel:
    recognition: RecognitionNet
    evolution: EvolutionModel
    observation: Union[GaussianObs, PoissonObs]

    @property
    def d_x(self):
        return self.recognition.d_x

    @property
    def d_z(self):
        return self.evolution.d_z

    def parameters(self):
        out = [(f"recognition.{n}", p) for n, p in self.recognition.parameters()]
        out += [(f"evolution.{n}", p) for n, p in self.evolution.parameters()]
        out += [(f"observation.{n}", p) for n, p in self.observation.parameters()]
        return out

    def param_tensors(self):
        return [p for _, p in self.parameters()]

    @property
    def n_params(self):
        return sum(p.data.size for p in self.param_tensors())

    def get_flat(self):
        return flatten_params(self.param_tensors())

    def set_flat(self, vec):
        set_flat_params(self.param_tensors(), vec)


def init_model(d_x, d_z, alpha, obs_model="gaussian", rec_widths=(32, 32),
               b_widths=(32, 32), obs_widths=(32, 32), b_output_scale=1e-2,
               seed=0):
    """Deterministic model init; sub-seeds are spawned from the master seed."""
    if obs_model not in ("gaussian", "poisson"):
        raise InvalidConfigError(f"unknown observation model '{obs_model}'")
    ss = np.random.SeedSequence(seed)
    rec_seed, evo_seed, obs_seed = ss.spawn(3)
    recognition = recognition_init(d_x, d_z, widths=rec_widths, seed=rec_seed)
    evolution = evolution_init(d_z, alpha, widths=b_widths, seed=evo_seed,
                               output_scale=b_output_scale)
    if obs_model == "gaussian":
        observation = gaussian_obs_init(d_x, d_z, widths=obs_widths, seed=obs_seed)
    else:
        observation = poisson_obs_init(d_x, d_z, widths=obs_widths, seed=obs_seed)
    return VindModel(recognition=recognition, evolution=evolution, observation=observation)
