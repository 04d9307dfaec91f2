from .inputs import RolloutInputs, assemble_inputs
from .kernels import BACKEND
from .networks import NetworkSet, default_normalizer, price_at_zero
