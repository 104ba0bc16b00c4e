"""Active thermal-preference elicitation.

Learns an occupant's latent thermal utility over indoor air temperature from
ternary warmer / satisfied / cooler responses, under a unimodality constraint
imposed through virtual derivative observations and a latent monotonic GP.
Inference is Hamiltonian Monte Carlo; queries are chosen by expected utility
improvement until the preferred temperature is localized.
"""

# Double precision everywhere: the saturated probit factors (constants ~1e6)
# and near-singular derivative covariances are not usable in float32.
import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
