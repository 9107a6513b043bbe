"""Orthogonal polynomial density approximations for sums of dependent lognormals."""

from .baselines import ConditionalMcDensity, FwFit, conditional_mc, fenton_wilkinson
from .errors import NumericalError, ValidationError
from .expand import (ExpansionEstimate, IntegrabilityReport, check_integrability,
                     estimate_coeffs_cmc, estimate_coeffs_tilted, fhat_gamma,
                     fhat_lognormal_demo, fhat_normal, select_gamma_reference,
                     select_normal_reference)
from .mvn import MvnSpec, RngStream
from .orthopoly import (Gamma, Lognormal, Normal, OrthonormalBasis, QuadRule,
                        gauss_hermite_rule, gram_schmidt_from_moments, hermite_basis,
                        laguerre_basis, lognormal_basis)
from .sln import (Clayton, DensityGrid, Gaussian, SlnSpec, oracle_density, sample_sln,
                  sln_moment, tail_constants)
from .tilt import TiltedModel, laplace_hat, laplace_tilde, minimize_h, tilted_moments

__version__ = "0.1.0"
