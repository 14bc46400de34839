from .operator import (DENSE_LIMIT, DiscreteOperator, GridSpec, SpectralData, assemble,
                       extend_operator, gradient_form, interval_operator, l2_norm, spectral_data)
from .calculus import (AlmostAnalyticExtension, apply_function, dbar_slope, dyadic_extension,
                       fractional_power, hs_apply, littlewood_paley)
from .scans import commutator_scan, resolvent_check
from .polar import PolarExterior
