"""Numerical toolkit for generalized smooth functions on an eps-grid.

Generalized numbers are represented by samples on a finite geometric grid
of eps values; asymptotic statements are checked on the tail of the grid.
"""

from .gauge_ring import (EpsGrid, Gauge, GenNum, make_gauge, classify, gen_eq, gen_le,
                         gen_lt, standard_part, NoStandardPartError)
from .gsf_core import GsfFamily, IntervalDomain, make_gsf, derivative, integrate
from .mollifier_embed import (MollifierSpec, build_mollifier, EmbeddingParams, Dirac,
                              Heaviside, Derivative, Function, embed)
from .varcalc import Lagrangian, solve_el_bvp, minimizer_report, noether_charge
from .riemann_app import MetricSpec, regularize_metric, geodesic_bvp, classical_geodesic

__version__ = "0.1.0"
