"""Two-step pass-through analysis for country-year panels.

Step one estimates heterogeneous dynamic regressions country by country and
averages them (mean group). Step two relates the estimated pass-throughs to
openness measures, by regression and by regression trees / bagged forests.
A synthetic-panel lab validates every estimator against known parameters.
"""

from passthru.errors import PassthruError

__version__ = "0.1.0"

__all__ = ["PassthruError", "__version__"]
