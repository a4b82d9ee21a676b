# Licensed under the Apache License, Version 2.0 (the "License"); you
# may not use this file except in compliance with the License.  You
# may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.  See the License for the specific language governing
# permissions and limitations under the License.

"""Conditional matrix flows over SPD matrices.

Annealed variational inference for sparse precision-matrix estimation:
one conditional normalizing flow covers the whole (lambda, q) family of
shrinkage priors, from Bayesian posteriors (T = 1) down to penalized-
likelihood solution paths in the low-temperature limit.
"""

from ._cmflow import *  # noqa: F401,F403
from ._cmflow import __doc__ as _core_doc  # noqa: F401

__version__ = "0.1.0"
