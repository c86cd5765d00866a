"""Block-group deprivation indices and their spatial statistics.

The package is organised by pipeline stage:

- :mod:`deprivity.ingest` -- GeoJSON/CSV parsing, census API fetching, joins
- :mod:`deprivity.contiguity` -- queen/rook/inverse-distance weights
- :mod:`deprivity.deprivation` -- SD4/SD6/PCA4/PCA6 index construction
- :mod:`deprivity.autocorr` -- Moran's I, G*, hot/cold spots
- :mod:`deprivity.stattests` -- correlations, Kruskal-Wallis, Jarque-Bera, Jenks
- :mod:`deprivity.pipeline` / :mod:`deprivity.cli` -- the end-to-end driver
"""

from deprivity.errors import DeprivityError

__version__ = "0.1.0"

__all__ = ["DeprivityError", "__version__"]
