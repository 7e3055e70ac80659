"""Joint extraction of watertight and open meshes from SDF + mSDF tetrahedral grids."""
from .errors import (
    ConsistencyError,
    DataError,
    FormatError,
    GShellError,
    InvalidArgumentError,
    NumericError,
    PlacementCollisionError,
    UnsupportedVersionError,
)
from .extract import ExtractedMesh, clip_oracle, extract, extract_gshell, extract_watertight, project_msdf
from .grid import AnalyticField, TetGrid, build_uniform_tet_grid, sample_fields, shape_grid

__version__ = "0.1.0"
