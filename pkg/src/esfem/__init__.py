"""Classical and edge-based smoothed finite elements for scalar electrostatics
on triangle (axisymmetric r-z) and tetrahedron (3D Cartesian) meshes."""

__version__ = "0.1.0"

from .mesh import (DimensionMode, Mesh, MeshError, EdgeTopology, QualityReport,
                   generate_structured_mesh, extract_edges, perturb_interior_nodes, quality)
from .shapefn import triangle_gradients, tet_gradients, element_gradients
from .smoothing import (build_smoothing_domains, smoothed_gradient_matrix,
                        smoothed_gradient_operator, smoothed_gradient_boundary_oracle)
from .bvp import BoundaryCondition, BvpSpec, validate, box_spec, patch_affine_spec
from .assembly import (Method, SparseSystem, assemble, assemble_fem, assemble_esfem,
                       apply_boundary_conditions, build_system)
from .solver import SolveReport, solve
from .analysis import box_reference, rmse, patch_test, run_box_study, convergence_slope
from .mesh_io import import_mesh, export_mesh, export_vtk
