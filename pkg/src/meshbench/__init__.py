"""meshbench: region-aware, bidirectional evaluation of 3D mesh reconstruction.

Core pipeline: rigid/region alignment (gicp, ricp), non-rigid region
deformation (nicp_deform), correspondence induction, and per-region error
reports (bicp_evaluate); plus region/keypoint transfer between meshes of one
shape, PCA morphable bases, and synthetic fixture generation.
"""

__version__ = "0.1.0"

from ._accel import ENV_FLAG, NUMBA_ENABLED
from .evaluate import (
    RegionEvaluation,
    RegionReport,
    bicp_evaluate,
    evaluate_region,
    gicp_stats,
    region_mean_stats,
)
from .mesh import (
    CorrespondenceMap,
    KeypointSet,
    MeshbenchError,
    RegionMask,
    TopologyError,
    TriangleMesh,
    connected_components,
    mesh_edges,
    one_ring_faces,
    submesh,
)
from .meshio import (
    Annotations,
    MeshFormatError,
    load_annotations,
    load_mesh,
    save_annotations,
    save_mesh,
)
from .morphable import (
    MorphableBasis,
    fit_to_mesh,
    fit_to_points,
    load_basis,
    pca_build,
    reconstruct,
    save_basis,
)
from .nicp import (
    DeformationState,
    NicpSchedule,
    NicpStage,
    induce_correspondences,
    nicp_deform,
)
from .rigid import (
    DegenerateGeometryError,
    DistanceStats,
    IcpParams,
    IcpResult,
    SimilarityTransform,
    correspondence_distances,
    distance_stats,
    gicp,
    nmse,
    ricp,
    solve_similarity,
)
from .spatial import (
    SpatialIndex,
    closest_point_on_triangle,
    map_target_coordinates,
    nearest_surface_point,
    nearest_surface_points,
    nearest_surface_points_bruteforce,
    nearest_vertex,
    nearest_vertices,
)
from .transfer import (
    SEMANTIC_SLOTS,
    KeypointTransfer,
    TransferError,
    crop_by_nose_radius,
    transfer_keypoints,
    transfer_region,
)
