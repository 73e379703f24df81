"""Spherical contour descriptors and low-rank shape bases for voxel masks.

The package encodes 3D binary masks as radial contour descriptors on a
fixed spherical angle grid, extracts low-rank SVD bases from descriptor
corpora, reconstructs masks from coefficients, and refines multi-instance
segmentations for intra-instance label consistency.
"""

from .basis import (ContourBasis, ContourMatrix, build_matrix, fit_pca, fit_svd,
                    project, read_basis, reconstruct, write_basis)
from .centroid import CentroidSolution, objective, select_delta, spherical_centroid
from .codec import (AngleGrid, ContourDescriptor, SphericalPoint, cart_to_sph,
                    decode, encode, read_descriptors, sph_to_cart,
                    write_descriptors)
from .errors import (CorruptFileError, DegeneratePointError, EmptyMaskError,
                     GenerationError, InvalidInputError, NumericalError,
                     ParityError, SphContourError)
from .metrics import (MetricReport, center_loss, contour_loss, dice,
                      evaluate_labels, hausdorff, subsample_boundary)
from .recon import (TriangleMesh, marching_cubes, radial_field, radial_fill,
                    voxelize_fill, write_stl)
from .refine import (GaussianPrompt, InstanceRecord, OraclePredictor, Predictor,
                     RefineConfig, RefinementPlan, binarized_attention,
                     gaussian_prompt, plan_windows, records_from_volume,
                     refine_volume)
from .rng import SplitMix64
from .synth import (CorpusSpec, SpineSpec, VertebraParams, corrupt, make_corpus,
                    make_hook_shape, make_spine, make_vertebra,
                    mean_instance_size, sample_vertebra_params,
                    star_convex_roundtrip_dice)
from .volume import (Patch, VoxelSet, VoxelVolume, boundary, connected_components,
                     crop_patch, dilate, mask_centroid, paste_patch, read_volume,
                     surface, voxel_centers_mm, write_volume)

__version__ = "0.1.0"
