"""Parsing-head kernels and instance-level human-analysis evaluation.

A small CPU library in three parts: deterministic NCHW float64 kernels with
analytic backward passes (conv / transposed conv / BN / pooling / bilinear /
softmax loss), RoI machinery and head topologies built from them (aligned
pooling, finest-level pooling, the context+attention encoder block, the
decoupled branch variants), and the full evaluation suite (mIoU, part-level
AP, PCP, point-similarity AP).  Everything is verifiable at desk scale:
finite-difference gradient checks, brute-force oracles, and structural
invariants; see the ``checks`` module and the bundled test suite.
"""

from .branch import (
    Branch,
    BranchConfig,
    VARIANTS,
    bench_forward,
    branch_backward,
    branch_forward,
    branch_param_count,
    branch_tail_param_count,
    build_branch,
)
from .gce import (
    ASPPParams,
    GCEParams,
    NonLocalParams,
    aspp_backward,
    aspp_forward,
    gce_backward,
    gce_forward,
    init_aspp_params,
    init_gce_params,
    init_nonlocal_params,
    nonlocal_attention,
    nonlocal_backward,
    nonlocal_forward,
)
from .gradcheck import numeric_gradcheck
from .metrics import (
    DensePoseInstance,
    DensePosePoint,
    GPSConfig,
    InstanceParsing,
    SemSegMap,
    ap_p,
    ap_p_vol,
    app_score,
    densepose_ap,
    gps,
    instance_canvas,
    miou,
    paste_multi_person,
    pcp50,
)
from .roi import (
    AssignConfig,
    Box,
    FeaturePyramid,
    fpn_assign_level,
    pss_pool,
    relative_scale,
    roi_align,
    roi_align_backward,
    scale_cdf,
    subsample_parsing_rois,
)
from .tensor import (
    BNParams,
    ConvParams,
    IGNORE_LABEL,
    batchnorm_backward,
    batchnorm_inference,
    bilinear_resize,
    bilinear_resize_backward,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    global_avg_pool,
    global_avg_pool_backward,
    init_bn_params,
    init_conv_params,
    param_count,
    relu,
    relu_backward,
    softmax_cross_entropy,
)

__version__ = "0.1.0"
