from .blocks import (
    CBAM3d,
    ResidualBlock,
    SelfAttention3d,
    VoxelShuffle,
    pool_to,
    voxel_shuffle,
    voxel_unshuffle,
)
from .lr_net import (
    LRNet,
    LRNetConfig,
    build_radiounet3d,
    build_single_stage,
    lr_param_report,
    lr_preprocess,
    stack_lr_inputs,
)
from .sr_net import (
    DenseFeatureRefiner,
    DualPathFeatureExtractor,
    HighResGenerator,
    ResidualDenseBlock,
    RRDB,
    SRNet,
    SRNetConfig,
    UpsampleBlock,
)
