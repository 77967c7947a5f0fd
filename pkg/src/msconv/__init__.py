"""Multi-scale convolution for feature pyramids, with a reverse-mode tape."""
from msconv.accounting import compare, count_macs, count_params, cost_report
from msconv.block import (MSConvConfig, MSConvParams, context_attention, init_msconv_params,
                          merge_channels, msconv_forward, scale_align)
from msconv.gradcheck import GradReport, gradcheck
from msconv.head import (HeadConfig, baseline_head_forward, init_baseline_params,
                         init_msconv_head_params, msconv_head_forward)
from msconv.io import read_tensor, write_tensor
from msconv.ops import (ConvWeights, bilinear_sample, conv2d, global_avg_pool, local_avg_pool,
                        modulated_deform_conv2d, resize)
from msconv.pyramid import connection_cost, gather, reduce_channels, scatter
from msconv.tensor import (NonFiniteError, Tensor, backward, no_grad, parameter,
                           tensor_create)

__version__ = "0.1.0"
