"""Conditional diffusion restoration engine for degraded frame sequences."""

__version__ = "0.1.0"

from .video import (
    FlowField,
    VideoTensor,
    VideoIOError,
    clamp_model_range,
    read_flow,
    read_video,
    write_flow,
    write_video,
)
from .operators import (
    ComposedOperator,
    DegradationOperator,
    JpegOperator,
    Kernel,
    OperatorError,
    add_noise,
    compose,
    delta_kernel,
    make_gaussian_kernel,
    make_motion_kernel,
    read_kernel,
    write_kernel,
)
from .jpeg import JpegCodec, JpegStream, jpeg_decode, jpeg_encode, quantization_table
from .schedule import (
    InferenceSchedules,
    NoiseSchedule,
    ScheduleError,
    TimestepPlan,
    build_schedules,
    ddim_step,
    forward_sample,
    linear_schedule,
    loss_eval,
    noisy_step,
    predict_x0,
    reschedule,
)
from .backends import (
    BackendError,
    IdentityEnhancer,
    OracleDenoiser,
    ShrinkageDenoiser,
    SubprocessDenoiser,
    SubprocessEnhancer,
    UnsharpEnhancer,
    ZeroDenoiser,
)
from .sampler import (
    RestorationProblem,
    RestoreError,
    SamplerConfig,
    build_condition,
    data_consistency,
    enhance_blend,
    guided_epsilon,
    restore,
)
from .bicubic import bicubic_kernel, cubic_weight, upscale_bicubic
from .metrics import MetricReport, evaluate, psnr, ssim, warping_error
from .synthetic import smooth_motion_video, smooth_pattern, translation_flow
