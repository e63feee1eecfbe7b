//! Image operators built from the stream functionals.

pub mod gaussian;
pub mod geometry;
pub mod join;
pub mod kernel;
pub mod morph;
pub mod pointwise;
pub mod reduce;
pub mod shared;

pub use gaussian::{gaussian_kernel3d, gaussian_weights, Gaussian};
pub use geometry::{crop_stream, pad_stream, permute_stream, AxisOrder, PadMode, PadSpec, Region};
pub use join::{add_streams, join_stream, JoinFn};
pub use kernel::{kernel_stream, valid_depth, Convolution, FusedConvolution, Kernel3D, SlabKernel};
pub use morph::{MorphOp, RankFilter, StructuringElement};
pub use pointwise::{pointwise_stream, PointOp};
pub use reduce::{histogram_stage, sampled_mean, Histogram, HistogramFold, MeanAcc};
pub use shared::shared_window_streams;
