//! Compressed N:M storage, compliance checks and sparse kernels.

mod bench;
mod compressed;
mod kernels;
mod verify;

pub use bench::{bench, BenchReport};
pub use compressed::{compress, decompress, index_bits, CompressedNM, MAGIC, VERSION};
pub use kernels::{conv2d_sparse, conv_output_size, dense_gemm, im2col, spmm, Matrix, Tensor3};
pub use verify::{verify, ComplianceReport};
