//! Dense matrix arithmetic with explicit storage precision and operation
//! counting.
//!
//! Storage is row-major. Persistent state may live in FP64, FP32 or BF16;
//! every arithmetic result is produced at FP32 or better (FP64 if any operand
//! is FP64) and only rounded to BF16 when written back to storage.

mod bf16;
mod ledger;
mod ops;
mod precision;
mod storage;

pub use bf16::{bf16_quantize, bf16_round, bf16_to_f32};
pub use ledger::{CostCounts, CostLedger};
pub use ops::{
    elemwise, ema, identity_like, matmul, matmul_subspace, orthogonality_error, product,
    row_sum_of_squares, scale_cols, scale_rows, scaled, transpose,
};
pub use precision::Precision;
pub use storage::{StorageBuffer, StorageMatrix};
