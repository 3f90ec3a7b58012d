pub mod circuits;
pub mod error;
pub mod ground_states;
pub mod io;
pub mod mps;
pub mod oracle;
pub mod pauli;
pub mod stabilizer;
pub mod tensor;

pub use error::{MagicError, Result};
pub use tensor::{contract, svd_truncated, DenseTensor, Field, SvdResult, TruncationPolicy};
