//! Dense matrices and a small reverse-mode tape used to train the velocity net.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{sigmoid, Gradients, ParamId, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("matrix data has {len} entries, expected {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("{0} of an empty matrix")]
    Empty(&'static str),
    #[error("backward needs a scalar root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
}

impl NumError {
    pub(crate) fn shape(op: &'static str, lhs: &Matrix, rhs: &Matrix) -> Self {
        Self::Shape {
            op,
            lhs: lhs.shape(),
            rhs: rhs.shape(),
        }
    }
}
