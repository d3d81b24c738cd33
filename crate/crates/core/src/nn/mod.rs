//! A small fixed-layer neural network engine with hand-written reverse-mode
//! gradients. Everything is `f64` and single threaded so runs are
//! bit-reproducible.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;

use rand::Rng;

pub use checkpoint::{Checkpoint, CheckpointError, NamedTensor};
pub use gradcheck::{grad_check, relative_error};
pub use layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, embedding_backward, embedding_forward,
    maxpool1d_backward, maxpool1d_forward, mse_loss, relu_backward, relu_forward, Conv1d, Dense, Embedding,
    Pooled,
};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, Optimizer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NnError {
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence of length {len} is shorter than window {window}")]
    SequenceTooShort { len: usize, window: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Row-major values with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                values.len()
            )));
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            values,
            grad: None,
        })
    }

    /// A parameter tensor: uniform in `±sqrt(1/fan_in)` with a zeroed
    /// gradient buffer.
    pub fn uniform_param<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        DenseTensor {
            shape: shape.to_vec(),
            values,
            grad: Some(vec![0.0; n]),
        }
    }

    pub fn zero_param(shape: &[usize]) -> Self {
        let mut t = DenseTensor::zeros(shape);
        t.grad = Some(vec![0.0; t.values.len()]);
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(vec![0.0; self.values.len()]),
        }
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }
}

/// A strided view for [`gemm`]: element `(i, j)` is at `offset + i*rs + j*cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strided {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Strided {
    pub fn row_major(cols: usize) -> Self {
        Strided {
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C = alpha * A·B + beta * C` for an `m×k` A and `k×n` B over strided
/// views. `C`'s view must not alias itself.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: Strided,
    b: &[f64],
    bv: Strided,
    beta: f64,
    c: &mut [f64],
    cv: Strided,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c[cv.offset + i * cv.rs + j * cv.cs];
                *x *= beta;
            }
        }
        return;
    }
    assert!(av.last(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(bv.last(k, n) < b.len(), "gemm: B view out of bounds");
    assert!(cv.last(m, n) < c.len(), "gemm: C view out of bounds");
    // SAFETY: the asserts above keep every addressed element inside its
    // slice; A and B are only read; C is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
