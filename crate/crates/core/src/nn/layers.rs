use rand::Rng;

use super::{gemm, DenseTensor, NnError, Strided};

fn mismatch(msg: String) -> NnError {
    NnError::ShapeMismatch(msg)
}

/// Token embedding table, `vocab_size × embed_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: DenseTensor,
}

impl Embedding {
    pub fn new<R: Rng>(vocab_size: usize, embed_dim: usize, rng: &mut R) -> Self {
        Embedding {
            table: DenseTensor::uniform_param(&[vocab_size, embed_dim], 1, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape[1]
    }
}

/// Row `i` of the output is table row `ids[i]`.
pub fn embedding_forward(ids: &[u32], e: &Embedding) -> Result<DenseTensor, NnError> {
    let (vocab, dim) = e.table.dims2();
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        let row = id as usize;
        if row >= vocab {
            return Err(NnError::IdOutOfRange { id, vocab_size: vocab });
        }
        out.extend_from_slice(&e.table.values[row * dim..(row + 1) * dim]);
    }
    DenseTensor::from_vec(&[ids.len(), dim], out)
}

/// Scatter-adds `dout` rows into the table gradient.
pub fn embedding_backward(ids: &[u32], dout: &DenseTensor, e: &mut Embedding) {
    let dim = e.dim();
    let g = e.table.grad_mut();
    for (t, &id) in ids.iter().enumerate() {
        let row = id as usize * dim;
        for (acc, d) in g[row..row + dim].iter_mut().zip(&dout.values[t * dim..(t + 1) * dim]) {
            *acc += d;
        }
    }
}

/// Valid 1-D convolution. Kernel layout is `out_channels × in_channels × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: DenseTensor,
    pub bias: DenseTensor,
}

impl Conv1d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, k: usize, rng: &mut R) -> Self {
        Conv1d {
            kernel: DenseTensor::uniform_param(&[out_ch, in_ch, k], in_ch * k, rng),
            bias: DenseTensor::zero_param(&[out_ch]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape[2]
    }

    // Tap `j` of the kernel viewed as an `in × out` matrix.
    fn tap(&self, j: usize) -> Strided {
        let (inc, k) = (self.in_channels(), self.kernel_size());
        Strided {
            offset: j,
            rs: k,
            cs: inc * k,
        }
    }
}

/// `out[t][o] = bias[o] + Σ_{j<k, c} kernel[o][c][j] · x[t+j][c]`.
pub fn conv1d_forward(x: &DenseTensor, p: &Conv1d) -> Result<DenseTensor, NnError> {
    let (len, inc) = x.dims2();
    let (outc, k) = (p.out_channels(), p.kernel_size());
    if inc != p.in_channels() {
        return Err(mismatch(format!("conv1d expects {} input channels, got {inc}", p.in_channels())));
    }
    if len < k {
        return Err(NnError::SequenceTooShort { len, window: k });
    }
    let t_out = len - k + 1;
    let mut out = Vec::with_capacity(t_out * outc);
    for _ in 0..t_out {
        out.extend_from_slice(&p.bias.values);
    }
    for j in 0..k {
        gemm(
            t_out,
            inc,
            outc,
            1.0,
            &x.values,
            Strided {
                offset: j * inc,
                rs: inc,
                cs: 1,
            },
            &p.kernel.values,
            p.tap(j),
            1.0,
            &mut out,
            Strided::row_major(outc),
        );
    }
    DenseTensor::from_vec(&[t_out, outc], out)
}

/// Accumulates kernel and bias gradients; returns the input gradient.
pub fn conv1d_backward(x: &DenseTensor, p: &mut Conv1d, dout: &DenseTensor) -> DenseTensor {
    let (len, inc) = x.dims2();
    let (outc, k) = (p.out_channels(), p.kernel_size());
    let t_out = len - k + 1;
    assert_eq!(dout.shape, [t_out, outc], "conv1d_backward: dout shape");
    {
        let db = p.bias.grad_mut();
        for row in dout.values.chunks_exact(outc) {
            for (acc, d) in db.iter_mut().zip(row) {
                *acc += d;
            }
        }
    }
    let mut dx = DenseTensor::zeros(&[len, inc]);
    for j in 0..k {
        let tap = p.tap(j);
        // dW_j (in × out) += X_jᵀ · dout
        let dk = p.kernel.grad.get_or_insert_with(|| vec![0.0; p.kernel.values.len()]);
        gemm(
            inc,
            t_out,
            outc,
            1.0,
            &x.values,
            Strided {
                offset: j * inc,
                rs: 1,
                cs: inc,
            },
            &dout.values,
            Strided::row_major(outc),
            1.0,
            dk,
            tap,
        );
        // dX_j (t_out × in) += dout · W_jᵀ
        gemm(
            t_out,
            outc,
            inc,
            1.0,
            &dout.values,
            Strided::row_major(outc),
            &p.kernel.values,
            Strided {
                offset: j,
                rs: inc * k,
                cs: k,
            },
            1.0,
            &mut dx.values,
            Strided {
                offset: j * inc,
                rs: inc,
                cs: 1,
            },
        );
    }
    dx
}

/// Max-pool output plus, per output element, the input row it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub out: DenseTensor,
    pub argmax: Vec<usize>,
    pub in_len: usize,
}

/// Per channel max over windows of `window` rows every `stride` rows.
/// Ties go to the earliest row.
pub fn maxpool1d_forward(x: &DenseTensor, window: usize, stride: usize) -> Result<Pooled, NnError> {
    let (len, ch) = x.dims2();
    if window == 0 || stride == 0 {
        return Err(mismatch("pooling window and stride must be positive".into()));
    }
    if len < window {
        return Err(NnError::SequenceTooShort { len, window });
    }
    let n_out = (len - window) / stride + 1;
    let mut out = Vec::with_capacity(n_out * ch);
    let mut argmax = Vec::with_capacity(n_out * ch);
    for w in 0..n_out {
        let start = w * stride;
        for c in 0..ch {
            let mut best = start;
            for t in start + 1..start + window {
                if x.values[t * ch + c] > x.values[best * ch + c] {
                    best = t;
                }
            }
            out.push(x.values[best * ch + c]);
            argmax.push(best);
        }
    }
    Ok(Pooled {
        out: DenseTensor::from_vec(&[n_out, ch], out)?,
        argmax,
        in_len: len,
    })
}

pub fn maxpool1d_backward(p: &Pooled, dout: &DenseTensor) -> DenseTensor {
    let (_, ch) = p.out.dims2();
    let mut dx = DenseTensor::zeros(&[p.in_len, ch]);
    for (i, (&row, d)) in p.argmax.iter().zip(&dout.values).enumerate() {
        dx.values[row * ch + i % ch] += d;
    }
    dx
}

/// Fully connected layer, weight `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DenseTensor,
    pub bias: DenseTensor,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            weight: DenseTensor::uniform_param(&[outputs, inputs], inputs, rng),
            bias: DenseTensor::zero_param(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }
}

/// `y = x · Wᵀ + b` for `x` of shape `n × in`.
pub fn dense_forward(x: &DenseTensor, p: &Dense) -> Result<DenseTensor, NnError> {
    let (n, inputs) = x.dims2();
    if inputs != p.inputs() {
        return Err(mismatch(format!("dense expects {} inputs, got {inputs}", p.inputs())));
    }
    let outputs = p.outputs();
    let mut y = Vec::with_capacity(n * outputs);
    for _ in 0..n {
        y.extend_from_slice(&p.bias.values);
    }
    gemm(
        n,
        inputs,
        outputs,
        1.0,
        &x.values,
        Strided::row_major(inputs),
        &p.weight.values,
        Strided {
            offset: 0,
            rs: 1,
            cs: inputs,
        },
        1.0,
        &mut y,
        Strided::row_major(outputs),
    );
    DenseTensor::from_vec(&[n, outputs], y)
}

/// Accumulates weight and bias gradients; returns the input gradient.
pub fn dense_backward(x: &DenseTensor, p: &mut Dense, dout: &DenseTensor) -> DenseTensor {
    let (n, inputs) = x.dims2();
    let outputs = p.outputs();
    assert_eq!(dout.shape, [n, outputs], "dense_backward: dout shape");
    {
        let db = p.bias.grad_mut();
        for row in dout.values.chunks_exact(outputs) {
            for (acc, d) in db.iter_mut().zip(row) {
                *acc += d;
            }
        }
    }
    let dw = p.weight.grad.get_or_insert_with(|| vec![0.0; outputs * inputs]);
    gemm(
        outputs,
        n,
        inputs,
        1.0,
        &dout.values,
        Strided {
            offset: 0,
            rs: 1,
            cs: outputs,
        },
        &x.values,
        Strided::row_major(inputs),
        1.0,
        dw,
        Strided::row_major(inputs),
    );
    let mut dx = DenseTensor::zeros(&[n, inputs]);
    gemm(
        n,
        outputs,
        inputs,
        1.0,
        &dout.values,
        Strided::row_major(outputs),
        &p.weight.values,
        Strided::row_major(inputs),
        0.0,
        &mut dx.values,
        Strided::row_major(inputs),
    );
    dx
}

pub fn relu_forward(x: &DenseTensor) -> DenseTensor {
    DenseTensor {
        shape: x.shape.clone(),
        values: x.values.iter().map(|v| v.max(0.0)).collect(),
        grad: None,
    }
}

/// Gradient through ReLU given the layer's input; the subgradient at 0 is 0.
pub fn relu_backward(x: &DenseTensor, dout: &DenseTensor) -> DenseTensor {
    DenseTensor {
        shape: x.shape.clone(),
        values: x
            .values
            .iter()
            .zip(&dout.values)
            .map(|(v, d)| if *v > 0.0 { *d } else { 0.0 })
            .collect(),
        grad: None,
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(mismatch(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((loss / n, grad))
}
