//! Neural network layers with hand-derived backward passes.
//!
//! Forward passes run in either [`Mode::Train`] or [`Mode::Eval`]. Only a
//! Train forward writes the caches that the matching backward consumes;
//! calling backward without a cached forward is reported as a state error
//! rather than silently producing garbage. Parameter gradients accumulate
//! (`+=`) so several backward calls between `zero_grad`s sum their
//! contributions.
//!
//! Sequence tensors are `[batch, channels, length]`; matrix tensors are
//! `[batch, features]`. All shapes are validated on entry.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// Whether a forward pass is part of training or inference.
///
/// Train enables dropout and caches activations for backward; Eval is
/// deterministic, consumes no randomness, and leaves caches untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Samples Glorot-uniform entries: `U(-limit, limit)` with
/// `limit = sqrt(6 / (fan_in + fan_out))`.
fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

fn rank3<'a, T: Scalar>(x: &'a Tensor<T>, who: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, l] => Ok((b, c, l)),
        _ => Err(Error::InvalidShape(format!(
            "{who} expects [batch, channels, length], got {:?}",
            x.shape()
        ))),
    }
}

fn rank2<'a, T: Scalar>(x: &'a Tensor<T>, who: &str) -> Result<(usize, usize)> {
    match *x.shape() {
        [b, n] => Ok((b, n)),
        _ => Err(Error::InvalidShape(format!(
            "{who} expects [batch, features], got {:?}",
            x.shape()
        ))),
    }
}

fn missing_cache(who: &str) -> Error {
    Error::InvalidState(format!(
        "{who}: backward called without a cached train-mode forward"
    ))
}

/// 1-D convolution, kernel 3, stride 1, zero padding 1 on both ends, so
/// the output length equals the input length.
///
/// Implemented as cross-correlation: `y[b,o,t] = bias[o] +
/// sum_{c,k} w[o,c,k] * x[b,c,t+k-1]`, out-of-range taps reading zero.
#[derive(Debug)]
pub struct Conv1d<T: Scalar> {
    pub w: Tensor<T>,  // [out_channels, in_channels, 3]
    pub b: Tensor<T>,  // [out_channels]
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
    cache: Option<Tensor<T>>,
}

pub const CONV_KERNEL: usize = 3;

impl<T: Scalar> Conv1d<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Result<Self> {
        let fan_in = in_channels * CONV_KERNEL;
        let fan_out = out_channels * CONV_KERNEL;
        Ok(Conv1d {
            w: glorot(&[out_channels, in_channels, CONV_KERNEL], fan_in, fan_out, rng)?,
            b: Tensor::zeros(&[out_channels])?,
            dw: Tensor::zeros(&[out_channels, in_channels, CONV_KERNEL])?,
            db: Tensor::zeros(&[out_channels])?,
            cache: None,
        })
    }

    /// Builds from explicit parameters; used by tests and the weight loader.
    pub fn from_parts(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        match *w.shape() {
            [o, _, k] if k == CONV_KERNEL && b.shape() == [o] => {}
            _ => {
                return Err(Error::InvalidShape(format!(
                    "conv1d wants w [out, in, {CONV_KERNEL}] and b [out], got {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )))
            }
        }
        let dw = Tensor::zeros(w.shape())?;
        let db = Tensor::zeros(b.shape())?;
        Ok(Conv1d { w, b, dw, db, cache: None })
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (bsz, cin, l) = rank3(x, "conv1d")?;
        if cin != self.in_channels() {
            return Err(Error::InvalidShape(format!(
                "conv1d built for {} input channels, got {cin}",
                self.in_channels()
            )));
        }
        let cout = self.out_channels();
        let mut y = vec![T::zero(); bsz * cout * l];
        let xd = x.data();
        let wd = self.w.data();
        for bi in 0..bsz {
            for co in 0..cout {
                let yrow = &mut y[(bi * cout + co) * l..(bi * cout + co + 1) * l];
                yrow.fill(self.b.data()[co]);
                for ci in 0..cin {
                    let xrow = &xd[(bi * cin + ci) * l..(bi * cin + ci + 1) * l];
                    let wk = &wd[(co * cin + ci) * CONV_KERNEL..(co * cin + ci + 1) * CONV_KERNEL];
                    let (w0, w1, w2) = (wk[0], wk[1], wk[2]);
                    // k = 0 reads x[t-1]; first output sample sees padding
                    for (yv, &xv) in yrow[1..].iter_mut().zip(&xrow[..l - 1]) {
                        *yv += w0 * xv;
                    }
                    // k = 1 reads x[t]
                    for (yv, &xv) in yrow.iter_mut().zip(xrow) {
                        *yv += w1 * xv;
                    }
                    // k = 2 reads x[t+1]; last output sample sees padding
                    for (yv, &xv) in yrow[..l - 1].iter_mut().zip(&xrow[1..]) {
                        *yv += w2 * xv;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Tensor::from_vec(&[bsz, cout, l], y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("conv1d"))?;
        let (bsz, cin, l) = rank3(x, "conv1d")?;
        let cout = self.out_channels();
        if dy.shape() != [bsz, cout, l] {
            return Err(Error::InvalidShape(format!(
                "conv1d backward expects dy {:?}, got {:?}",
                [bsz, cout, l],
                dy.shape()
            )));
        }
        let xd = x.data();
        let dyd = dy.data();
        let wd = self.w.data();
        let dwd = self.dw.data_mut();
        let dbd = self.db.data_mut();
        let mut dx = vec![T::zero(); bsz * cin * l];
        for bi in 0..bsz {
            for co in 0..cout {
                let dyrow = &dyd[(bi * cout + co) * l..(bi * cout + co + 1) * l];
                let mut dbias = T::zero();
                for &g in dyrow {
                    dbias += g;
                }
                dbd[co] += dbias;
                for ci in 0..cin {
                    let xrow = &xd[(bi * cin + ci) * l..(bi * cin + ci + 1) * l];
                    let dxrow = &mut dx[(bi * cin + ci) * l..(bi * cin + ci + 1) * l];
                    let wk = &wd[(co * cin + ci) * CONV_KERNEL..(co * cin + ci + 1) * CONV_KERNEL];

                    // dw[k] = sum_t dy[t] * x[t+k-1], clipped to valid taps
                    let mut g0 = T::zero();
                    for (&g, &xv) in dyrow[1..].iter().zip(&xrow[..l - 1]) {
                        g0 += g * xv;
                    }
                    let mut g1 = T::zero();
                    for (&g, &xv) in dyrow.iter().zip(xrow) {
                        g1 += g * xv;
                    }
                    let mut g2 = T::zero();
                    for (&g, &xv) in dyrow[..l - 1].iter().zip(&xrow[1..]) {
                        g2 += g * xv;
                    }
                    let base = (co * cin + ci) * CONV_KERNEL;
                    dwd[base] += g0;
                    dwd[base + 1] += g1;
                    dwd[base + 2] += g2;

                    // dx[s] collects w0*dy[s+1] + w1*dy[s] + w2*dy[s-1]
                    let (w0, w1, w2) = (wk[0], wk[1], wk[2]);
                    for (dxv, &g) in dxrow[..l - 1].iter_mut().zip(&dyrow[1..]) {
                        *dxv += w0 * g;
                    }
                    for (dxv, &g) in dxrow.iter_mut().zip(dyrow) {
                        *dxv += w1 * g;
                    }
                    for (dxv, &g) in dxrow[1..].iter_mut().zip(&dyrow[..l - 1]) {
                        *dxv += w2 * g;
                    }
                }
            }
        }
        Tensor::from_vec(&[bsz, cin, l], dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Max pooling with window 2 and stride 2.
///
/// Output length is `floor(L / 2)`; a trailing odd sample is dropped.
/// Ties route the gradient to the earlier of the two inputs.
#[derive(Debug)]
pub struct MaxPool1d {
    // one byte per output element: offset (0 or 1) of the winning input
    cache: Option<(Vec<usize>, Vec<u8>)>,
}

impl MaxPool1d {
    pub fn new() -> Self {
        MaxPool1d { cache: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (bsz, c, l) = rank3(x, "maxpool1d")?;
        if l < 2 {
            return Err(Error::InvalidShape(format!(
                "maxpool1d needs length >= 2, got {l}"
            )));
        }
        let lo = l / 2;
        let xd = x.data();
        let mut y = vec![T::zero(); bsz * c * lo];
        let mut choice = vec![0u8; bsz * c * lo];
        for row in 0..bsz * c {
            let xrow = &xd[row * l..(row + 1) * l];
            let yrow = &mut y[row * lo..(row + 1) * lo];
            let crow = &mut choice[row * lo..(row + 1) * lo];
            for t in 0..lo {
                let a = xrow[2 * t];
                let b = xrow[2 * t + 1];
                if a >= b {
                    yrow[t] = a;
                    crow[t] = 0;
                } else {
                    yrow[t] = b;
                    crow[t] = 1;
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some((vec![bsz, c, l], choice));
        }
        Tensor::from_vec(&[bsz, c, lo], y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (in_shape, choice) = self.cache.as_ref().ok_or_else(|| missing_cache("maxpool1d"))?;
        let (bsz, c, l) = (in_shape[0], in_shape[1], in_shape[2]);
        let lo = l / 2;
        if dy.shape() != [bsz, c, lo] {
            return Err(Error::InvalidShape(format!(
                "maxpool1d backward expects dy {:?}, got {:?}",
                [bsz, c, lo],
                dy.shape()
            )));
        }
        let dyd = dy.data();
        let mut dx = vec![T::zero(); bsz * c * l];
        for row in 0..bsz * c {
            let dyrow = &dyd[row * lo..(row + 1) * lo];
            let crow = &choice[row * lo..(row + 1) * lo];
            let dxrow = &mut dx[row * l..(row + 1) * l];
            for t in 0..lo {
                dxrow[2 * t + crow[t] as usize] = dyrow[t];
            }
        }
        Tensor::from_vec(&[bsz, c, l], dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Rectified linear unit, `y = max(x, 0)`, any shape.
///
/// The subgradient at exactly zero is taken as zero.
#[derive(Debug)]
pub struct Relu {
    cache: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { cache: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
        if mode == Mode::Train {
            let mask = x.data().iter().map(|&v| v > T::zero()).collect();
            self.cache = Some((x.shape().to_vec(), mask));
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = self.cache.as_ref().ok_or_else(|| missing_cache("relu"))?;
        if dy.shape() != &shape[..] {
            return Err(Error::InvalidShape(format!(
                "relu backward expects dy {shape:?}, got {:?}",
                dy.shape()
            )));
        }
        let data = dy
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &keep)| if keep { g } else { T::zero() })
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Inverted dropout.
///
/// In Train mode each element is zeroed with probability `p` and the
/// survivors are scaled by `1/(1-p)`, so activations keep their expected
/// value and Eval mode is a plain identity that consumes no randomness.
#[derive(Debug)]
pub struct Dropout<T: Scalar> {
    p: f64,
    cache: Option<Tensor<T>>, // the applied mask, already scaled
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidRange(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        Ok(Dropout { p, cache: None })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return Ok(x.clone());
        }
        let mask = if self.p == 0.0 {
            // degenerate case: identity mask, no draws consumed
            Tensor::filled(x.shape(), T::one())?
        } else {
            let scale = T::from_f64(1.0 / (1.0 - self.p));
            let data = x
                .data()
                .iter()
                .map(|_| {
                    if rng.next_f64() < self.p {
                        T::zero()
                    } else {
                        scale
                    }
                })
                .collect();
            Tensor::from_vec(x.shape(), data)?
        };
        let y = x.mul_elem(&mask)?;
        self.cache = Some(mask);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.cache.as_ref().ok_or_else(|| missing_cache("dropout"))?;
        if dy.shape() != mask.shape() {
            return Err(Error::InvalidShape(format!(
                "dropout backward expects dy {:?}, got {:?}",
                mask.shape(),
                dy.shape()
            )));
        }
        dy.mul_elem(mask)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Reshapes `[batch, channels, length]` to `[batch, channels * length]`.
///
/// Row-major layout means the flattened features run channel-major, then
/// position, with no data movement.
#[derive(Debug)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten { cache: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (bsz, c, l) = rank3(x, "flatten")?;
        if mode == Mode::Train {
            self.cache = Some(x.shape().to_vec());
        }
        x.reshape(&[bsz, c * l])
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.as_ref().ok_or_else(|| missing_cache("flatten"))?;
        let (bsz, c, l) = (shape[0], shape[1], shape[2]);
        if dy.shape() != [bsz, c * l] {
            return Err(Error::InvalidShape(format!(
                "flatten backward expects dy {:?}, got {:?}",
                [bsz, c * l],
                dy.shape()
            )));
        }
        dy.reshape(shape)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Fully connected layer, `y = x W + b`.
#[derive(Debug)]
pub struct Dense<T: Scalar> {
    pub w: Tensor<T>,  // [in_features, out_features]
    pub b: Tensor<T>,  // [out_features]
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Dense {
            w: glorot(&[in_features, out_features], in_features, out_features, rng)?,
            b: Tensor::zeros(&[out_features])?,
            dw: Tensor::zeros(&[in_features, out_features])?,
            db: Tensor::zeros(&[out_features])?,
            cache: None,
        })
    }

    pub fn from_parts(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        match *w.shape() {
            [_, o] if b.shape() == [o] => {}
            _ => {
                return Err(Error::InvalidShape(format!(
                    "dense wants w [in, out] and b [out], got {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )))
            }
        }
        let dw = Tensor::zeros(w.shape())?;
        let db = Tensor::zeros(b.shape())?;
        Ok(Dense { w, b, dw, db, cache: None })
    }

    pub fn in_features(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (_, n) = rank2(x, "dense")?;
        if n != self.in_features() {
            return Err(Error::InvalidShape(format!(
                "dense built for {} input features, got {n}",
                self.in_features()
            )));
        }
        let mut y = x.matmul(&self.w)?;
        let m = self.out_features();
        let bd = self.b.data();
        for row in y.data_mut().chunks_mut(m) {
            for (v, &bias) in row.iter_mut().zip(bd) {
                *v += bias;
            }
        }
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let (bsz, _) = rank2(x, "dense")?;
        let m = self.out_features();
        if dy.shape() != [bsz, m] {
            return Err(Error::InvalidShape(format!(
                "dense backward expects dy {:?}, got {:?}",
                [bsz, m],
                dy.shape()
            )));
        }
        // dW += x^T dy ; db += column sums of dy ; dx = dy W^T
        let xt = x.transpose2()?;
        self.dw.accumulate(&xt.matmul(dy)?)?;
        let dbd = self.db.data_mut();
        for row in dy.data().chunks(m) {
            for (acc, &g) in dbd.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let wt = self.w.transpose2()?;
        dy.matmul(&wt)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// One layer of a network, tagged with a name and a trainable flag.
///
/// The flag is what transfer learning flips: a frozen node still runs
/// forward and backward (gradients must flow through it to earlier
/// layers), but the optimizer skips its parameters.
#[derive(Debug)]
pub struct LayerNode<T: Scalar> {
    pub name: String,
    pub trainable: bool,
    pub kind: LayerKind<T>,
}

#[derive(Debug)]
pub enum LayerKind<T: Scalar> {
    Conv1d(Conv1d<T>),
    MaxPool1d(MaxPool1d),
    Relu(Relu),
    Dropout(Dropout<T>),
    Flatten(Flatten),
    Dense(Dense<T>),
}

/// Mutable view of one parameter tensor and its gradient buffer.
pub struct ParamSlot<'a, T: Scalar> {
    pub name: String,
    pub trainable: bool,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
}

impl<T: Scalar> LayerNode<T> {
    pub fn new(name: impl Into<String>, kind: LayerKind<T>) -> Self {
        LayerNode {
            name: name.into(),
            trainable: true,
            kind,
        }
    }

    /// Short tag naming the layer type; stable, used in weight manifests
    /// and architecture assertions.
    pub fn kind_tag(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv1d(_) => "conv1d",
            LayerKind::MaxPool1d(_) => "maxpool1d",
            LayerKind::Relu(_) => "relu",
            LayerKind::Dropout(_) => "dropout",
            LayerKind::Flatten(_) => "flatten",
            LayerKind::Dense(_) => "dense",
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        match &mut self.kind {
            LayerKind::Conv1d(l) => l.forward(x, mode),
            LayerKind::MaxPool1d(l) => l.forward(x, mode),
            LayerKind::Relu(l) => l.forward(x, mode),
            LayerKind::Dropout(l) => l.forward(x, mode, rng),
            LayerKind::Flatten(l) => l.forward(x, mode),
            LayerKind::Dense(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match &mut self.kind {
            LayerKind::Conv1d(l) => l.backward(dy),
            LayerKind::MaxPool1d(l) => l.backward(dy),
            LayerKind::Relu(l) => l.backward(dy),
            LayerKind::Dropout(l) => l.backward(dy),
            LayerKind::Flatten(l) => l.backward(dy),
            LayerKind::Dense(l) => l.backward(dy),
        }
    }

    pub fn zero_grad(&mut self) {
        match &mut self.kind {
            LayerKind::Conv1d(l) => {
                l.dw.fill(T::zero());
                l.db.fill(T::zero());
            }
            LayerKind::Dense(l) => {
                l.dw.fill(T::zero());
                l.db.fill(T::zero());
            }
            _ => {}
        }
    }

    pub fn clear_cache(&mut self) {
        match &mut self.kind {
            LayerKind::Conv1d(l) => l.clear_cache(),
            LayerKind::MaxPool1d(l) => l.clear_cache(),
            LayerKind::Relu(l) => l.clear_cache(),
            LayerKind::Dropout(l) => l.clear_cache(),
            LayerKind::Flatten(l) => l.clear_cache(),
            LayerKind::Dense(l) => l.clear_cache(),
        }
    }

    /// Parameter tensors of this node, in a fixed (w, b) order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        match &self.kind {
            LayerKind::Conv1d(l) => vec![
                (format!("{}.w", self.name), &l.w),
                (format!("{}.b", self.name), &l.b),
            ],
            LayerKind::Dense(l) => vec![
                (format!("{}.w", self.name), &l.w),
                (format!("{}.b", self.name), &l.b),
            ],
            _ => Vec::new(),
        }
    }

    /// Mutable parameter/gradient slots in the same order as [`params`].
    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        let name = self.name.clone();
        let trainable = self.trainable;
        match &mut self.kind {
            LayerKind::Conv1d(l) => vec![
                ParamSlot {
                    name: format!("{name}.w"),
                    trainable,
                    value: &mut l.w,
                    grad: &mut l.dw,
                },
                ParamSlot {
                    name: format!("{name}.b"),
                    trainable,
                    value: &mut l.b,
                    grad: &mut l.db,
                },
            ],
            LayerKind::Dense(l) => vec![
                ParamSlot {
                    name: format!("{name}.w"),
                    trainable,
                    value: &mut l.w,
                    grad: &mut l.dw,
                },
                ParamSlot {
                    name: format!("{name}.b"),
                    trainable,
                    value: &mut l.b,
                    grad: &mut l.db,
                },
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}
