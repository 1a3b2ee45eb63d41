//! Dense row-major tensors over a selectable float type, plus the seeded
//! random number generator used everywhere in the crate.
//!
//! The element type is chosen through the [`Scalar`] trait: training runs
//! use `f32`, gradient checking instantiates the same code at `f64`. All
//! loops accumulate in a fixed order so that a given seed reproduces the
//! same bits on every run, regardless of thread count.

use crate::error::{Error, Result};
use rand_core::{RngCore, SeedableRng};
use std::fmt;

/// Floating-point element type for tensors and layers.
///
/// `f32` and `f64` implement it; the whole engine is generic over which.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Mixes a base seed with a textual tag into a new seed.
///
/// Used to give every fold, subject, and purpose its own independent
/// stream while staying a pure function of the experiment seed. The tag
/// is hashed with FNV-1a, xored into the base, and the result is
/// finalized with the SplitMix64 mixer so that adjacent seeds do not
/// produce correlated streams.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random number generator.
///
/// A thin wrapper around the ChaCha8 counter-based generator: fast,
/// splittable by seed, and identical across platforms. All randomness in
/// the crate (init, shuffles, dropout, synthesis) flows through this type
/// so a run is fully described by its seed.
#[derive(Clone, Debug)]
pub struct Rng {
    state: rand_chacha::ChaCha8Rng,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng {
            state: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// New generator for a sub-task, derived from `seed` and a tag.
    pub fn derive(seed: u64, tag: &str) -> Self {
        Rng::seed(derive_seed(seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    ///
    /// The top 53 bits of a `u64` are scaled by 2^-53; this is the
    /// standard exact conversion and never rounds to 1.0.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via Lemire's widening-multiply method,
    /// with rejection to remove modulo bias. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is meaningless");
        let mut x = self.next_u64();
        let mut m = (x as u128) * (n as u128);
        let mut lo = m as u64;
        if lo < n {
            let threshold = n.wrapping_neg() % n;
            while lo < threshold {
                x = self.next_u64();
                m = (x as u128) * (n as u128);
                lo = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Standard normal draw via the Box-Muller transform.
    ///
    /// Consumes two uniforms per call and returns one value; the sine
    /// branch is discarded to keep the generator stateless beyond the
    /// stream position.
    pub fn normal(&mut self) -> f64 {
        let u1 = (1.0 - self.next_f64()).max(f64::MIN_POSITIVE); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Dense tensor in row-major order: the last axis is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("tensor rank must be at least 1".into()));
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(Error::InvalidShape(format!(
                "zero-sized axis in shape {shape:?}"
            )));
        }
        n = n.checked_mul(d).ok_or_else(|| {
            Error::InvalidShape(format!("shape {shape:?} overflows element count"))
        })?;
    }
    Ok(n)
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        })
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// I.i.d. uniform entries in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidRange(format!(
                "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
            )));
        }
        let n = check_shape(shape)?;
        let data = (0..n).map(|_| T::from_f64(rng.uniform(lo, hi))).collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major element access by multi-index. Panics on a bad index;
    /// intended for tests and small fixtures, not inner loops.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (len {dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Same data, new shape; element counts must agree.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn check_same_shape(&self, rhs: &Self, op: &str) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(Error::InvalidShape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, rhs.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape(rhs, "add")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape(rhs, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn mul_elem(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape(rhs, "mul_elem")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn accumulate(&mut self, rhs: &Self) -> Result<()> {
        self.check_same_shape(rhs, "accumulate")?;
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| a * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Matrix product of two rank-2 tensors: `[n, k] x [k, m] -> [n, m]`.
    ///
    /// Plain ikj loop ordering; the inner loop runs over contiguous rows
    /// of both the output and the right-hand side, which autovectorizes.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, rhs.shape
            )));
        }
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::InvalidShape(format!(
                "matmul inner axes differ: {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for kk in 0..k {
                let a = self.data[i * k + kk];
                if a == T::zero() {
                    continue;
                }
                let brow = &rhs.data[kk * m..(kk + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "transpose2 needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Element-wise conversion to another scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| U::from_f64(a.to_f64())).collect(),
        }
    }
}
