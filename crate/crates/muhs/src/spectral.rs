//! Fourier collocation on the unit-period circle.
//!
//! A [`Field`] is a real function sampled at `n` equispaced nodes `x_j = j/n`.
//! Its trigonometric interpolant
//!
//! ```text
//! f(x) = sum_k c_k exp(2 pi i k x),   k = -n/2 .. n/2 - 1
//! ```
//!
//! is the basis for every operation here: exact differentiation of the
//! interpolant, inversion of `A = mu - d_xx`, the zero-base antiderivative,
//! Sobolev norms via Parseval, off-grid evaluation, and 2/3-rule dealiasing.
//! Coefficients are cached per field, so repeated spectral operations on the
//! same data transform only once.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use thiserror::Error;

/// Mean magnitude above which [`Field::antideriv_zero_base`] refuses to run.
///
/// The antiderivative of a periodic function is periodic only when the mean
/// vanishes; anything larger than round-off here signals a logic error in the
/// caller rather than noise.
pub const MEAN_TOLERANCE: f64 = 1e-10;

/// Errors from spectral-space operations.
#[derive(Debug, Error)]
pub enum SpectralError {
    /// Antiderivative requested for a field whose mean is not (numerically)
    /// zero, so no periodic primitive exists.
    #[error("antiderivative requires zero mean, got mean {mean:e}")]
    NonZeroMean { mean: f64 },
    /// Grid size rejected at construction: the transform layout assumes an
    /// even number of nodes and the solver needs a handful of resolvable modes.
    #[error("grid size must be even and at least 8, got {n}")]
    InvalidGrid { n: usize },
}

/// Uniform periodic grid `x_j = j / n` on `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicGrid {
    n: usize,
}

impl PeriodicGrid {
    /// Creates a grid with `n` nodes; `n` must be even and at least 8.
    pub fn new(n: usize) -> Result<Self, SpectralError> {
        if n < 8 || n % 2 != 0 {
            return Err(SpectralError::InvalidGrid { n });
        }
        Ok(Self { n })
    }

    /// Number of collocation nodes.
    pub fn n_points(self) -> usize {
        self.n
    }

    /// Grid spacing `1 / n`.
    pub fn spacing(self) -> f64 {
        1.0 / self.n as f64
    }

    /// The `j`-th node `j / n`.
    pub fn node(self, j: usize) -> f64 {
        j as f64 / self.n as f64
    }

    /// All nodes in order.
    pub fn nodes(self) -> impl Iterator<Item = f64> {
        (0..self.n).map(move |j| j as f64 / self.n as f64)
    }

    /// Signed wavenumber for FFT bin `i`: `i` for `i <= n/2`, else `i - n`.
    ///
    /// Bin `n/2` (the Nyquist mode) is mapped to `+n/2`; operations that are
    /// sign-sensitive in `k` zero that bin instead of trusting the sign.
    pub fn wavenumber(self, i: usize) -> i64 {
        debug_assert!(i < self.n);
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }
}

thread_local! {
    // One FFT planner per thread: plans are cheap to share, and a
    // thread-local avoids cross-thread locking in parallel sweeps.
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    })
}

/// Forward transform of real samples, normalised so that entry `i` is the
/// interpolant coefficient `c_k` for `k = wavenumber(i)`.
fn forward(samples: &[f64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, false).process(&mut buf);
    let scale = 1.0 / n as f64;
    for c in &mut buf {
        *c *= scale;
    }
    buf
}

/// Inverse transform back to real samples (imaginary round-off discarded).
fn inverse(spectrum: &[Complex64]) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    plan(buf.len(), true).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Real periodic function given by its samples on a [`PeriodicGrid`].
///
/// Fields are immutable; every operation returns a new field. The coefficient
/// vector is computed lazily on first use and cached, so chained spectral
/// operations on the same field transform it only once. Clones copy whatever
/// the source had already computed.
#[derive(Debug, Clone)]
pub struct Field {
    grid: PeriodicGrid,
    samples: Vec<f64>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl Field {
    /// Wraps samples on `grid`; the sample count must match the grid.
    pub fn from_samples(grid: PeriodicGrid, samples: Vec<f64>) -> Self {
        assert_eq!(
            samples.len(),
            grid.n_points(),
            "sample count does not match grid"
        );
        Self {
            grid,
            samples,
            spectrum: OnceLock::new(),
        }
    }

    /// Builds a field by evaluating `f` at every node.
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_samples(grid, grid.nodes().map(f).collect())
    }

    /// Builds a field from interpolant coefficients (bin layout as in
    /// [`PeriodicGrid::wavenumber`]).
    pub fn from_spectrum(grid: PeriodicGrid, spectrum: Vec<Complex64>) -> Self {
        assert_eq!(
            spectrum.len(),
            grid.n_points(),
            "spectrum length does not match grid"
        );
        let samples = inverse(&spectrum);
        Self {
            grid,
            samples,
            spectrum: OnceLock::from(spectrum),
        }
    }

    /// The constant-zero field.
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::from_samples(grid, vec![0.0; grid.n_points()])
    }

    /// The grid this field lives on.
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    /// Point values at the nodes.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Interpolant coefficients, computed on first call and cached.
    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| forward(&self.samples))
    }

    /// Mean value `c_0` (equals the trapezoidal average of the samples).
    pub fn mean(&self) -> f64 {
        self.spectrum()[0].re
    }

    /// Maximum absolute sample value.
    pub fn linf(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Largest sample value.
    pub fn max(&self) -> f64 {
        self.samples.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Smallest sample value.
    pub fn min(&self) -> f64 {
        self.samples.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Exact `order`-th derivative of the interpolant.
    ///
    /// The symbol is `(2 pi i k)^order`; for odd orders the Nyquist bin is
    /// zeroed, since its sign of `k` is ambiguous and the symmetric choice is
    /// zero. Even orders keep it (the symbol is then real and sign-free).
    pub fn deriv(&self, order: u32) -> Field {
        if order == 0 {
            return self.clone();
        }
        let n = self.grid.n_points();
        let odd = order % 2 == 1;
        let mut out = Vec::with_capacity(n);
        for (i, &c) in self.spectrum().iter().enumerate() {
            if odd && i == n / 2 {
                out.push(Complex64::new(0.0, 0.0));
                continue;
            }
            let k = self.grid.wavenumber(i) as f64;
            let symbol = Complex64::new(0.0, 2.0 * PI * k).powu(order);
            out.push(c * symbol);
        }
        Field::from_spectrum(self.grid, out)
    }

    /// Applies `A^{-1}` where `A = mu - d_xx`: the mean passes through and
    /// every other mode is divided by `(2 pi k)^2`.
    pub fn apply_a_inv(&self) -> Field {
        let n = self.grid.n_points();
        let mut out = Vec::with_capacity(n);
        for (i, &c) in self.spectrum().iter().enumerate() {
            if i == 0 {
                out.push(c);
            } else {
                let k = self.grid.wavenumber(i) as f64;
                out.push(c / (2.0 * PI * k).powi(2));
            }
        }
        Field::from_spectrum(self.grid, out)
    }

    /// The composition `d_x A^{-1}`, fused so the zero mode is exactly zero.
    ///
    /// This is the nonlocal part of the velocity equation; doing it in one
    /// pass guarantees the result cannot perturb the mean of `u`.
    pub fn dx_a_inv(&self) -> Field {
        let n = self.grid.n_points();
        let mut out = Vec::with_capacity(n);
        for (i, &c) in self.spectrum().iter().enumerate() {
            if i == 0 || i == n / 2 {
                out.push(Complex64::new(0.0, 0.0));
            } else {
                let k = self.grid.wavenumber(i) as f64;
                // (2 pi i k) / (2 pi k)^2 = i / (2 pi k)
                out.push(c * Complex64::new(0.0, 1.0 / (2.0 * PI * k)));
            }
        }
        Field::from_spectrum(self.grid, out)
    }

    /// Periodic antiderivative `F` with `F(0) = 0`; requires zero mean.
    ///
    /// Modes `k != 0` are divided by `2 pi i k` (Nyquist zeroed), and the
    /// constant is chosen so the interpolant vanishes at `x = 0`.
    pub fn antideriv_zero_base(&self) -> Result<Field, SpectralError> {
        let mean = self.mean();
        if mean.abs() > MEAN_TOLERANCE {
            return Err(SpectralError::NonZeroMean { mean });
        }
        let n = self.grid.n_points();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let mut at_zero = Complex64::new(0.0, 0.0);
        for (i, &c) in self.spectrum().iter().enumerate() {
            if i == 0 || i == n / 2 {
                continue;
            }
            let k = self.grid.wavenumber(i) as f64;
            let coeff = c * Complex64::new(0.0, -1.0 / (2.0 * PI * k));
            out[i] = coeff;
            at_zero += coeff;
        }
        // Interpolant value at x = 0 is the plain coefficient sum; cancel it.
        out[0] = Complex64::new(-at_zero.re, 0.0);
        Ok(Field::from_spectrum(self.grid, out))
    }

    /// Sobolev norm `H^s` through the Parseval identity,
    /// `(|c_0|^2 + sum_{k != 0} (2 pi |k|)^{2s} |c_k|^2)^{1/2}`.
    ///
    /// `s` may be any non-negative real; `s = 0` is the `L^2` norm.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        assert!(s >= 0.0, "sobolev_norm requires s >= 0");
        let mut sum = 0.0;
        for (i, &c) in self.spectrum().iter().enumerate() {
            let weight = if i == 0 {
                1.0
            } else {
                let k = self.grid.wavenumber(i) as f64;
                (2.0 * PI * k.abs()).powf(2.0 * s)
            };
            sum += weight * c.norm_sqr();
        }
        sum.sqrt()
    }

    /// Evaluates the interpolant at an arbitrary point (periodically wrapped).
    ///
    /// The Nyquist mode contributes `Re(c_{n/2}) cos(pi n y)`, the symmetric
    /// combination of `+n/2` and `-n/2`; on the nodes this reproduces the
    /// samples to round-off.
    pub fn interpolate(&self, y: f64) -> f64 {
        let n = self.grid.n_points();
        let spec = self.spectrum();
        let mut val = spec[0].re;
        for i in 1..n / 2 {
            let k = i as f64;
            let phase = Complex64::from_polar(1.0, 2.0 * PI * k * y);
            val += 2.0 * (spec[i] * phase).re;
        }
        val += spec[n / 2].re * (PI * n as f64 * y).cos();
        val
    }

    /// Zeroes every mode with `|k| > n/3` (the 2/3 rule).
    ///
    /// Products of two dealiased fields then alias only into the discarded
    /// band, so `dealias(dealias(f) * dealias(g))` is alias-free.
    pub fn dealias(&self) -> Field {
        let n = self.grid.n_points();
        let cut = n as i64 / 3;
        let out: Vec<Complex64> = self
            .spectrum()
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let k = self.grid.wavenumber(i);
                if k.abs() > cut || i == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    c
                }
            })
            .collect();
        Field::from_spectrum(self.grid, out)
    }

    /// Pointwise product of the samples.
    pub fn mul(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "grid mismatch in product");
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| a * b)
            .collect();
        Field::from_samples(self.grid, samples)
    }

    /// Pointwise `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "grid mismatch in sum");
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| a + c * b)
            .collect();
        Field::from_samples(self.grid, samples)
    }

    /// Pointwise scaling by a constant.
    pub fn scale(&self, c: f64) -> Field {
        let samples = self.samples.iter().map(|&a| c * a).collect();
        Field::from_samples(self.grid, samples)
    }

    /// Adds a constant to every sample.
    pub fn add_const(&self, c: f64) -> Field {
        let samples = self.samples.iter().map(|&a| a + c).collect();
        Field::from_samples(self.grid, samples)
    }
}
