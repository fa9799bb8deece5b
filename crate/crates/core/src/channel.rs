//! Large-scale fading (distance path loss plus correlated log-normal
//! shadowing) and small-scale Rayleigh fading as a first-order complex
//! Gauss-Markov process with Jakes correlation.

use ndarray::Array2;
use num_complex::Complex;
use rand::Rng;

use crate::config::SPEED_OF_LIGHT_MPS;
use crate::error::{Error, Result};
use crate::geometry::{distance, CellLayout, DeviceKinematics};
use crate::rng::standard_normal;
use crate::scalar::{from_db, lit, Scalar};

/// Urban macro-cell path loss in dB, `128.1 + 37.6 log10(d)` with `d` in km,
/// evaluated at no less than `min_distance_km`.
pub fn path_loss_db<T: Scalar>(distance_km: T, min_distance_km: T) -> Result<T> {
    if distance_km.is_nan() {
        return Err(Error::NonFinite("path loss distance".into()));
    }
    let d = distance_km.max(min_distance_km);
    Ok(lit::<T>(128.1) + lit::<T>(37.6) * d.log10())
}

/// Shadowing correlation between consecutive slots, `exp(-Δx / d_cor)`.
pub fn shadowing_correlation<T: Scalar>(displacement_m: T, corr_length_m: T) -> T {
    (-displacement_m / corr_length_m).exp()
}

/// Bessel function of the first kind, order zero.
///
/// Power series up to |x| = 20, where cancellation still leaves about 1e-9
/// absolute accuracy; the Hankel asymptotic expansion beyond that, where its
/// smallest term is far below 1e-8.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 20.0 {
        let q = -0.25 * ax * ax;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-3) {
                return sum;
            }
            k += 1.0;
        }
    }
    // P and Q series: a_k = a_{k-1} * (-(2k-1)^2) / (8k).
    let mut p = 1.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut xpow = 1.0;
    for k in 1..=24 {
        let kf = k as f64;
        a *= -((2.0 * kf - 1.0).powi(2)) / (8.0 * kf);
        xpow *= ax;
        let t = a / xpow;
        // sign pattern: P = a0 - a2/x^2 + a4/x^4 ..., Q = a1/x - a3/x^3 ...
        match k % 4 {
            1 => q += t,
            2 => p -= t,
            3 => q -= t,
            _ => p += t,
        }
    }
    let chi = ax - std::f64::consts::FRAC_PI_4;
    (2.0 / (std::f64::consts::PI * ax)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Maximum Doppler frequency `v f_c / c`.
pub fn doppler_hz(speed_mps: f64, carrier_hz: f64) -> f64 {
    speed_mps * carrier_hz / SPEED_OF_LIGHT_MPS
}

/// Slot-to-slot fading correlation `J0(2π f_d T)`.
pub fn jakes_correlation<T: Scalar>(speed_mps: T, carrier_hz: f64, slot_seconds: f64) -> T {
    correlation_for_doppler(doppler_hz(speed_mps.as_f64(), carrier_hz), slot_seconds)
}

pub fn correlation_for_doppler<T: Scalar>(doppler_hz: f64, slot_seconds: f64) -> T {
    lit(bessel_j0(std::f64::consts::TAU * doppler_hz * slot_seconds))
}

/// Log-normal shadowing in dB from every cell center to every device,
/// indexed `[cell, device]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowingField<T> {
    pub x_db: Array2<T>,
    pub sigma_db: T,
    pub corr_length_m: T,
}

impl<T: Scalar> ShadowingField<T> {
    /// Initial field with i.i.d. `N(0, σ_s²)` entries.
    pub fn new<R: Rng + ?Sized>(
        num_cells: usize,
        num_devices: usize,
        sigma_db: T,
        corr_length_m: T,
        rng: &mut R,
    ) -> Self {
        let x_db = Array2::from_shape_simple_fn((num_cells, num_devices), || {
            sigma_db * lit(standard_normal(rng))
        });
        Self {
            x_db,
            sigma_db,
            corr_length_m,
        }
    }

    /// AR(1) step with per-device correlation `rho[n]` shared by all cells.
    /// One innovation is drawn per entry even when `rho = 1`, so the random
    /// stream advances identically regardless of motion.
    pub fn step_with_correlation<R: Rng + ?Sized>(&mut self, rho: &[T], rng: &mut R) {
        assert_eq!(rho.len(), self.x_db.ncols());
        for mut row in self.x_db.rows_mut() {
            for (x, &r) in row.iter_mut().zip(rho) {
                let innovation = (T::one() - r * r).max(T::zero()).sqrt();
                *x = r * *x + self.sigma_db * innovation * lit(standard_normal(rng));
            }
        }
    }

    /// Step driven by each device's displacement over the last slot.
    pub fn step<R: Rng + ?Sized>(&mut self, devices: &[DeviceKinematics<T>], rng: &mut R) {
        let rho: Vec<T> = devices
            .iter()
            .map(|d| shadowing_correlation(d.displacement, self.corr_length_m))
            .collect();
        self.step_with_correlation(&rho, rng);
    }
}

/// Small-scale complex fading coefficients indexed `[cell, device]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FadingField<T> {
    pub h: Array2<Complex<T>>,
    /// Correlation used for each device in the latest step.
    pub rho: Vec<T>,
}

fn cscg<T: Scalar, R: Rng + ?Sized>(variance: T, rng: &mut R) -> Complex<T> {
    let s = (variance / lit(2.0)).sqrt();
    Complex::new(s * lit(standard_normal(rng)), s * lit(standard_normal(rng)))
}

impl<T: Scalar> FadingField<T> {
    /// Initial field with i.i.d. unit-variance CSCG entries.
    pub fn new<R: Rng + ?Sized>(num_cells: usize, num_devices: usize, rng: &mut R) -> Self {
        let h = Array2::from_shape_simple_fn((num_cells, num_devices), || cscg(T::one(), rng));
        Self {
            h,
            rho: vec![T::one(); num_devices],
        }
    }

    /// `h ← ρ_n h + e`, `e ~ CN(0, 1 − ρ_n²)`, with `ρ_n` shared across cells.
    pub fn step_with_correlation<R: Rng + ?Sized>(&mut self, rho: &[T], rng: &mut R) {
        assert_eq!(rho.len(), self.h.ncols());
        for mut row in self.h.rows_mut() {
            for (h, &r) in row.iter_mut().zip(rho) {
                let var = (T::one() - r * r).max(T::zero());
                *h = *h * r + cscg(var, rng);
            }
        }
        self.rho.copy_from_slice(rho);
    }

    /// Step with Jakes correlation from each device's current speed, or from
    /// a fixed Doppler frequency when `doppler_override_hz` is set.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        devices: &[DeviceKinematics<T>],
        carrier_hz: f64,
        slot_seconds: f64,
        doppler_override_hz: Option<f64>,
        rng: &mut R,
    ) {
        let rho: Vec<T> = devices
            .iter()
            .map(|d| match doppler_override_hz {
                Some(fd) => correlation_for_doppler(fd, slot_seconds),
                None => jakes_correlation(d.speed, carrier_hz, slot_seconds),
            })
            .collect();
        self.step_with_correlation(&rho, rng);
    }
}

/// Linear channel gains from each cell center to each device, `[cell, device]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix<T> {
    /// `|h|² α`.
    pub g_bar: Array2<T>,
    /// Large-scale component.
    pub alpha: Array2<T>,
}

impl<T: Scalar> GainMatrix<T> {
    pub fn num_cells(&self) -> usize {
        self.g_bar.nrows()
    }

    pub fn num_devices(&self) -> usize {
        self.g_bar.ncols()
    }
}

/// `α_dB = −(PL + X)`, `α = 10^(α_dB/10)`, `ḡ = |h|² α`.
pub fn compose_gains<T: Scalar>(
    layout: &CellLayout<T>,
    devices: &[DeviceKinematics<T>],
    shadowing: &ShadowingField<T>,
    fading: &FadingField<T>,
    min_distance_m: T,
) -> Result<GainMatrix<T>> {
    let shape = (layout.num_cells(), devices.len());
    if shadowing.x_db.dim() != shape {
        return Err(Error::shape(format!("{shape:?}"), format!("{:?}", shadowing.x_db.dim())));
    }
    if fading.h.dim() != shape {
        return Err(Error::shape(format!("{shape:?}"), format!("{:?}", fading.h.dim())));
    }
    let km = lit::<T>(1e-3);
    let mut alpha = Array2::zeros(shape);
    let mut g_bar = Array2::zeros(shape);
    for k in 0..shape.0 {
        let c = layout.center(k);
        for (n, d) in devices.iter().enumerate() {
            let pl = path_loss_db(distance(c, d.position) * km, min_distance_m * km)?;
            let a = from_db(-(pl + shadowing.x_db[[k, n]]));
            alpha[[k, n]] = a;
            g_bar[[k, n]] = fading.h[[k, n]].norm_sqr() * a;
        }
    }
    Ok(GainMatrix { g_bar, alpha })
}
