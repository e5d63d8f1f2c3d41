//! Jump drivers: Lévy measures of spectrally positive subordinators.
//!
//! Two families are supported:
//!
//! ```text
//! exp_cp           ν(dz) = λ·exp(−η z) dz                    (finite activity)
//! tempered_stable  ν(dz) = c·exp(−β z)·z^(−1−α) dz, 0<α<1     (infinite activity, bounded variation)
//! ```
//!
//! Every sampler takes the RNG explicitly, so a sampler can be shared across
//! threads as long as each thread owns its stream.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{ensure_param, Error, Result};
use crate::quad;

/// Relative tolerance required between closed-form and quadrature moments.
pub const MOMENT_CHECK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpCompoundPoisson {
    pub lambda: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperedStable {
    pub c: f64,
    pub beta: f64,
    pub alpha: f64,
}

/// First two moments `M1 = ∫ z ν(dz)`, `M2 = ∫ z² ν(dz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMoments {
    pub m1: f64,
    pub m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LevyMeasure {
    #[serde(rename = "exp_cp")]
    ExpCompoundPoisson(ExpCompoundPoisson),
    #[serde(rename = "tempered_stable")]
    TemperedStable(TemperedStable),
}

impl ExpCompoundPoisson {
    /// `lambda = 0` is accepted as the null (jump-free) driver.
    pub fn new(lambda: f64, eta: f64) -> Result<Self> {
        let m = Self { lambda, eta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(
            self.lambda.is_finite() && self.lambda >= 0.0,
            "exp_cp lambda must be finite and >= 0, got {}",
            self.lambda
        );
        ensure_param!(
            self.eta.is_finite() && self.eta > 0.0,
            "exp_cp eta must be finite and > 0, got {}",
            self.eta
        );
        Ok(())
    }

    /// Jump rate `λ/η`.
    pub fn total_mass(&self) -> f64 {
        self.lambda / self.eta
    }

    pub fn raw_moment(&self, k: u32) -> f64 {
        let factorial: f64 = (1..=k).map(f64::from).product();
        self.lambda * factorial / self.eta.powi(k as i32 + 1)
    }

    pub fn tail_mass(&self, threshold: f64) -> f64 {
        self.total_mass() * (-self.eta * threshold.max(0.0)).exp()
    }

    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, scale: f64, rng: &mut R) -> f64 {
        let mean_count = scale * self.total_mass() * dt;
        if mean_count <= 0.0 {
            return 0.0;
        }
        let count = poisson_count(mean_count, rng);
        let mut total = 0.0;
        for _ in 0..count {
            let e: f64 = Exp1.sample(rng);
            total += e / self.eta;
        }
        total
    }
}

impl TemperedStable {
    pub fn new(c: f64, beta: f64, alpha: f64) -> Result<Self> {
        let m = Self { c, beta, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(
            self.c.is_finite() && self.c > 0.0,
            "tempered_stable c must be finite and > 0, got {}",
            self.c
        );
        ensure_param!(
            self.beta.is_finite() && self.beta > 0.0,
            "tempered_stable beta must be finite and > 0, got {}",
            self.beta
        );
        ensure_param!(
            self.alpha > 0.0 && self.alpha < 1.0,
            "tempered_stable alpha must lie in (0, 1), got {}",
            self.alpha
        );
        Ok(())
    }

    /// `M_k = c·Γ(k−α)·β^(α−k)`.
    pub fn raw_moment(&self, k: u32) -> f64 {
        let k = f64::from(k);
        self.c * gamma(k - self.alpha) * self.beta.powf(self.alpha - k)
    }

    /// `ν((θ, ∞))`, finite for every `θ > 0`.
    pub fn tail_mass(&self, threshold: f64) -> Result<f64> {
        ensure_param!(threshold > 0.0, "tempered-stable tail mass needs threshold > 0");
        // y = β z, then integrate y^(−1−α) e^(−y) over (βθ, ∞).
        let lo = self.beta * threshold;
        let a = self.alpha;
        let scale = self.c * self.beta.powf(a);
        let tol = 1e-15 * lo.powf(-a).max(1.0);
        let mut breaks = vec![lo];
        let mut edge = lo.max(1e-300);
        while edge < lo.max(1.0) + 100.0 {
            edge = (edge * 4.0).min(edge + 32.0).max(edge + 1.0);
            breaks.push(edge);
        }
        let v = quad::integrate_pieces(|y| y.powf(-1.0 - a) * (-y).exp(), &breaks, tol)?;
        Ok(scale * v)
    }

    /// Scale of the untempered stable law on an interval with activity `c·scale·dt`.
    fn stable_scale(&self, dt: f64, scale: f64) -> f64 {
        let a = self.alpha;
        (self.c * scale * dt * gamma(1.0 - a) / a).powf(1.0 / a)
    }

    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, scale: f64, rng: &mut R) -> f64 {
        self.sample_increment_counted(dt, scale, rng).0
    }

    /// Acceptance-rejection draw; also returns the number of candidates used.
    pub fn sample_increment_counted<R: Rng + ?Sized>(
        &self,
        dt: f64,
        scale: f64,
        rng: &mut R,
    ) -> (f64, u64) {
        if scale <= 0.0 {
            return (0.0, 0);
        }
        let sigma = self.stable_scale(dt, scale);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let candidate = sigma * positive_stable(self.alpha, rng);
            let u: f64 = rng.random();
            if u < (-self.beta * candidate).exp() {
                return (candidate, attempts);
            }
        }
    }
}

/// Poisson draw; CDF inversion for the small means met on fine grids, the
/// library sampler otherwise.
fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean < 12.0 {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut term = (-mean).exp();
        let mut cdf = term;
        while u > cdf && term > 0.0 {
            k += 1;
            term *= mean / k as f64;
            cdf += term;
        }
        k
    } else {
        // Poisson::new only fails for non-finite or non-positive means.
        Poisson::new(mean)
            .expect("positive finite Poisson mean")
            .sample(rng) as u64
    }
}

/// One-sided stable variate with Laplace transform `exp(−s^α)` (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = open01(rng) * PI;
    let w: f64 = Exp1.sample(rng);
    let w = w.max(f64::MIN_POSITIVE);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

impl LevyMeasure {
    pub fn exp_cp(lambda: f64, eta: f64) -> Result<Self> {
        Ok(Self::ExpCompoundPoisson(ExpCompoundPoisson::new(lambda, eta)?))
    }

    pub fn tempered_stable(c: f64, beta: f64, alpha: f64) -> Result<Self> {
        Ok(Self::TemperedStable(TemperedStable::new(c, beta, alpha)?))
    }

    /// Jump-free driver.
    pub fn null() -> Self {
        Self::ExpCompoundPoisson(ExpCompoundPoisson { lambda: 0.0, eta: 1.0 })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::ExpCompoundPoisson(m) => m.validate(),
            Self::TemperedStable(m) => m.validate(),
        }
    }

    pub fn family(&self) -> DriverFamily {
        match self {
            Self::ExpCompoundPoisson(_) => DriverFamily::ExpCp,
            Self::TemperedStable(_) => DriverFamily::TemperedStable,
        }
    }

    /// Closed-form `∫ z^k ν(dz)`, `k ≥ 1`.
    pub fn raw_moment(&self, k: u32) -> f64 {
        match self {
            Self::ExpCompoundPoisson(m) => m.raw_moment(k),
            Self::TemperedStable(m) => m.raw_moment(k),
        }
    }

    /// Closed-form `(M1, M2)` without the quadrature cross-check.
    pub fn moments_unchecked(&self) -> JumpMoments {
        JumpMoments {
            m1: self.raw_moment(1),
            m2: self.raw_moment(2),
        }
    }

    /// `(M1, M2)` from their closed forms, cross-checked by quadrature.
    pub fn moments(&self) -> Result<JumpMoments> {
        self.validate()?;
        let out = self.moments_unchecked();
        for (k, closed) in [(1, out.m1), (2, out.m2)] {
            if !closed.is_finite() {
                return Err(Error::InvalidParameter(format!("M{k} is not finite")));
            }
            let numeric = self.moment_by_quadrature(k)?;
            let scale = closed.abs().max(f64::MIN_POSITIVE);
            if (numeric - closed).abs() > MOMENT_CHECK_RTOL * scale && closed != 0.0 {
                return Err(Error::Quadrature(format!(
                    "M{k}: closed form {closed:.15e} disagrees with quadrature {numeric:.15e}"
                )));
            }
        }
        Ok(out)
    }

    /// `∫ z^k ν(dz)` by quadrature. After the substitution `y = η z` (resp. `β z`)
    /// both families reduce to `scale·∫ y^(a−1) e^(−y) dy`; the piece on `(0, 1)`
    /// is rewritten with `w = y^a` so that the integrand is smooth.
    pub fn moment_by_quadrature(&self, k: u32) -> Result<f64> {
        let (scale, a) = match self {
            Self::ExpCompoundPoisson(m) => {
                (m.lambda / m.eta.powi(k as i32 + 1), f64::from(k) + 1.0)
            }
            Self::TemperedStable(m) => (
                m.c * m.beta.powf(m.alpha - f64::from(k)),
                f64::from(k) - m.alpha,
            ),
        };
        if scale == 0.0 {
            return Ok(0.0);
        }
        let head = quad::integrate(|w: f64| (-w.powf(1.0 / a)).exp(), 0.0, 1.0, 1e-15)? / a;
        let tail = quad::integrate_pieces(
            |y: f64| y.powf(a - 1.0) * (-y).exp(),
            &[1.0, 4.0, 16.0, 48.0, 120.0],
            1e-15,
        )?;
        Ok(scale * (head + tail))
    }

    /// `ν((θ, ∞))`.
    pub fn tail_mass(&self, threshold: f64) -> Result<f64> {
        match self {
            Self::ExpCompoundPoisson(m) => Ok(m.tail_mass(threshold)),
            Self::TemperedStable(m) => m.tail_mass(threshold),
        }
    }

    /// Total jump mass over an interval of length `dt` when the measure is
    /// scaled by `intensity_scale` (1 for plain OU, `max(1+p·x, 0)` for SE).
    pub fn sample_increment<R: Rng + ?Sized>(
        &self,
        dt: f64,
        intensity_scale: f64,
        rng: &mut R,
    ) -> f64 {
        debug_assert!(dt > 0.0);
        debug_assert!(intensity_scale >= 0.0, "negative intensity scale");
        match self {
            Self::ExpCompoundPoisson(m) => m.sample_increment(dt, intensity_scale, rng),
            Self::TemperedStable(m) => m.sample_increment(dt, intensity_scale, rng),
        }
    }

    /// Checked variant of [`Self::sample_increment`].
    pub fn try_sample_increment<R: Rng + ?Sized>(
        &self,
        dt: f64,
        intensity_scale: f64,
        rng: &mut R,
    ) -> Result<f64> {
        ensure_param!(dt > 0.0 && dt.is_finite(), "dt must be > 0, got {dt}");
        ensure_param!(
            intensity_scale >= 0.0 && intensity_scale.is_finite(),
            "intensity_scale must be >= 0, got {intensity_scale}"
        );
        Ok(self.sample_increment(dt, intensity_scale, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverFamily {
    ExpCp,
    TemperedStable,
}
