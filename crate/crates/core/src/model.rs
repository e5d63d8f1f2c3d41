use serde::{Deserialize, Serialize};

use crate::coefficients::{FiniteFCoefficients, LimitCoefficients};
use crate::error::{ensure_param, Result};
use crate::levy::{JumpMoments, LevyMeasure};

/// User-facing description of a bridge problem on the unit horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub r: f64,
    #[serde(default)]
    pub p: f64,
    pub x0: f64,
    pub x_hat: f64,
    pub driver: LevyMeasure,
}

/// Validated problem statement with the derived self-exciting parameters
/// `R = r − p·M1` and `m = M1 + p·M2/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeModel {
    spec: ModelSpec,
    moments: JumpMoments,
    big_r: f64,
    m: f64,
}

impl BridgeModel {
    pub fn new(r: f64, p: f64, x0: f64, x_hat: f64, driver: LevyMeasure) -> Result<Self> {
        Self::from_spec(ModelSpec {
            r,
            p,
            x0,
            x_hat,
            driver,
        })
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        ensure_param!(spec.r.is_finite() && spec.r > 0.0, "r must be > 0, got {}", spec.r);
        ensure_param!(spec.p.is_finite() && spec.p >= 0.0, "p must be >= 0, got {}", spec.p);
        ensure_param!(spec.x0.is_finite(), "x0 must be finite");
        ensure_param!(spec.x_hat.is_finite(), "x_hat must be finite");
        let moments = spec.driver.moments()?;
        Self::assemble(spec, moments)
    }

    /// Same as [`Self::from_spec`] but skips the quadrature cross-check of the
    /// jump moments; used inside optimizer loops.
    pub fn from_spec_unchecked_moments(spec: ModelSpec) -> Result<Self> {
        ensure_param!(spec.r.is_finite() && spec.r > 0.0, "r must be > 0, got {}", spec.r);
        ensure_param!(spec.p.is_finite() && spec.p >= 0.0, "p must be >= 0, got {}", spec.p);
        spec.driver.validate()?;
        Self::assemble(spec, spec.driver.moments_unchecked())
    }

    fn assemble(spec: ModelSpec, moments: JumpMoments) -> Result<Self> {
        let big_r = spec.r - spec.p * moments.m1;
        let m = moments.m1 + spec.p * moments.m2 / 2.0;
        ensure_param!(
            big_r > 0.0,
            "R = r - p*M1 must be > 0, got {big_r} (r = {}, p = {}, M1 = {})",
            spec.r,
            spec.p,
            moments.m1
        );
        Ok(Self {
            spec,
            moments,
            big_r,
            m,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    pub fn r(&self) -> f64 {
        self.spec.r
    }
    pub fn p(&self) -> f64 {
        self.spec.p
    }
    pub fn x0(&self) -> f64 {
        self.spec.x0
    }
    pub fn x_hat(&self) -> f64 {
        self.spec.x_hat
    }
    pub fn driver(&self) -> &LevyMeasure {
        &self.spec.driver
    }
    pub fn jump_moments(&self) -> JumpMoments {
        self.moments
    }
    pub fn m1(&self) -> f64 {
        self.moments.m1
    }
    pub fn m2(&self) -> f64 {
        self.moments.m2
    }
    /// Effective reversion rate `R = r − p·M1`.
    pub fn big_r(&self) -> f64 {
        self.big_r
    }
    /// Effective mean-like constant `m = M1 + p·M2/2`.
    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn is_self_exciting(&self) -> bool {
        self.spec.p > 0.0
    }

    /// Jump intensity multiplier at state `x`: `max(1 + p·x, 0)`.
    #[inline]
    pub fn intensity_scale(&self, x: f64) -> f64 {
        if self.spec.p == 0.0 {
            1.0
        } else {
            (1.0 + self.spec.p * x).max(0.0)
        }
    }

    /// F → ∞ feedback coefficients built from `(R, m, x̂)`.
    pub fn limit_coefficients(&self) -> LimitCoefficients {
        LimitCoefficients::new(self.big_r, self.m, self.spec.x_hat)
    }

    /// Finite-penalty coefficients built from `(R, m, x̂)`; the constant term
    /// uses the raw jump moments.
    pub fn finite_coefficients(&self, f: f64) -> Result<FiniteFCoefficients> {
        FiniteFCoefficients::new(
            self.big_r,
            self.m,
            self.spec.x_hat,
            f,
            self.moments.m1,
            self.moments.m2,
        )
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::assemble(ModelSpec { p, ..self.spec }, self.moments)
    }

    pub fn with_x_hat(&self, x_hat: f64) -> Self {
        Self {
            spec: ModelSpec { x_hat, ..self.spec },
            ..*self
        }
    }
}
