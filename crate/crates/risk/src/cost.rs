//! Exposure-to-cost conversion.
//!
//! The corrected form C(x) = a + b x - a e^(-k x) with k = a / (5 b) has
//! C(0) = 0, is strictly increasing, and converges to the affine C0(x)
//! = a + b x from below with gap a e^(-k x). The original printed form
//! (subtracting b e^(-k x) with k = -a/(5b)) is available behind a
//! compatibility flag; it goes negative at 0 and diverges from C0.

use crate::error::{Result, RiskError};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CostForm {
    /// a + b x - a e^(-k x), k = a/(5b).
    Corrected,
    /// a + b x - b e^(-k x), k = -a/(5b), kept for comparison runs.
    Printed,
}

#[derive(Clone, Copy, Debug)]
pub struct CostModel {
    /// Euros.
    pub a: f64,
    /// Euros per building.
    pub b: f64,
    pub form: CostForm,
}

impl CostModel {
    /// Calibrated France-wide constants.
    pub fn calibrated(form: CostForm) -> Self {
        Self {
            a: 464.4,
            b: 4.121e8,
            form,
        }
    }

    pub fn k(&self) -> f64 {
        match self.form {
            CostForm::Corrected => self.a / (5.0 * self.b),
            CostForm::Printed => -self.a / (5.0 * self.b),
        }
    }

    /// Cost of damages for `x` exposed buildings, in euros.
    pub fn cost(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(RiskError::NegativeExposure(x));
        }
        let k = self.k();
        Ok(match self.form {
            CostForm::Corrected => self.a + self.b * x - self.a * (-k * x).exp(),
            CostForm::Printed => self.a + self.b * x - self.b * (-k * x).exp(),
        })
    }

    /// The asymptotic gap C0(x) - C(x) of the corrected form.
    pub fn gap(&self, x: f64) -> f64 {
        self.a * (-self.k() * x).exp()
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::calibrated(CostForm::Corrected)
    }
}
