//! Mapping of 14-bit values onto a normalized control-voltage range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi14::Value14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveShape {
    /// `t^exponent`
    #[default]
    Power,
    /// `(e^(exponent * t) - 1) / (e^exponent - 1)`
    Exp,
}

/// Output range and taper. The default is a squared taper onto `0.0..=0.9`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSpec {
    pub out_min: f64,
    pub out_max: f64,
    pub exponent: f64,
    pub shape: CurveShape,
}

impl Default for CurveSpec {
    fn default() -> Self {
        CurveSpec {
            out_min: 0.0,
            out_max: 0.9,
            exponent: 2.0,
            shape: CurveShape::Power,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("out_min ({min}) must be below out_max ({max})")]
    EmptyRange { min: f64, max: f64 },
    #[error("exponent must be a positive finite number, got {0}")]
    Exponent(f64),
    #[error("range bounds must be finite")]
    NonFinite,
}

impl CurveSpec {
    pub fn with_exponent(exponent: f64) -> Result<Self, CurveError> {
        let curve = CurveSpec {
            exponent,
            ..CurveSpec::default()
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        if !self.out_min.is_finite() || !self.out_max.is_finite() {
            return Err(CurveError::NonFinite);
        }
        if self.out_min >= self.out_max {
            return Err(CurveError::EmptyRange {
                min: self.out_min,
                max: self.out_max,
            });
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(CurveError::Exponent(self.exponent));
        }
        Ok(())
    }
}

/// Maps a value onto `out_min + (out_max - out_min) * shape(value / 16383)`.
///
/// The endpoints map to exactly `out_min` and `out_max`, and the result is
/// nondecreasing in `value`.
pub fn map_to_cv(value: Value14, curve: &CurveSpec) -> f64 {
    if value == Value14::MIN {
        return curve.out_min;
    }
    if value == Value14::MAX {
        return curve.out_max;
    }
    let t = f64::from(value.get()) / f64::from(Value14::MAX.get());
    let shaped = match curve.shape {
        CurveShape::Power => t.powf(curve.exponent),
        CurveShape::Exp => (curve.exponent * t).exp_m1() / curve.exponent.exp_m1(),
    };
    (curve.out_min + (curve.out_max - curve.out_min) * shaped).clamp(curve.out_min, curve.out_max)
}
