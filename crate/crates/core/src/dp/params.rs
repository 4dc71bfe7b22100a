use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat, ordered view of all trainable parameters of one model.
///
/// The layout tag names the architecture the values flatten; vectors only
/// combine when their tags agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: String,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: impl Into<String>, values: Vec<f64>) -> Self {
        ParamVector {
            layout: layout.into(),
            values,
        }
    }

    pub fn zeros(layout: impl Into<String>, len: usize) -> Self {
        Self::new(layout, vec![0.0; len])
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self::zeros(other.layout.clone(), other.len())
    }

    pub fn layout(&self) -> &str {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(Error::Layout {
                expected: format!("{} ({} values)", self.layout, self.values.len()),
                found: format!("{} ({} values)", other.layout, other.values.len()),
            });
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}
