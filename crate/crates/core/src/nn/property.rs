use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

/// One row `coeffs · y − offset ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

/// Conjunction of linear constraints over the network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputProperty {
    pub constraints: Vec<Constraint>,
}

impl OutputProperty {
    pub fn new(constraints: Vec<Constraint>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::param("constraints", "property needs at least one constraint"));
        }
        Ok(OutputProperty { constraints })
    }

    /// `y[winner] ≥ y[i]` for every `i` in `others`.
    pub fn dominates(output_dim: usize, winner: usize, others: &[usize]) -> Result<Self> {
        let rows = others
            .iter()
            .map(|&i| {
                let mut coeffs = vec![0.0; output_dim];
                coeffs[winner] += 1.0;
                coeffs[i] -= 1.0;
                Constraint { coeffs, offset: 0.0 }
            })
            .collect();
        Self::new(rows)
    }

    /// Single-output threshold property `y ≥ threshold`.
    pub fn threshold(threshold: f64) -> Self {
        OutputProperty {
            constraints: vec![Constraint {
                coeffs: vec![1.0],
                offset: threshold,
            }],
        }
    }

    pub fn check_dim(&self, output_dim: usize) -> Result<()> {
        match self.constraints.iter().find(|c| c.coeffs.len() != output_dim) {
            Some(c) => Err(Error::Dim {
                expected: output_dim,
                got: c.coeffs.len(),
            }),
            None => Ok(()),
        }
    }

    /// `min_j (coeffs_j · y − offset_j)`.
    pub fn margin_of(&self, y: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.coeffs.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - c.offset)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let prop: OutputProperty = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "property".into(),
            message: e.to_string(),
        })?;
        Self::new(prop.constraints)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }
}

/// Anything that assigns a signed margin to input points; the label is
/// `margin ≥ 0`.
pub trait Labeler: Sync {
    fn input_dim(&self) -> usize;

    fn margin(&self, x: &[f64]) -> Result<f64>;

    fn label(&self, x: &[f64]) -> Result<bool> {
        Ok(self.margin(x)? >= 0.0)
    }
}

impl<L: Labeler + ?Sized> Labeler for &L {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn margin(&self, x: &[f64]) -> Result<f64> {
        (**self).margin(x)
    }
}

/// Adapts a closure into a [`Labeler`].
pub struct FnLabeler<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnLabeler<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnLabeler { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Labeler for FnLabeler<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Dim {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok((self.f)(x))
    }
}

/// Network plus output property, reduced to a single signed margin.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLabeler {
    network: Network,
    property: OutputProperty,
}

impl MarginLabeler {
    pub fn new(network: Network, property: OutputProperty) -> Result<Self> {
        property.check_dim(network.output_dim())?;
        Ok(MarginLabeler { network, property })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn property(&self) -> &OutputProperty {
        &self.property
    }

    pub fn label_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<bool>> {
        const PAR_THRESHOLD: usize = 2048;
        if xs.len() < PAR_THRESHOLD {
            xs.iter().map(|x| self.label(x)).collect()
        } else {
            xs.par_iter().map(|x| self.label(x)).collect()
        }
    }
}

impl Labeler for MarginLabeler {
    fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    fn margin(&self, x: &[f64]) -> Result<f64> {
        let y = self.network.forward(x)?;
        Ok(self.property.margin_of(&y))
    }
}
