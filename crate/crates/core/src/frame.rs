//! Families of vector fields and their non-degeneracy functionals.

use serde::{Deserialize, Serialize};

use crate::dyadic::holder_norm;
use crate::error::{LabError, Result};
use crate::spectral::{dealias, Axis, GridSpec, ScalarField};

/// Measured order `(alpha, beta, gamma)` of an h-indexed family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct FrameMember {
    pub label: String,
    pub x1: ScalarField,
    pub x2: ScalarField,
}

impl FrameMember {
    pub fn new(label: impl Into<String>, x1: ScalarField, x2: ScalarField) -> Result<Self> {
        if x1.grid() != x2.grid() {
            return Err(LabError::GridMismatch);
        }
        Ok(Self {
            label: label.into(),
            x1,
            x2,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.x1.grid()
    }

    pub fn divergence(&self) -> ScalarField {
        let a = self.x1.derivative(Axis::X1);
        let b = self.x2.derivative(Axis::X2);
        a.lincomb_spectral(&[(1.0, &b)], 1.0).expect("same grid")
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.x1
            .values()
            .iter()
            .zip(self.x2.values())
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.magnitude().into_iter().fold(0.0, f64::max)
    }

    /// `||X||_eps + ||div X||_{eps-1}`, components measured separately.
    pub fn tilde_norm(&self, eps: f64) -> f64 {
        let x = holder_norm(&self.x1, eps).max(holder_norm(&self.x2, eps));
        x + holder_norm(&self.divergence(), eps - 1.0)
    }

    /// `div(u X) - u div X` with dealiased products.
    pub fn derivative_of(&self, u: &ScalarField) -> Result<ScalarField> {
        let ux1 = dealias(&u.mul(&self.x1)?);
        let ux2 = dealias(&u.mul(&self.x2)?);
        let udiv = dealias(&u.mul(&self.divergence())?);
        let a = ux1.derivative(Axis::X1);
        let b = ux2.derivative(Axis::X2);
        a.lincomb_spectral(&[(1.0, &b), (-1.0, &udiv)], 1.0)
    }
}

/// Finite family `(X_lambda)` optionally attached to a scale `h`.
#[derive(Debug, Clone)]
pub struct FrameFamily {
    pub members: Vec<FrameMember>,
    pub h: Option<f64>,
    pub order: Option<Order>,
}

/// Non-degeneracy functional with the grid point attaining the infimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nondegeneracy {
    pub value: f64,
    pub witness: [f64; 2],
}

impl FrameFamily {
    pub fn new(members: Vec<FrameMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(LabError::Config("frame family needs at least one member".into()));
        }
        let g = *members[0].grid();
        if members.iter().any(|m| *m.grid() != g) {
            return Err(LabError::GridMismatch);
        }
        Ok(Self {
            members,
            h: None,
            order: None,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.members[0].grid()
    }

    /// `inf over masked points of sup_lambda |X_lambda|`; `mask = None` uses every point.
    pub fn nondegeneracy(&self, mask: Option<&[bool]>) -> Nondegeneracy {
        let g = *self.grid();
        let mags: Vec<Vec<f64>> = self.members.iter().map(|m| m.magnitude()).collect();
        let mut best = (f64::INFINITY, 0usize);
        for k in 0..g.len() {
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            let s = mags.iter().map(|v| v[k]).fold(0.0, f64::max);
            if s < best.0 {
                best = (s, k);
            }
        }
        let (i, j) = (best.1 % g.n, best.1 / g.n);
        Nondegeneracy {
            value: if best.0.is_finite() { best.0 } else { 0.0 },
            witness: g.point(i, j),
        }
    }

    /// Like [`nondegeneracy`](Self::nondegeneracy) but a zero infimum is an error.
    pub fn require_nondegenerate(&self, mask: Option<&[bool]>) -> Result<Nondegeneracy> {
        let nd = self.nondegeneracy(mask);
        if nd.value > 0.0 {
            Ok(nd)
        } else {
            Err(LabError::Degenerate {
                value: nd.value,
                witness: nd.witness,
            })
        }
    }

    pub fn n_eps_with(&self, eps: f64, i: f64) -> f64 {
        self.members
            .iter()
            .map(|m| m.tilde_norm(eps))
            .fold(0.0, f64::max)
            / i
    }

    pub fn n_eps(&self, eps: f64, mask: Option<&[bool]>) -> Result<f64> {
        let nd = self.require_nondegenerate(mask)?;
        Ok(self.n_eps_with(eps, nd.value))
    }

    pub fn max_divergence(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.divergence().max_abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.members.iter().map(|m| m.sup_norm()).fold(0.0, f64::max)
    }
}
