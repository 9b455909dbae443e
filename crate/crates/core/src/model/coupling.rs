//! Couplings `F(y, z)` of the nonlocal term `y = int K rho` and the local
//! density `z = rho(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coupling {
    Zero,
    /// `c1 y + c2 z`.
    Linear { c1: f64, c2: f64 },
    /// `c tanh(y) + d z^2 / (1 + z^2)`.
    Saturating { c: f64, d: f64 },
    /// `y z`; not globally Lipschitz, used in tests.
    Product,
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling::Zero
    }
}

impl Coupling {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "zero" => Ok(Self::Zero),
            "linear" => Ok(Self::Linear { c1: 0.1, c2: 0.0 }),
            "saturating" => Ok(Self::Saturating { c: 0.1, d: 0.1 }),
            "product" => Ok(Self::Product),
            other => Err(Error::Model(format!("unknown coupling '{other}'"))),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Linear { c1, c2 } => *c1 == 0.0 && *c2 == 0.0,
            Self::Saturating { c, d } => *c == 0.0 && *d == 0.0,
            Self::Product => false,
        }
    }

    pub fn value(&self, y: f64, z: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Linear { c1, c2 } => c1 * y + c2 * z,
            Self::Saturating { c, d } => c * y.tanh() + d * z * z / (1.0 + z * z),
            Self::Product => y * z,
        }
    }

    /// `F_y`.
    pub fn dy(&self, y: f64, z: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Linear { c1, .. } => *c1,
            Self::Saturating { c, .. } => {
                let s = 1.0 / y.cosh();
                c * s * s
            }
            Self::Product => z,
        }
    }

    /// `F_z`.
    pub fn dz(&self, y: f64, z: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Linear { c2, .. } => *c2,
            Self::Saturating { d, .. } => {
                let q = 1.0 + z * z;
                d * 2.0 * z / (q * q)
            }
            Self::Product => y,
        }
    }

    /// Largest relative deviation of `F_y`, `F_z` from central differences.
    pub fn derivative_check(&self, probes: &[(f64, f64)], step: f64) -> f64 {
        let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(1.0);
        probes.iter().fold(0.0f64, |w, &(y, z)| {
            let fy = (self.value(y + step, z) - self.value(y - step, z)) / (2.0 * step);
            let fz = (self.value(y, z + step) - self.value(y, z - step)) / (2.0 * step);
            w.max(rel(self.dy(y, z), fy)).max(rel(self.dz(y, z), fz))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match() {
        let probes: Vec<(f64, f64)> =
            (0..40).map(|i| (-2.0 + 0.1 * i as f64, 1.5 - 0.07 * i as f64)).collect();
        for id in ["zero", "linear", "saturating", "product"] {
            let f = Coupling::from_id(id).unwrap();
            assert!(f.derivative_check(&probes, 1e-4) < 1e-7, "{id}");
        }
    }

    #[test]
    fn product_vanishes_for_zero_density() {
        assert_eq!(Coupling::Product.value(0.0, 0.0), 0.0);
    }
}
