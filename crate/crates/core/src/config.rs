//! Tolerances shared by all stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Minimum distance of Floquet exponents from the strip boundary.
    pub margin: f64,
    /// Multipliers closer than this are one cluster.
    pub cluster: f64,
    /// Relative rank threshold for Jordan structure decisions.
    pub rank: f64,
    /// Pencil residual of chains, relative to the problem scale.
    pub chain: f64,
    pub biorth: f64,
    pub pointwise: f64,
    pub proj: f64,
    pub comm: f64,
    pub rem: f64,
    pub fp: f64,
    pub lift: f64,
    pub capture: f64,
    pub liouville: f64,
    /// Fundamental matrix residual, relative to `max ||A||`.
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            margin: 1e-6,
            cluster: 1e-7,
            rank: 1e-7,
            chain: 1e-8,
            biorth: 1e-8,
            pointwise: 1e-7,
            proj: 1e-7,
            comm: 1e-6,
            rem: 1e-6,
            fp: 1e-9,
            lift: 1e-5,
            capture: 1e-4,
            liouville: 1e-8,
            residual: 1e-7,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 14] = [
        "margin",
        "cluster",
        "rank",
        "chain",
        "biorth",
        "pointwise",
        "proj",
        "comm",
        "rem",
        "fp",
        "lift",
        "capture",
        "liouville",
        "residual",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "margin" => &mut self.margin,
            "cluster" => &mut self.cluster,
            "rank" => &mut self.rank,
            "chain" => &mut self.chain,
            "biorth" => &mut self.biorth,
            "pointwise" => &mut self.pointwise,
            "proj" => &mut self.proj,
            "comm" => &mut self.comm,
            "rem" => &mut self.rem,
            "fp" => &mut self.fp,
            "lift" => &mut self.lift,
            "capture" => &mut self.capture,
            "liouville" => &mut self.liouville,
            "residual" => &mut self.residual,
            _ => return None,
        })
    }

    /// Overrides one tolerance by name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Config(format!("tolerance {name} must be positive, got {value}")));
        }
        match self.slot(name) {
            Some(s) => {
                *s = value;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown tolerance {name}"))),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let mut copy = *self;
        copy.slot(name).map(|v| *v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_by_name() {
        let mut t = Tolerances::default();
        t.set("proj", 1e-5).unwrap();
        assert_eq!(t.proj, 1e-5);
        assert!(t.set("nope", 1.0).is_err());
        assert!(t.set("fp", -1.0).is_err());
        for n in Tolerances::NAMES {
            assert!(t.get(n).is_some());
        }
    }
}
