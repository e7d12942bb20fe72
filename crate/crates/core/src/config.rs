use std::fmt;

use crate::error::{invalid_param, Result};

/// How the seen/masked split and the hints are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskingStrategy {
    /// Order patches by the perturbed grounding map.
    #[default]
    Grounded,
    /// Order patches by fresh uniform noise (baseline).
    Random,
}

impl MaskingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Grounded => "grounded",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for MaskingStrategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grounded" => Ok(Self::Grounded),
            "random" => Ok(Self::Random),
            other => Err(invalid_param(format!("unknown masking strategy `{other}`"))),
        }
    }
}

/// Knobs of the supervision pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SegrosConfig {
    /// Softmax temperature for every affinity map.
    pub tau: f64,
    /// Fraction of non-special text tokens kept by the filter.
    pub rho: f64,
    /// Fraction of patches used as visual hints.
    pub eta: f64,
    /// Width of the uniform noise added to the normalized grounding map.
    pub alpha: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    /// Weight of the image-to-text loss.
    pub lambda: f64,
    /// Restrict reconstruction loss to the top fraction of grounded targets.
    pub drop_loss: Option<f64>,
    pub masking: MaskingStrategy,
}

impl Default for SegrosConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            rho: 0.4,
            eta: 0.3,
            alpha: 0.5,
            gamma_lo: 0.7,
            gamma_hi: 1.0,
            lambda: 1.0,
            drop_loss: None,
            masking: MaskingStrategy::Grounded,
        }
    }
}

impl SegrosConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid_param(what.to_string()))
            }
        };
        check(self.tau > 0.0 && self.tau.is_finite(), "tau must be > 0")?;
        check(self.rho > 0.0 && self.rho <= 1.0, "rho must be in (0, 1]")?;
        check(self.eta > 0.0 && self.eta <= 1.0, "eta must be in (0, 1]")?;
        check(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            "alpha must be >= 0",
        )?;
        check(
            self.gamma_lo > 0.0 && self.gamma_lo < self.gamma_hi && self.gamma_hi <= 1.0,
            "gamma bounds must satisfy 0 < lo < hi <= 1",
        )?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda must be >= 0",
        )?;
        if let Some(r) = self.drop_loss {
            check(r > 0.0 && r <= 1.0, "drop-loss ratio must be in (0, 1]")?;
        }
        Ok(())
    }

    /// One-line summary used as the header of every report.
    pub fn header_line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SegrosConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tau={} rho={} eta={} alpha={} gamma=[{},{}) lambda={} drop_loss={} masking={}",
            self.tau,
            self.rho,
            self.eta,
            self.alpha,
            self.gamma_lo,
            self.gamma_hi,
            self.lambda,
            self.drop_loss
                .map_or_else(|| "none".to_string(), |r| r.to_string()),
            self.masking.as_str()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_header() {
        let cfg = SegrosConfig::default();
        cfg.validate().unwrap();
        assert_eq!(
            cfg.header_line(),
            "tau=1 rho=0.4 eta=0.3 alpha=0.5 gamma=[0.7,1) lambda=1 drop_loss=none masking=grounded"
        );
    }

    #[test]
    fn masking_names_round_trip() {
        for m in [MaskingStrategy::Grounded, MaskingStrategy::Random] {
            assert_eq!(m.as_str().parse::<MaskingStrategy>().unwrap(), m);
        }
        assert!("uniform".parse::<MaskingStrategy>().is_err());
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = [
            SegrosConfig {
                rho: 0.0,
                ..Default::default()
            },
            SegrosConfig {
                eta: 1.5,
                ..Default::default()
            },
            SegrosConfig {
                alpha: -0.1,
                ..Default::default()
            },
            SegrosConfig {
                gamma_lo: 0.9,
                gamma_hi: 0.8,
                ..Default::default()
            },
            SegrosConfig {
                drop_loss: Some(0.0),
                ..Default::default()
            },
            SegrosConfig {
                tau: 0.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg}");
        }
    }
}
