//! Run configuration: defaults, then a `key=value` file, then flags.

use std::path::Path;

use segros::toymodel::Mode;
use segros::{MaskingStrategy, SegrosConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub pipeline: SegrosConfig,
    pub seed: u64,
    pub mode: Mode,
}

/// Values given on the command line; `None` leaves the lower layer intact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma_lo: Option<f64>,
    pub gamma_hi: Option<f64>,
    pub lambda: Option<f64>,
    pub drop_loss: Option<String>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub masking: Option<String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn real(key: &str, value: &str) -> CliResult<f64> {
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| config_err(format!("`{key}` expects a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(config_err(format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn drop_loss(value: &str) -> CliResult<Option<f64>> {
    match value.trim() {
        "none" | "" => Ok(None),
        v => real("drop_loss", v).map(Some),
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let p = &mut self.pipeline;
        match key {
            "tau" => p.tau = real(key, value)?,
            "rho" => p.rho = real(key, value)?,
            "eta" => p.eta = real(key, value)?,
            "alpha" => p.alpha = real(key, value)?,
            "gamma_lo" => p.gamma_lo = real(key, value)?,
            "gamma_hi" => p.gamma_hi = real(key, value)?,
            "lambda" => p.lambda = real(key, value)?,
            "drop_loss" => p.drop_loss = drop_loss(value)?,
            "masking" => p.masking = value.trim().parse::<MaskingStrategy>()?,
            "mode" => self.mode = value.trim().parse::<Mode>()?,
            "seed" => {
                self.seed = value.trim().parse().map_err(|_| {
                    config_err(format!("`seed` expects an unsigned integer, got `{value}`"))
                })?
            }
            other => return Err(config_err(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a flat `key=value` file; `#` starts a comment line.
    pub fn apply_file_text(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("config line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| config_err(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> CliResult<()> {
        let reals = [
            ("tau", o.tau),
            ("rho", o.rho),
            ("eta", o.eta),
            ("alpha", o.alpha),
            ("gamma_lo", o.gamma_lo),
            ("gamma_hi", o.gamma_hi),
            ("lambda", o.lambda),
        ];
        for (k, v) in reals {
            if let Some(v) = v {
                self.set(k, &v.to_string())?;
            }
        }
        if let Some(d) = &o.drop_loss {
            self.set("drop_loss", d)?;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = &o.mode {
            self.set("mode", m)?;
        }
        if let Some(m) = &o.masking {
            self.set("masking", m)?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides`; the result is validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            cfg.apply_file_text(&text)?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.pipeline.validate()?;
        Ok(cfg)
    }

    /// Report header line.
    pub fn header(&self) -> String {
        format!(
            "# {} seed={} mode={}",
            self.pipeline.header_line(),
            self.seed,
            self.mode.as_str()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_header() {
        assert_eq!(
            RunConfig::resolve(None, &Overrides::default()).unwrap().header(),
            "# tau=1 rho=0.4 eta=0.3 alpha=0.5 gamma=[0.7,1) lambda=1 drop_loss=none masking=grounded seed=0 mode=continuous"
        );
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut cfg = RunConfig::default();
        cfg.apply_file_text("# comment\n\neta = 0.4\nalpha=0\nseed=9\nmode=discrete\n")
            .unwrap();
        cfg.apply_overrides(&Overrides {
            eta: Some(0.2),
            drop_loss: Some("0.3".into()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.pipeline.eta, 0.2);
        assert_eq!(cfg.pipeline.alpha, 0.0);
        assert_eq!(cfg.pipeline.drop_loss, Some(0.3));
        assert_eq!(cfg.pipeline.rho, 0.4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, Mode::Discrete);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        for text in [
            "tau=abc",
            "colour=red",
            "novalue",
            "mode=fuzzy",
            "seed=-1",
            "rho=inf",
        ] {
            assert_eq!(
                cfg.apply_file_text(text).unwrap_err().exit_code(),
                3,
                "{text}"
            );
        }
        let o = Overrides {
            eta: Some(1.5),
            ..Default::default()
        };
        assert_eq!(RunConfig::resolve(None, &o).unwrap_err().exit_code(), 3);
    }
}
