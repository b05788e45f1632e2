use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub rec: f64,
    pub fk: f64,
    pub vel: f64,
    pub acc: f64,
    pub commit: f64,
    pub con: f64,
    pub mi: f64,
}

impl LossWeights {
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("rec", self.rec),
            ("fk", self.fk),
            ("vel", self.vel),
            ("acc", self.acc),
            ("commit", self.commit),
            ("con", self.con),
            ("mi", self.mi),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub profile: String,
    pub latent_dim: usize,
    pub conv_feature: usize,
    pub n_books: usize,
    pub codes_per_book: usize,
    pub downsample_factor: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub loss: LossWeights,
    /// Reconstruction weight on the root velocity and up-vector groups.
    pub emphasis_weight: f64,
    /// Number of leading content codebooks.
    pub content_cutoff: usize,
    pub tau_con: f64,
    pub tau_mi: f64,
    pub gamma: f64,
    pub seed: u64,
    pub window_len: usize,
    pub window_stride: usize,
    pub fps: f64,
    pub batch_size: usize,
    /// Steps between dead-code checks.
    pub reset_window: u64,
    /// Minimum selections per window for a code to survive.
    pub reset_threshold: u64,
    /// Contrast every style layer's residual instead of only the first.
    pub contrast_all_style_layers: bool,
}

pub const PROFILES: [&str; 3] = ["100style", "aberman", "synthetic"];

impl CodecConfig {
    pub fn profile(name: &str) -> Result<Self> {
        let base = Self {
            profile: name.to_string(),
            latent_dim: 256,
            conv_feature: 512,
            n_books: 8,
            codes_per_book: 512,
            downsample_factor: 4,
            learning_rate: 1e-4,
            grad_clip: 1.0,
            loss: LossWeights {
                rec: 1.0,
                fk: 0.01,
                vel: 0.1,
                acc: 0.05,
                commit: 0.05,
                con: 0.005,
                mi: 0.02,
            },
            emphasis_weight: 2.0,
            content_cutoff: 1,
            tau_con: 0.1,
            tau_mi: 1.0,
            gamma: 0.99,
            seed: 0,
            window_len: 64,
            window_stride: 16,
            fps: 30.0,
            batch_size: 32,
            reset_window: 64,
            reset_threshold: 1,
            contrast_all_style_layers: false,
        };
        match name {
            "100style" => Ok(base),
            "aberman" => Ok(Self {
                n_books: 4,
                codes_per_book: 256,
                loss: LossWeights {
                    con: 0.05,
                    mi: 0.12,
                    ..base.loss
                },
                ..base
            }),
            "synthetic" => Ok(Self {
                latent_dim: 32,
                conv_feature: 64,
                n_books: 4,
                codes_per_book: 64,
                learning_rate: 1e-3,
                loss: LossWeights {
                    commit: 0.5,
                    con: 4.0,
                    mi: 3.0,
                    ..base.loss
                },
                emphasis_weight: 10.0,
                tau_mi: 0.1,
                reset_window: 0,
                ..base
            }),
            other => Err(Error::Config(format!(
                "unknown profile {other:?}; expected one of {PROFILES:?}"
            ))),
        }
    }

    /// A profile with the fields of `overrides` (a TOML table) replaced.
    pub fn from_toml_overrides(profile: &str, overrides: Option<&toml::Table>) -> Result<Self> {
        let base = Self::profile(profile)?;
        let mut table = toml::Table::try_from(&base)
            .map_err(|e| Error::Config(format!("cannot serialise profile: {e}")))?;
        if let Some(o) = overrides {
            merge(&mut table, o);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in self.loss.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("loss coefficient {name} must be a finite value ≥ 0, got {v}"));
            }
        }
        if self.latent_dim == 0 || self.conv_feature == 0 {
            return bad("latent_dim and conv_feature must be positive".into());
        }
        if self.n_books == 0 {
            return bad("n_books must be at least 1".into());
        }
        if self.codes_per_book < 2 {
            return bad(format!("codes_per_book must be at least 2, got {}", self.codes_per_book));
        }
        if self.n_books > 1 && !(1..self.n_books).contains(&self.content_cutoff) {
            return bad(format!(
                "content_cutoff {} must lie in [1, {})",
                self.content_cutoff, self.n_books
            ));
        }
        if !self.downsample_factor.is_power_of_two() {
            return bad(format!(
                "downsample_factor must be a power of two, got {}",
                self.downsample_factor
            ));
        }
        if self.window_len == 0 || !self.window_len.is_multiple_of(self.downsample_factor) {
            return bad(format!(
                "window_len {} is not a positive multiple of downsample_factor {}",
                self.window_len, self.downsample_factor
            ));
        }
        if self.window_stride == 0 {
            return bad("window_stride must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return bad("learning_rate and grad_clip must be positive".into());
        }
        if !(self.tau_con > 0.0 && self.tau_mi > 0.0) {
            return bad("temperatures must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.emphasis_weight <= 0.0 {
            return bad("emphasis_weight must be positive".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_profile_values() {
        let c = CodecConfig::profile("100style").unwrap();
        assert_eq!((c.n_books, c.codes_per_book, c.latent_dim, c.conv_feature), (8, 512, 256, 512));
        assert_eq!((c.learning_rate, c.grad_clip), (1e-4, 1.0));
        assert_eq!(
            c.loss,
            LossWeights { rec: 1.0, fk: 0.01, vel: 0.1, acc: 0.05, commit: 0.05, con: 0.005, mi: 0.02 }
        );
        let a = CodecConfig::profile("aberman").unwrap();
        assert_eq!((a.n_books, a.codes_per_book), (4, 256));
        assert_eq!((a.loss.con, a.loss.mi), (0.05, 0.12));
        assert!(CodecConfig::profile("nope").is_err());
        for p in PROFILES {
            CodecConfig::profile(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn overrides_merge_and_validate() {
        let o: toml::Table = toml::from_str("n_books = 2\n[loss]\ncon = 0.0\n").unwrap();
        let c = CodecConfig::from_toml_overrides("synthetic", Some(&o)).unwrap();
        assert_eq!(c.n_books, 2);
        assert_eq!(c.loss.con, 0.0);
        assert_eq!(c.loss.mi, CodecConfig::profile("synthetic").unwrap().loss.mi);

        let o: toml::Table = toml::from_str("window_len = 30\n").unwrap();
        assert!(CodecConfig::from_toml_overrides("synthetic", Some(&o)).is_err());
        let o: toml::Table = toml::from_str("bogus = 1\n").unwrap();
        let err = CodecConfig::from_toml_overrides("synthetic", Some(&o)).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn toml_round_trip() {
        let c = CodecConfig::profile("aberman").unwrap();
        let back: CodecConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
