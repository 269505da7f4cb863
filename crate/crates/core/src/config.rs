//! Self-describing JSON run configuration and model name shorthands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{SrConfig, TrainConfig};
use crate::zoo::{build_classifier, build_recursive_model, ClassifierConfig, Family, ModelGraph, RecursiveConfig};

/// Where training and evaluation images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `synthetic` or `cifar10`.
    pub source: String,
    /// Synthetic kind: `two-gaussians`, `oriented-bars` or `sr-edges`.
    pub synth: String,
    pub n_train: usize,
    pub n_val: usize,
    /// Synthetic image side; 0 keeps the kind's default.
    pub image_size: usize,
    pub train_path: Option<String>,
    pub val_path: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synthetic".into(),
            synth: "oriented-bars".into(),
            n_train: 1000,
            n_val: 200,
            image_size: 0,
            train_path: None,
            val_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default = "one")]
    pub widen_k: usize,
    #[serde(default = "ten")]
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_channels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<usize>,
    #[serde(rename = "B", default = "one")]
    pub blocks: usize,
    #[serde(rename = "U", default = "nine")]
    pub units: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "two")]
    pub scale: usize,
    /// Batch norm inside recursive units. Off by default: at desk scale the
    /// running statistics lag the weights and cost more PSNR than BN gains.
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sr: SrConfig,
    #[serde(default)]
    pub data: DataConfig,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn nine() -> usize {
    9
}
fn ten() -> usize {
    10
}
fn default_channels() -> usize {
    128
}

impl RunConfig {
    pub fn new(family: Family) -> Self {
        serde_json::from_value(serde_json::json!({ "family": family })).expect("defaults deserialize")
    }

    /// Parses JSON; errors name the offending line, column and key.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.is_classifier() {
            self.classifier()?.validate()?;
        } else {
            self.recursive().validate()?;
        }
        self.train.validate()?;
        self.sr.validate()?;
        Ok(())
    }

    pub fn classifier(&self) -> Result<ClassifierConfig> {
        let depth = self
            .depth
            .ok_or_else(|| Error::Config("missing key `depth` for a classifier family".into()))?;
        let mut c = match &self.multipliers {
            Some(m) => {
                let mut c = ClassifierConfig::new(self.family, 26, self.classes)?;
                c.depth = depth;
                c.multipliers = m.clone();
                c
            }
            None => ClassifierConfig::new(self.family, depth, self.classes).map_err(|e| Error::Config(format!("key `depth`: {e}")))?,
        };
        if let Some(s) = &self.stage_channels {
            c.stage_channels = s.clone();
        }
        if let Some(s) = self.input_size {
            c.input_hw = (s, s);
        }
        c.widen_k = self.widen_k;
        Ok(c)
    }

    pub fn recursive(&self) -> RecursiveConfig {
        let mut r = RecursiveConfig::new(self.family, self.blocks, self.units);
        r.channels = self.channels;
        r.scale = self.scale;
        r.batch_norm = self.batch_norm;
        r
    }

    pub fn build(&self) -> Result<ModelGraph> {
        if self.family.is_classifier() {
            build_classifier(&self.classifier()?)
        } else {
            build_recursive_model(&self.recursive())
        }
    }
}

/// Parses shorthands: `resnet26`, `ran50`, `ran26-4` (widened),
/// `drrn_b1_u9`, `rarnet_b1_u9`, and the aliases `drrn19`, `drrn125`,
/// `rarnet19`, `rarnet25`, `rarnet125`.
pub fn config_from_name(name: &str, classes: usize) -> Result<RunConfig> {
    let bad = || Error::Config(format!("unrecognized model name `{name}`"));
    let lower = name.to_ascii_lowercase();
    let alias = match lower.as_str() {
        "drrn19" => Some((Family::Drrn, 1, 9)),
        "drrn125" => Some((Family::Drrn, 1, 25)),
        "rarnet19" => Some((Family::Rarnet, 1, 9)),
        "rarnet25" | "rarnet125" => Some((Family::Rarnet, 1, 25)),
        _ => None,
    };
    if let Some((family, b, u)) = alias {
        let mut c = RunConfig::new(family);
        c.blocks = b;
        c.units = u;
        return Ok(c);
    }
    for (prefix, family) in [("drrn_", Family::Drrn), ("rarnet_", Family::Rarnet)] {
        if let Some(rest) = lower.strip_prefix(prefix) {
            let (b, u) = rest.split_once('_').ok_or_else(bad)?;
            let b = b.strip_prefix('b').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let u = u.strip_prefix('u').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let mut c = RunConfig::new(family);
            c.blocks = b;
            c.units = u;
            return Ok(c);
        }
    }
    for (prefix, family) in [("resnet", Family::Resnet), ("ran", Family::Ran)] {
        if let Some(rest) = lower.strip_prefix(prefix) {
            let (depth, widen) = match rest.split_once('-') {
                Some((d, k)) => (d, k.parse().map_err(|_| bad())?),
                None => (rest, 1),
            };
            let mut c = RunConfig::new(family);
            c.depth = Some(depth.parse().map_err(|_| bad())?);
            c.widen_k = widen;
            c.classes = classes;
            c.validate()?;
            return Ok(c);
        }
    }
    Err(bad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        let c = config_from_name("ran26-4", 100).unwrap();
        assert_eq!((c.family, c.depth, c.widen_k, c.classes), (Family::Ran, Some(26), 4, 100));
        let d = config_from_name("drrn19", 10).unwrap();
        assert_eq!((d.blocks, d.units), (1, 9));
        let r = config_from_name("rarnet_b4_u3", 10).unwrap();
        assert_eq!((r.family, r.blocks, r.units), (Family::Rarnet, 4, 3));
        assert!(config_from_name("vgg16", 10).is_err());
        assert!(config_from_name("resnet27", 10).is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let c = RunConfig::from_json(r#"{"family": "ran", "depth": 26, "widen_k": 2, "seed": 7}"#).unwrap();
        assert_eq!(c.seed, 7);
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);

        let err = RunConfig::from_json("{\n  \"family\": \"ran\",\n  \"dept\": 26\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dept") && msg.contains("line 3"), "{msg}");
        assert!(RunConfig::from_json(r#"{"family": "ran"}"#).is_err());
    }

    #[test]
    fn recursive_keys() {
        let c = RunConfig::from_json(r#"{"family": "rarnet", "B": 1, "U": 2, "channels": 32}"#).unwrap();
        let m = c.build().unwrap();
        assert_eq!(m.name, "rarnet_b1_u2");
    }
}
