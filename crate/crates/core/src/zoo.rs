//! Network builders: bottleneck classifiers (ResNet / RAN, optionally wide)
//! and recursive super-resolution models (DRRN / RARNet).

use serde::{Deserialize, Serialize};

use crate::blocks::{recursive_block, BlockKind, BlockSpec, Builder, ConvRole, RecursiveSpec};
use crate::cost::Tracer;
use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Element;

/// Output width of a bottleneck block relative to its inner width.
pub const BOTTLENECK_EXPANSION: usize = 4;

pub const STAGE_CHANNELS: [usize; 4] = [120, 240, 480, 960];

/// Bottleneck counts per stage for each named depth.
pub fn stage_multipliers(depth: usize) -> Option<[usize; 4]> {
    match depth {
        26 => Some([1, 2, 4, 1]),
        35 => Some([2, 3, 4, 2]),
        50 => Some([3, 4, 6, 3]),
        101 => Some([3, 4, 23, 3]),
        152 => Some([3, 8, 36, 3]),
        _ => None,
    }
}

pub const DEPTHS: [usize; 5] = [26, 35, 50, 101, 152];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Resnet,
    Ran,
    Drrn,
    Rarnet,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Resnet => "resnet",
            Family::Ran => "ran",
            Family::Drrn => "drrn",
            Family::Rarnet => "rarnet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "resnet" => Ok(Family::Resnet),
            "ran" => Ok(Family::Ran),
            "drrn" => Ok(Family::Drrn),
            "rarnet" => Ok(Family::Rarnet),
            _ => Err(Error::InvalidArgument(format!("unknown family `{s}`"))),
        }
    }

    pub fn is_classifier(self) -> bool {
        matches!(self, Family::Resnet | Family::Ran)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub family: Family,
    pub depth: usize,
    /// Inner (bottleneck) width of each stage; block outputs are 4× this.
    pub stage_channels: Vec<usize>,
    pub multipliers: Vec<usize>,
    pub widen_k: usize,
    pub num_classes: usize,
    pub in_channels: usize,
    pub input_hw: (usize, usize),
    /// Stem stride; `None` picks `input_h / 16` (2 for 32×32, 4 for 64×64).
    pub stem_stride: Option<usize>,
    pub kernel: usize,
}

impl ClassifierConfig {
    pub fn new(family: Family, depth: usize, num_classes: usize) -> Result<Self> {
        let m = stage_multipliers(depth).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown depth {depth}; expected one of {DEPTHS:?}"))
        })?;
        Ok(ClassifierConfig {
            family,
            depth,
            stage_channels: STAGE_CHANNELS.to_vec(),
            multipliers: m.to_vec(),
            widen_k: 1,
            num_classes,
            in_channels: 3,
            input_hw: (32, 32),
            stem_stride: None,
            kernel: 3,
        })
    }

    pub fn stem_stride(&self) -> usize {
        self.stem_stride.unwrap_or((self.input_hw.0 / 16).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.family.is_classifier() {
            return Err(Error::InvalidArgument(format!(
                "{} is not a classifier family",
                self.family.name()
            )));
        }
        if self.widen_k < 1 {
            return Err(Error::InvalidArgument("widen_k must be at least 1".into()));
        }
        if self.stage_channels.len() != 4 || self.multipliers.len() != 4 {
            return Err(Error::InvalidArgument("expected four stages".into()));
        }
        if self.stage_channels.iter().chain(&self.multipliers).any(|&v| v == 0) {
            return Err(Error::InvalidArgument("stage widths and multipliers must be positive".into()));
        }
        let implied = 3 * self.multipliers.iter().sum::<usize>() + 2;
        if implied != self.depth {
            return Err(Error::InvalidArgument(format!(
                "multipliers {:?} give depth {implied}, not {}",
                self.multipliers, self.depth
            )));
        }
        if self.num_classes < 1 || self.in_channels < 1 {
            return Err(Error::InvalidArgument("classes and input channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecursiveConfig {
    pub family: Family,
    /// Recursive block count `B`.
    pub blocks: usize,
    /// Residual units per block (`U` for DRRN, `U_RAN` for RARNet).
    pub units: usize,
    pub channels: usize,
    pub scale: usize,
    pub image_channels: usize,
    pub kernel: usize,
    pub batch_norm: bool,
}

impl RecursiveConfig {
    pub fn new(family: Family, blocks: usize, units: usize) -> Self {
        RecursiveConfig {
            family,
            blocks,
            units,
            channels: 128,
            scale: 2,
            image_channels: 1,
            kernel: 3,
            batch_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.family, Family::Drrn | Family::Rarnet) {
            return Err(Error::InvalidArgument(format!(
                "{} is not a recursive family",
                self.family.name()
            )));
        }
        if self.blocks < 1 || self.units < 1 {
            return Err(Error::InvalidArgument("B and U must be at least 1".into()));
        }
        if !(2..=4).contains(&self.scale) {
            return Err(Error::InvalidArgument(format!("scale {} not in {{2, 3, 4}}", self.scale)));
        }
        if self.channels < 1 || self.image_channels < 1 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// conv, then optional batch norm and relu.
    Conv { name: String, spec: ConvSpec, bn: bool, relu: bool },
    /// optional batch norm and relu, then conv.
    PreActConv { name: String, spec: ConvSpec, bn: bool },
    Block { name: String, spec: BlockSpec },
    Recursive { name: String, spec: RecursiveSpec },
    GlobalAvgPool,
    Linear { name: String, d_in: usize, d_out: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification { classes: usize },
    SuperResolution { scale: usize },
}

/// Declarative network description shared by training, evaluation and cost
/// analysis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    pub task: Task,
    pub in_channels: usize,
    pub input_hw: (usize, usize),
    pub layers: Vec<Layer>,
    /// Add the input image to the output.
    pub global_residual: bool,
}

impl ModelGraph {
    pub fn forward<B: Builder>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { name, spec, bn, relu } => {
                    let mut y = b.conv(name, &h, spec, role_of(spec))?;
                    if *bn {
                        y = b.batch_norm(&format!("{name}_bn"), &y)?;
                    }
                    if *relu {
                        y = b.relu(&y)?;
                    }
                    y
                }
                Layer::PreActConv { name, spec, bn } => {
                    let mut y = h.clone();
                    if *bn {
                        y = b.batch_norm(&format!("{name}_bn"), &y)?;
                    }
                    let y = b.relu(&y)?;
                    b.conv(name, &y, spec, role_of(spec))?
                }
                Layer::Block { name, spec } => spec.forward(b, name, &h)?,
                Layer::Recursive { name, spec } => recursive_block(b, name, &h, spec)?,
                Layer::GlobalAvgPool => b.global_avg_pool(&h)?,
                Layer::Linear { name, d_in, d_out } => b.linear(name, &h, *d_in, *d_out)?,
            };
        }
        if self.global_residual {
            h = b.add(&h, x)?;
        }
        Ok(h)
    }

    /// Counted layer-equivalents (one axial pair = one layer, projections
    /// excluded, recursive units counted per unfolding).
    pub fn depth(&self) -> Result<usize> {
        Ok(Tracer::trace(self, self.input_hw)?.layer_equivalents())
    }

    /// He-normal weights, unit batch-norm scales. Models with a global
    /// residual start with a zeroed exit conv, i.e. as the identity on their
    /// (interpolated) input.
    pub fn init_params<T: Element>(&self, rng: &mut Rng) -> Result<ParamStore<T>> {
        let t = Tracer::trace(self, self.input_hw)?;
        let mut store = ParamStore::from_decls(t.decls(), rng)?;
        if self.global_residual {
            store.zero_where(|n| n.starts_with("exit."));
        }
        Ok(store)
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.task {
            Task::Classification { classes } => Some(classes),
            Task::SuperResolution { .. } => None,
        }
    }
}

fn role_of(spec: &ConvSpec) -> ConvRole {
    if spec.kernel_h == 1 && spec.kernel_w == 1 {
        ConvRole::Pointwise
    } else {
        ConvRole::Spatial
    }
}

/// Stem conv, four stages of (RAN) bottlenecks with stride-2 entry into
/// stages 2–4, global average pool, linear head.
pub fn build_classifier(cfg: &ClassifierConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let kind = match cfg.family {
        Family::Resnet => BlockKind::Bottleneck,
        _ => BlockKind::RanBottleneck,
    };
    let width = |i: usize| cfg.stage_channels[i] * cfg.widen_k;
    let stem_out = width(0);
    let mut layers = vec![Layer::Conv {
        name: "stem".into(),
        spec: ConvSpec::square(cfg.in_channels, stem_out, 3, cfg.stem_stride()),
        bn: true,
        relu: true,
    }];
    let mut d_in = stem_out;
    for (i, &count) in cfg.multipliers.iter().enumerate() {
        let d_mid = width(i);
        let d_out = d_mid * BOTTLENECK_EXPANSION;
        for j in 0..count {
            let stride = if i > 0 && j == 0 { 2 } else { 1 };
            let spec = BlockSpec::new(kind, d_in, d_mid, d_out, stride)?.with_kernel(cfg.kernel)?;
            layers.push(Layer::Block {
                name: format!("stage{}.{}", i + 1, j),
                spec,
            });
            d_in = d_out;
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear {
        name: "fc".into(),
        d_in,
        d_out: cfg.num_classes,
    });
    let mut name = format!("{}{}", cfg.family.name(), cfg.depth);
    if cfg.widen_k > 1 {
        name.push_str(&format!("-{}", cfg.widen_k));
    }
    let model = ModelGraph {
        name,
        task: Task::Classification {
            classes: cfg.num_classes,
        },
        in_channels: cfg.in_channels,
        input_hw: cfg.input_hw,
        layers,
        global_residual: false,
    };
    Ok(model)
}

/// 26-layer RAN with every stage widened by `widen_k`.
pub fn build_wide_ran(widen_k: usize, num_classes: usize) -> Result<ModelGraph> {
    let mut cfg = ClassifierConfig::new(Family::Ran, 26, num_classes)?;
    cfg.widen_k = widen_k;
    build_classifier(&cfg)
}

fn build_recursive(cfg: &RecursiveConfig, kind: BlockKind) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut layers = Vec::with_capacity(cfg.blocks + 1);
    for b in 0..cfg.blocks {
        layers.push(Layer::Recursive {
            name: format!("rb{}", b + 1),
            spec: RecursiveSpec {
                kind,
                d_in: if b == 0 { cfg.image_channels } else { cfg.channels },
                channels: cfg.channels,
                units: cfg.units,
                kernel: cfg.kernel,
                batch_norm: cfg.batch_norm,
                entry_preact: b > 0,
            },
        });
    }
    layers.push(Layer::PreActConv {
        name: "exit".into(),
        spec: ConvSpec::square(cfg.channels, cfg.image_channels, cfg.kernel, 1),
        bn: cfg.batch_norm,
    });
    Ok(ModelGraph {
        name: format!("{}_b{}_u{}", cfg.family.name(), cfg.blocks, cfg.units),
        task: Task::SuperResolution { scale: cfg.scale },
        in_channels: cfg.image_channels,
        input_hw: (32, 32),
        layers,
        global_residual: true,
    })
}

/// Recursive blocks of weight-tied two-conv units, exit conv, global residual.
pub fn build_drrn(cfg: &RecursiveConfig) -> Result<ModelGraph> {
    build_recursive(cfg, BlockKind::DrrnUnit)
}

/// DRRN with each residual unit replaced by an axial-pair unit.
pub fn build_rarnet(cfg: &RecursiveConfig) -> Result<ModelGraph> {
    build_recursive(cfg, BlockKind::RarnetUnit)
}

pub fn build_recursive_model(cfg: &RecursiveConfig) -> Result<ModelGraph> {
    match cfg.family {
        Family::Drrn => build_drrn(cfg),
        _ => build_rarnet(cfg),
    }
}

/// `d = (1 + 2U)·B + 1`.
pub fn drrn_depth(blocks: usize, units: usize) -> usize {
    (1 + 2 * units) * blocks + 1
}

/// `d = (1 + U_RAN)·B + 1`.
pub fn rarnet_depth(blocks: usize, units: usize) -> usize {
    (1 + units) * blocks + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_formulas() {
        assert_eq!(drrn_depth(1, 9), 20);
        assert_eq!(drrn_depth(4, 3), 29);
        assert_eq!(drrn_depth(1, 25), 52);
        assert_eq!(rarnet_depth(1, 9), 11);
        assert_eq!(rarnet_depth(4, 3), 17);
    }

    #[test]
    fn classifier_config_errors() {
        assert!(ClassifierConfig::new(Family::Resnet, 27, 10).is_err());
        let mut c = ClassifierConfig::new(Family::Ran, 26, 10).unwrap();
        c.widen_k = 0;
        assert!(build_classifier(&c).is_err());
        let mut c = ClassifierConfig::new(Family::Ran, 26, 10).unwrap();
        c.multipliers = vec![1, 1, 1, 1];
        assert!(build_classifier(&c).is_err());
    }

    #[test]
    fn built_depth_matches_key() {
        for depth in DEPTHS {
            for family in [Family::Resnet, Family::Ran] {
                let m = build_classifier(&ClassifierConfig::new(family, depth, 10).unwrap()).unwrap();
                assert_eq!(m.depth().unwrap(), depth, "{}", m.name);
            }
        }
    }

    #[test]
    fn recursive_depth_matches_formula() {
        for (b, u) in [(1, 9), (4, 3), (2, 1)] {
            let d = build_drrn(&RecursiveConfig::new(Family::Drrn, b, u)).unwrap();
            assert_eq!(d.depth().unwrap(), drrn_depth(b, u));
            let r = build_rarnet(&RecursiveConfig::new(Family::Rarnet, b, u)).unwrap();
            assert_eq!(r.depth().unwrap(), rarnet_depth(b, u));
        }
    }

    #[test]
    fn recursive_scale_is_checked() {
        let mut c = RecursiveConfig::new(Family::Drrn, 1, 1);
        c.scale = 5;
        assert!(build_drrn(&c).is_err());
    }
}
