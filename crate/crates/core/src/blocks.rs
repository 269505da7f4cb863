//! Residual blocks: ResNet basic/bottleneck, the axial pair, RAN basic and
//! bottleneck, and the weight-shared recursive units used by DRRN and RARNet.
//!
//! Blocks are written once against the [`Builder`] trait. A numeric session
//! evaluates them on a tape; the cost tracer walks the same code to count
//! parameters and multiply-adds. Parameter names are derived from the block
//! name, e.g. `stage2.0.pair.conv_h.weight`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ConvSpec;

/// What a convolution is for. Used for layer accounting and report labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvRole {
    Spatial,
    Pointwise,
    AxialH,
    AxialW,
    Projection,
}

impl ConvRole {
    /// Counted layer-equivalents: an axial pair counts once (on its height
    /// half) and shortcut projections are not counted.
    pub fn layer_weight(self) -> usize {
        match self {
            ConvRole::Spatial | ConvRole::Pointwise | ConvRole::AxialH => 1,
            ConvRole::AxialW | ConvRole::Projection => 0,
        }
    }
}

/// The primitive operations a block is built from.
pub trait Builder {
    type V: Clone;

    fn conv(&mut self, name: &str, x: &Self::V, spec: &ConvSpec, role: ConvRole) -> Result<Self::V>;
    fn batch_norm(&mut self, name: &str, x: &Self::V) -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn global_avg_pool(&mut self, x: &Self::V) -> Result<Self::V>;
    fn linear(&mut self, name: &str, x: &Self::V, d_in: usize, d_out: usize) -> Result<Self::V>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Basic,
    Bottleneck,
    RanBasic,
    RanBottleneck,
    DrrnUnit,
    RarnetUnit,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::Basic,
        BlockKind::Bottleneck,
        BlockKind::RanBasic,
        BlockKind::RanBottleneck,
        BlockKind::DrrnUnit,
        BlockKind::RarnetUnit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Basic => "basic",
            BlockKind::Bottleneck => "bottleneck",
            BlockKind::RanBasic => "ran_basic",
            BlockKind::RanBottleneck => "ran_bottleneck",
            BlockKind::DrrnUnit => "drrn_unit",
            BlockKind::RarnetUnit => "rarnet_unit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown block kind `{s}`")))
    }

    pub fn is_bottleneck(self) -> bool {
        matches!(self, BlockKind::Bottleneck | BlockKind::RanBottleneck)
    }

    pub fn is_unit(self) -> bool {
        matches!(self, BlockKind::DrrnUnit | BlockKind::RarnetUnit)
    }

    /// Layer-equivalents contributed by one application of the block.
    pub fn layer_count(self) -> usize {
        match self {
            BlockKind::Basic | BlockKind::RanBasic | BlockKind::DrrnUnit => 2,
            BlockKind::Bottleneck | BlockKind::RanBottleneck => 3,
            BlockKind::RarnetUnit => 1,
        }
    }
}

/// Internal arrangement of an axial pair.
///
/// The defaults are the block configuration: batch norm after each 1-D conv,
/// relu between the two stages, a residual add around each stage. Turning
/// everything but `bn_out` off reduces the pair to `bn(conv_w(conv_h(x)))`,
/// the separable factorisation of one `k×k` conv followed by batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOptions {
    pub bn_between: bool,
    pub relu_between: bool,
    pub bn_out: bool,
    pub inner_residual: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            bn_between: true,
            relu_between: true,
            bn_out: true,
            inner_residual: true,
        }
    }
}

impl PairOptions {
    /// Plain `conv_w ∘ conv_h` with no normalisation, activation or adds.
    pub fn bare() -> Self {
        PairOptions {
            bn_between: false,
            relu_between: false,
            bn_out: false,
            inner_residual: false,
        }
    }

    /// Factorised conv followed by batch norm, no inner residuals.
    pub fn factorized() -> Self {
        PairOptions {
            bn_out: true,
            ..Self::bare()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub d_in: usize,
    pub d_mid: usize,
    pub d_out: usize,
    pub stride: usize,
    pub kernel: usize,
    pub pair: PairOptions,
    /// Batch norm inside recursive units (classification blocks always use it).
    pub unit_bn: bool,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, d_in: usize, d_mid: usize, d_out: usize, stride: usize) -> Result<Self> {
        let spec = BlockSpec {
            kind,
            d_in,
            d_mid,
            d_out,
            stride,
            kernel: 3,
            pair: PairOptions::default(),
            unit_bn: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_kernel(mut self, k: usize) -> Result<Self> {
        self.kernel = k;
        self.validate()?;
        Ok(self)
    }

    pub fn with_pair(mut self, pair: PairOptions) -> Self {
        self.pair = pair;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_mid == 0 || self.d_out == 0 {
            return Err(Error::InvalidArgument("block channel counts must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("block stride must be at least 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel {} must be odd for same padding",
                self.kernel
            )));
        }
        if self.kind.is_bottleneck() && self.d_mid > self.d_out {
            return Err(Error::InvalidArgument(format!(
                "bottleneck width {} exceeds output width {}",
                self.d_mid, self.d_out
            )));
        }
        if self.kind.is_unit() && (self.d_in != self.d_out || self.stride != 1) {
            return Err(Error::InvalidArgument(
                "recursive units keep channels and resolution".into(),
            ));
        }
        Ok(())
    }

    /// Whether the shortcut needs a 1×1 projection.
    pub fn projection(&self) -> bool {
        self.d_in != self.d_out || self.stride > 1
    }

    /// Applies the block. Recursive units use `x` as their anchor.
    pub fn forward<B: Builder>(&self, b: &mut B, name: &str, x: &B::V) -> Result<B::V> {
        self.validate()?;
        match self.kind {
            BlockKind::Basic => basic_block(b, name, x, self),
            BlockKind::Bottleneck => bottleneck_block(b, name, x, self),
            BlockKind::RanBasic => ran_basic_block(b, name, x, self),
            BlockKind::RanBottleneck => ran_bottleneck_block(b, name, x, self),
            BlockKind::DrrnUnit => drrn_unit(b, name, x, x, self.d_out, self.kernel, self.unit_bn),
            BlockKind::RarnetUnit => rarnet_unit(b, name, x, x, self.d_out, self.kernel, self.unit_bn),
        }
    }
}

fn conv_bn<B: Builder>(b: &mut B, name: &str, x: &B::V, spec: &ConvSpec, role: ConvRole) -> Result<B::V> {
    let y = b.conv(name, x, spec, role)?;
    b.batch_norm(&format!("{name}_bn"), &y)
}

/// Identity, or a strided 1×1 projection plus batch norm when shapes change.
fn shortcut<B: Builder>(
    b: &mut B,
    name: &str,
    x: &B::V,
    d_in: usize,
    d_out: usize,
    stride: (usize, usize),
) -> Result<B::V> {
    if d_in == d_out && stride == (1, 1) {
        return Ok(x.clone());
    }
    let spec = ConvSpec::new(d_in, d_out, (1, 1), stride, (0, 0));
    conv_bn(b, name, x, &spec, ConvRole::Projection)
}

/// Height stage of a pair followed by the width convolution, without the
/// width-stage residual add. Returns `(width conv output, height-stage output)`.
#[allow(clippy::too_many_arguments)]
fn axial_stages<B: Builder>(
    b: &mut B,
    name: &str,
    x: &B::V,
    d_in: usize,
    d_out: usize,
    kernel: usize,
    stride: usize,
    opts: &PairOptions,
) -> Result<(B::V, B::V)> {
    let mut ch = b.conv(
        &format!("{name}.conv_h"),
        x,
        &ConvSpec::axial_h(d_in, d_out, kernel, stride),
        ConvRole::AxialH,
    )?;
    if opts.bn_between {
        ch = b.batch_norm(&format!("{name}.bn_h"), &ch)?;
    }
    let yh = if opts.inner_residual {
        let r = shortcut(b, &format!("{name}.proj_h"), x, d_in, d_out, (stride, 1))?;
        b.add(&ch, &r)?
    } else {
        ch
    };
    let z = if opts.relu_between { b.relu(&yh)? } else { yh.clone() };
    let mut cw = b.conv(
        &format!("{name}.conv_w"),
        &z,
        &ConvSpec::axial_w(d_out, d_out, kernel, stride),
        ConvRole::AxialW,
    )?;
    if opts.bn_out {
        cw = b.batch_norm(&format!("{name}.bn_w"), &cw)?;
    }
    Ok((cw, yh))
}

/// Height-axis conv then width-axis conv, each wrapped in its own residual:
/// `y_h = C_h(x) + x`, `y = C_w(y_h) + y_h` (with batch norm and relu as set
/// in `opts`). A strided pair puts `(s, 1)` on the height conv and `(1, s)`
/// on the width conv; the matching residuals use strided 1×1 projections.
#[allow(clippy::too_many_arguments)]
pub fn axial_pair<B: Builder>(
    b: &mut B,
    name: &str,
    x: &B::V,
    d_in: usize,
    d_out: usize,
    kernel: usize,
    stride: usize,
    opts: &PairOptions,
) -> Result<B::V> {
    let (cw, yh) = axial_stages(b, name, x, d_in, d_out, kernel, stride, opts)?;
    if opts.inner_residual {
        let r = shortcut(b, &format!("{name}.proj_w"), &yh, d_out, d_out, (1, stride))?;
        b.add(&cw, &r)
    } else {
        Ok(cw)
    }
}

/// `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`.
pub fn basic_block<B: Builder>(b: &mut B, name: &str, x: &B::V, s: &BlockSpec) -> Result<B::V> {
    let h = conv_bn(
        b,
        &format!("{name}.conv1"),
        x,
        &ConvSpec::square(s.d_in, s.d_out, s.kernel, s.stride),
        ConvRole::Spatial,
    )?;
    let h = b.relu(&h)?;
    let h = conv_bn(
        b,
        &format!("{name}.conv2"),
        &h,
        &ConvSpec::square(s.d_out, s.d_out, s.kernel, 1),
        ConvRole::Spatial,
    )?;
    let r = shortcut(b, &format!("{name}.proj"), x, s.d_in, s.d_out, (s.stride, s.stride))?;
    let y = b.add(&h, &r)?;
    b.relu(&y)
}

/// 1×1 reduce, `k×k` (carrying the stride), 1×1 expand, shortcut add, relu.
pub fn bottleneck_block<B: Builder>(b: &mut B, name: &str, x: &B::V, s: &BlockSpec) -> Result<B::V> {
    let h = conv_bn(
        b,
        &format!("{name}.conv1"),
        x,
        &ConvSpec::pointwise(s.d_in, s.d_mid, 1),
        ConvRole::Pointwise,
    )?;
    let h = b.relu(&h)?;
    let h = conv_bn(
        b,
        &format!("{name}.conv2"),
        &h,
        &ConvSpec::square(s.d_mid, s.d_mid, s.kernel, s.stride),
        ConvRole::Spatial,
    )?;
    let h = b.relu(&h)?;
    let h = conv_bn(
        b,
        &format!("{name}.conv3"),
        &h,
        &ConvSpec::pointwise(s.d_mid, s.d_out, 1),
        ConvRole::Pointwise,
    )?;
    let r = shortcut(b, &format!("{name}.proj"), x, s.d_in, s.d_out, (s.stride, s.stride))?;
    let y = b.add(&h, &r)?;
    b.relu(&y)
}

/// Both `k×k` convs of the basic block replaced by axial pairs.
///
/// The second pair's width-stage residual is the block shortcut itself, so
/// every 1-D conv has exactly one residual connection and the block reduces to
/// the basic block when the inner residuals are turned off.
pub fn ran_basic_block<B: Builder>(b: &mut B, name: &str, x: &B::V, s: &BlockSpec) -> Result<B::V> {
    let h = axial_pair(b, &format!("{name}.pair1"), x, s.d_in, s.d_out, s.kernel, s.stride, &s.pair)?;
    let h = b.relu(&h)?;
    let (cw, _) = axial_stages(b, &format!("{name}.pair2"), &h, s.d_out, s.d_out, s.kernel, 1, &s.pair)?;
    let r = shortcut(b, &format!("{name}.proj"), x, s.d_in, s.d_out, (s.stride, s.stride))?;
    let y = b.add(&cw, &r)?;
    b.relu(&y)
}

/// The bottleneck with its single `k×k` conv replaced by an axial pair.
pub fn ran_bottleneck_block<B: Builder>(b: &mut B, name: &str, x: &B::V, s: &BlockSpec) -> Result<B::V> {
    let h = conv_bn(
        b,
        &format!("{name}.conv1"),
        x,
        &ConvSpec::pointwise(s.d_in, s.d_mid, 1),
        ConvRole::Pointwise,
    )?;
    let h = b.relu(&h)?;
    let h = axial_pair(b, &format!("{name}.pair"), &h, s.d_mid, s.d_mid, s.kernel, s.stride, &s.pair)?;
    let h = b.relu(&h)?;
    let h = conv_bn(
        b,
        &format!("{name}.conv3"),
        &h,
        &ConvSpec::pointwise(s.d_mid, s.d_out, 1),
        ConvRole::Pointwise,
    )?;
    let r = shortcut(b, &format!("{name}.proj"), x, s.d_in, s.d_out, (s.stride, s.stride))?;
    let y = b.add(&h, &r)?;
    b.relu(&y)
}

fn pre_activation<B: Builder>(b: &mut B, name: &str, x: &B::V, bn: bool) -> Result<B::V> {
    if bn {
        let h = b.batch_norm(name, x)?;
        b.relu(&h)
    } else {
        b.relu(x)
    }
}

/// DRRN residual unit: two pre-activated `k×k` convs, residual taken from
/// `anchor` (the recursive block's entry output).
pub fn drrn_unit<B: Builder>(
    b: &mut B,
    name: &str,
    x: &B::V,
    anchor: &B::V,
    channels: usize,
    kernel: usize,
    bn: bool,
) -> Result<B::V> {
    let spec = ConvSpec::square(channels, channels, kernel, 1);
    let h = pre_activation(b, &format!("{name}.bn1"), x, bn)?;
    let h = b.conv(&format!("{name}.conv1"), &h, &spec, ConvRole::Spatial)?;
    let h = pre_activation(b, &format!("{name}.bn2"), &h, bn)?;
    let h = b.conv(&format!("{name}.conv2"), &h, &spec, ConvRole::Spatial)?;
    b.add(&h, anchor)
}

/// RARNet unit: a pre-activated axial pair. The height stage adds `anchor`
/// (the recursive block's entry output), the width stage adds the height
/// stage's output.
pub fn rarnet_unit<B: Builder>(
    b: &mut B,
    name: &str,
    x: &B::V,
    anchor: &B::V,
    channels: usize,
    kernel: usize,
    bn: bool,
) -> Result<B::V> {
    let h = pre_activation(b, &format!("{name}.bn_h"), x, bn)?;
    let h = b.conv(
        &format!("{name}.conv_h"),
        &h,
        &ConvSpec::axial_h(channels, channels, kernel, 1),
        ConvRole::AxialH,
    )?;
    let yh = b.add(&h, anchor)?;
    let h = pre_activation(b, &format!("{name}.bn_w"), &yh, bn)?;
    let h = b.conv(
        &format!("{name}.conv_w"),
        &h,
        &ConvSpec::axial_w(channels, channels, kernel, 1),
        ConvRole::AxialW,
    )?;
    b.add(&h, &yh)
}

/// A recursive block: entry conv, then one residual unit applied `units`
/// times with a single shared parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecursiveSpec {
    pub kind: BlockKind,
    pub d_in: usize,
    pub channels: usize,
    pub units: usize,
    pub kernel: usize,
    pub batch_norm: bool,
    /// Pre-activate the entry conv (every block except one fed the image).
    pub entry_preact: bool,
}

impl RecursiveSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.kind.is_unit() {
            return Err(Error::InvalidArgument(format!(
                "recursive blocks take drrn_unit or rarnet_unit, not {}",
                self.kind.name()
            )));
        }
        if self.units == 0 {
            return Err(Error::InvalidArgument("a recursive block needs U ≥ 1".into()));
        }
        if self.d_in == 0 || self.channels == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument("invalid recursive block geometry".into()));
        }
        Ok(())
    }
}

pub fn recursive_block<B: Builder>(b: &mut B, name: &str, x: &B::V, s: &RecursiveSpec) -> Result<B::V> {
    s.validate()?;
    let entry_in = if s.entry_preact {
        pre_activation(b, &format!("{name}.entry_bn"), x, s.batch_norm)?
    } else {
        x.clone()
    };
    let anchor = b.conv(
        &format!("{name}.entry"),
        &entry_in,
        &ConvSpec::square(s.d_in, s.channels, s.kernel, 1),
        ConvRole::Spatial,
    )?;
    let unit = format!("{name}.unit");
    let mut h = anchor.clone();
    for _ in 0..s.units {
        h = match s.kind {
            BlockKind::DrrnUnit => drrn_unit(b, &unit, &h, &anchor, s.channels, s.kernel, s.batch_norm)?,
            _ => rarnet_unit(b, &unit, &h, &anchor, s.channels, s.kernel, s.batch_norm)?,
        };
    }
    Ok(h)
}
