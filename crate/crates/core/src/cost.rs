//! Parameter and multiply-add accounting, report formats, latency harness.
//!
//! Counting walks the model with [`Tracer`], a [`Builder`] that propagates
//! `[C, H, W]` shapes instead of values. A 2-D conv of extent `k` on an
//! `h×w` map costs `h·w·k²·d_in·d_out` MACs, i.e. `O(N·k²)` for `N = h·w`
//! pixels; an axial pair costs `2·h·w·k·d²`, a ratio of `2/k`.
//!
//! "FLOPs" in reports are multiply-adds. Batch norm, relu, pooling and
//! residual adds carry no MACs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blocks::{Builder, ConvRole};
use crate::error::{Error, Result};
use crate::nn::{ConvSpec, Mode};
use crate::params::{Init, ParamDecl, ParamStore};
use crate::rng::Rng;
use crate::session;
use crate::tensor::Tensor;
use crate::zoo::ModelGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RowKind {
    Conv(ConvRole),
    BatchNorm,
    Linear,
}

#[derive(Clone, Debug)]
pub struct TraceRow {
    pub layer: String,
    pub kind: RowKind,
    pub out_shape: Shape3,
    /// Weight elements, counted on first use of a name only.
    pub weights: u64,
    /// Bias elements (conv or linear), counted on first use only.
    pub biases: u64,
    pub macs: u64,
}

/// Shape-level walk of a model collecting per-layer costs and parameter
/// declarations.
#[derive(Default)]
pub struct Tracer {
    rows: Vec<TraceRow>,
    decls: Vec<ParamDecl>,
    seen: HashSet<String>,
    layer_equivalents: usize,
}

impl Tracer {
    pub fn trace(model: &ModelGraph, input_hw: (usize, usize)) -> Result<Tracer> {
        let mut t = Tracer::default();
        let x = Shape3 {
            c: model.in_channels,
            h: input_hw.0,
            w: input_hw.1,
        };
        model.forward(&mut t, &x)?;
        Ok(t)
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn decls(&self) -> &[ParamDecl] {
        &self.decls
    }

    pub fn layer_equivalents(&self) -> usize {
        self.layer_equivalents
    }

    fn declare(&mut self, name: String, shape: Vec<usize>, init: Init, trainable: bool) -> bool {
        if !self.seen.insert(name.clone()) {
            return false;
        }
        self.decls.push(ParamDecl {
            name,
            shape,
            init,
            trainable,
        });
        true
    }
}

impl Builder for Tracer {
    type V = Shape3;

    fn conv(&mut self, name: &str, x: &Shape3, spec: &ConvSpec, role: ConvRole) -> Result<Shape3> {
        spec.validate()?;
        if x.c != spec.d_in {
            return Err(Error::shape_mismatch(&[spec.d_in, x.h, x.w], &[x.c, x.h, x.w]));
        }
        let (ho, wo) = spec.output_hw(x.h, x.w)?;
        let first = self.declare(
            format!("{name}.weight"),
            spec.weight_shape().to_vec(),
            Init::HeNormal {
                fan_in: spec.fan_in(),
            },
            true,
        );
        if spec.bias {
            self.declare(format!("{name}.bias"), vec![spec.d_out], Init::Zeros, true);
        }
        self.layer_equivalents += role.layer_weight();
        let out = Shape3 {
            c: spec.d_out,
            h: ho,
            w: wo,
        };
        self.rows.push(TraceRow {
            layer: name.to_string(),
            kind: RowKind::Conv(role),
            out_shape: out,
            weights: if first { (spec.d_out * spec.fan_in()) as u64 } else { 0 },
            biases: if first && spec.bias { spec.d_out as u64 } else { 0 },
            macs: (ho * wo * spec.d_out * spec.fan_in()) as u64,
        });
        Ok(out)
    }

    fn batch_norm(&mut self, name: &str, x: &Shape3) -> Result<Shape3> {
        let c = vec![x.c];
        let first = self.declare(format!("{name}.weight"), c.clone(), Init::Ones, true);
        self.declare(format!("{name}.bias"), c.clone(), Init::Zeros, true);
        self.declare(format!("{name}.running_mean"), c.clone(), Init::Zeros, false);
        self.declare(format!("{name}.running_var"), c, Init::Ones, false);
        self.rows.push(TraceRow {
            layer: name.to_string(),
            kind: RowKind::BatchNorm,
            out_shape: *x,
            weights: if first { 2 * x.c as u64 } else { 0 },
            biases: 0,
            macs: 0,
        });
        Ok(*x)
    }

    fn relu(&mut self, x: &Shape3) -> Result<Shape3> {
        Ok(*x)
    }

    fn add(&mut self, a: &Shape3, b: &Shape3) -> Result<Shape3> {
        if a != b {
            return Err(Error::shape_mismatch(&[a.c, a.h, a.w], &[b.c, b.h, b.w]));
        }
        Ok(*a)
    }

    fn global_avg_pool(&mut self, x: &Shape3) -> Result<Shape3> {
        Ok(Shape3 { c: x.c, h: 1, w: 1 })
    }

    fn linear(&mut self, name: &str, x: &Shape3, d_in: usize, d_out: usize) -> Result<Shape3> {
        if x.c * x.h * x.w != d_in {
            return Err(Error::shape_mismatch(&[d_in], &[x.c * x.h * x.w]));
        }
        let first = self.declare(
            format!("{name}.weight"),
            vec![d_out, d_in],
            Init::HeNormal { fan_in: d_in },
            true,
        );
        self.declare(format!("{name}.bias"), vec![d_out], Init::Zeros, true);
        self.layer_equivalents += 1;
        let out = Shape3 { c: d_out, h: 1, w: 1 };
        self.rows.push(TraceRow {
            layer: name.to_string(),
            kind: RowKind::Linear,
            out_shape: out,
            weights: if first { (d_in * d_out) as u64 } else { 0 },
            biases: if first { d_out as u64 } else { 0 },
            macs: (d_in * d_out) as u64,
        });
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountOptions {
    pub include_bn: bool,
    pub include_bias: bool,
}

impl Default for CountOptions {
    fn default() -> Self {
        CountOptions {
            include_bn: true,
            include_bias: false,
        }
    }
}

impl CountOptions {
    /// Convolution (and linear) weights only.
    pub fn weights_only() -> Self {
        CountOptions {
            include_bn: false,
            include_bias: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub layer: String,
    pub kind: String,
    pub out_shape: Vec<usize>,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub base_model: String,
    pub base_params: u64,
    pub base_macs: u64,
    pub param_delta: i64,
    pub mac_delta: i64,
    pub param_reduction_pct: f64,
    pub mac_reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub input_shape: Vec<usize>,
    pub options: CountOptions,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
    pub comparison: Option<Comparison>,
}

fn kind_label(kind: &RowKind, spec_hint: &str) -> String {
    match kind {
        RowKind::Conv(ConvRole::AxialH) => "axial_h".into(),
        RowKind::Conv(ConvRole::AxialW) => "axial_w".into(),
        RowKind::Conv(ConvRole::Projection) => "proj".into(),
        RowKind::Conv(_) => spec_hint.to_string(),
        RowKind::BatchNorm => "bn".into(),
        RowKind::Linear => "linear".into(),
    }
}

/// Per-layer parameters and MACs of `model` on a `[C, H, W]` input.
pub fn analyze(model: &ModelGraph, input_hw: (usize, usize), opts: CountOptions) -> Result<CostReport> {
    let tracer = Tracer::trace(model, input_hw)?;
    let mut rows = Vec::new();
    let conv_kinds: std::collections::HashMap<&str, String> = tracer
        .decls()
        .iter()
        .filter(|d| d.shape.len() == 4)
        .map(|d| {
            (
                d.name.trim_end_matches(".weight"),
                format!("conv{}x{}", d.shape[2], d.shape[3]),
            )
        })
        .collect();
    for r in tracer.rows() {
        if r.kind == RowKind::BatchNorm && !opts.include_bn {
            continue;
        }
        let params = match r.kind {
            RowKind::Conv(_) => r.weights + if opts.include_bias { r.biases } else { 0 },
            _ => r.weights + r.biases,
        };
        let hint = conv_kinds.get(r.layer.as_str()).map(String::as_str).unwrap_or("conv");
        rows.push(CostRow {
            layer: r.layer.clone(),
            kind: kind_label(&r.kind, hint),
            out_shape: vec![r.out_shape.c, r.out_shape.h, r.out_shape.w],
            params,
            macs: r.macs,
        });
    }
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        model: model.name.clone(),
        input_shape: vec![model.in_channels, input_hw.0, input_hw.1],
        options: opts,
        rows,
        total_params,
        total_macs,
        comparison: None,
    })
}

/// Parameter report at the model's nominal input geometry. Tied weights are
/// counted once.
pub fn count_params(model: &ModelGraph, include_bn: bool, include_bias: bool) -> Result<CostReport> {
    analyze(model, model.input_hw, CountOptions { include_bn, include_bias })
}

/// Multiply-add report for one `[C, H, W]` image.
pub fn count_macs(model: &ModelGraph, input_shape: [usize; 3]) -> Result<CostReport> {
    if input_shape[0] != model.in_channels {
        return Err(Error::shape_mismatch(&[model.in_channels], &input_shape[..1]));
    }
    analyze(model, (input_shape[1], input_shape[2]), CountOptions::default())
}

/// `new` annotated with deltas and percent reductions relative to `base`.
pub fn compare_report(base: &CostReport, new: &CostReport) -> CostReport {
    let pct = |b: u64, n: u64| {
        if b == 0 {
            0.0
        } else {
            (b as f64 - n as f64) / b as f64 * 100.0
        }
    };
    let mut out = new.clone();
    out.comparison = Some(Comparison {
        base_model: base.model.clone(),
        base_params: base.total_params,
        base_macs: base.total_macs,
        param_delta: new.total_params as i64 - base.total_params as i64,
        mac_delta: new.total_macs as i64 - base.total_macs as i64,
        param_reduction_pct: pct(base.total_params, new.total_params),
        mac_reduction_pct: pct(base.total_macs, new.total_macs),
    });
    out
}

pub const CSV_HEADER: &str = "layer,kind,out_shape,params,macs";

impl CostReport {
    /// `layer,kind,out_shape,params,macs` rows plus a final `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let shape: Vec<String> = r.out_shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "{},{},{},{},{}", r.layer, r.kind, shape.join("x"), r.params, r.macs);
        }
        let _ = writeln!(s, "total,total,,{},{}", self.total_params, self.total_macs);
        s
    }

    /// Parses [`Self::to_csv`] output back into rows and totals. Lines
    /// starting with `#` are comments.
    pub fn rows_from_csv(text: &str) -> Result<(Vec<CostRow>, u64, u64)> {
        let bad = |line: usize, why: &str| Error::Config(format!("cost csv line {line}: {why}"));
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.starts_with('#'));
        match lines.next() {
            Some((_, CSV_HEADER)) => {}
            other => return Err(bad(other.map_or(1, |(n, _)| n), "unexpected header")),
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(n, "expected 5 fields"));
            }
            let params = f[3].parse().map_err(|_| bad(n, "params"))?;
            let macs = f[4].parse().map_err(|_| bad(n, "macs"))?;
            if f[0] == "total" && f[1] == "total" {
                return Ok((rows, params, macs));
            }
            let out_shape = f[2]
                .split('x')
                .map(|d| d.parse().map_err(|_| bad(n, "out_shape")))
                .collect::<Result<Vec<usize>>>()?;
            rows.push(CostRow {
                layer: f[0].into(),
                kind: f[1].into(),
                out_shape,
                params,
                macs,
            });
        }
        Err(bad(0, "missing total row"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `40.9M`, `0.66G` style abbreviations.
pub fn human_count(n: u64) -> String {
    let v = n as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.1}K", v / 1e3)
    } else {
        n.to_string()
    }
}

/// Markdown table with one row per report and, when `new` carries a
/// comparison, a reduction row.
pub fn comparison_markdown(base: &CostReport, new: &CostReport, latency: Option<(LatencyStats, LatencyStats)>) -> String {
    let mut s = String::new();
    let lat = |l: Option<LatencyStats>| l.map(|l| format!("{:.3}ms", l.mean_ms)).unwrap_or_else(|| "-".into());
    let (lb, ln) = match latency {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    s.push_str("| Model | Params | FLOPs (MACs) | Latency |\n|---|---:|---:|---:|\n");
    let _ = writeln!(
        s,
        "| {} | {} | {} | {} |",
        base.model,
        human_count(base.total_params),
        human_count(base.total_macs),
        lat(lb)
    );
    let _ = writeln!(
        s,
        "| {} | {} | {} | {} |",
        new.model,
        human_count(new.total_params),
        human_count(new.total_macs),
        lat(ln)
    );
    if let Some(c) = &new.comparison {
        let _ = writeln!(
            s,
            "| reduction | {:.1}% | {:.1}% | |",
            c.param_reduction_pct, c.mac_reduction_pct
        );
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub reps: usize,
}

/// Order statistic by nearest rank.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Wall-clock time of an eval-mode forward pass on one image.
pub fn latency_bench(
    model: &ModelGraph,
    store: &ParamStore<f32>,
    input_shape: [usize; 3],
    warmup_reps: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if reps < 1 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let mut rng = Rng::new(0);
    let mut x = Tensor::<f32>::zeros(&[1, input_shape[0], input_shape[1], input_shape[2]])?;
    x.data_mut().iter_mut().for_each(|v| *v = rng.normal() as f32);
    // Eval mode never writes to the store; work on a shallow copy.
    let mut store = store.clone();
    for _ in 0..warmup_reps {
        session::forward(model, &mut store, &x, Mode::Eval)?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let y = session::forward(model, &mut store, &x, Mode::Eval)?;
        std::hint::black_box(&y);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / reps as f64;
    times.sort_by(|a, b| a.total_cmp(b));
    Ok(LatencyStats {
        mean_ms,
        p50_ms: percentile(&times, 50.0),
        p95_ms: percentile(&times, 95.0),
        reps,
    })
}
