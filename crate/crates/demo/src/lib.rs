//! Browser bindings: model cost explorer, axial pair check, schedule curve.
//! Each export returns JSON text; the plain functions are testable natively.

use raxn::blocks::{axial_pair, Builder, ConvRole, PairOptions};
use raxn::config::config_from_name;
use raxn::cost::{analyze, compare_report, CountOptions, RowKind, Shape3, Tracer};
use raxn::nn::{conv1d_h, conv1d_w, conv2d, ConvSpec};
use raxn::train::{lr_at, TrainConfig};
use raxn::{Rng, Tensor};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Totals for a model name such as `ran50` or `rarnet_b1_u9`; classifier
/// RANs also carry the reduction against the ResNet of the same depth.
pub fn model_cost_json(name: &str, classes: usize) -> Result<String, String> {
    let cfg = config_from_name(name, classes).map_err(err)?;
    let m = cfg.build().map_err(err)?;
    let opts = if cfg.family.is_classifier() { CountOptions::default() } else { CountOptions::weights_only() };
    let report = analyze(&m, m.input_hw, opts).map_err(err)?;
    let mut stages: Vec<(String, u64, u64)> = Vec::new();
    for r in &report.rows {
        let group = r.layer.split('.').next().unwrap_or("").to_string();
        match stages.last_mut() {
            Some(last) if last.0 == group => {
                last.1 += r.params;
                last.2 += r.macs;
            }
            _ => stages.push((group, r.params, r.macs)),
        }
    }
    let comparison = match (cfg.family, cfg.depth) {
        (raxn::Family::Ran, Some(d)) => {
            let base_name = format!("resnet{d}{}", if cfg.widen_k > 1 { format!("-{}", cfg.widen_k) } else { String::new() });
            let base = config_from_name(&base_name, classes).and_then(|c| c.build()).map_err(err)?;
            let base = analyze(&base, base.input_hw, opts).map_err(err)?;
            compare_report(&base, &report).comparison
        }
        _ => None,
    };
    Ok(json!({
        "model": m.name,
        "depth": m.depth().map_err(err)?,
        "input": [m.in_channels, m.input_hw.0, m.input_hw.1],
        "params": report.total_params,
        "macs": report.total_macs,
        "groups": stages.iter().map(|(g, p, f)| json!({ "name": g, "params": p, "macs": f })).collect::<Vec<_>>(),
        "comparison": comparison,
    })
    .to_string())
}

fn conv_cost(t: &Tracer) -> (u64, u64) {
    t.rows()
        .iter()
        .filter(|r| matches!(r.kind, RowKind::Conv(_)))
        .fold((0, 0), |(p, m), r| (p + r.weights, m + r.macs))
}

/// Cost of one `k×k` conv against a `k×1` then `1×k` pair at `channels`
/// width on an `hw×hw` map, plus the largest gap between the pair (without
/// its residuals) and one conv with the contracted kernel on random data.
pub fn axial_check_json(channels: usize, kernel: usize, hw: usize, seed: u64) -> Result<String, String> {
    if channels == 0 || channels > 64 || kernel.is_multiple_of(2) || kernel > 9 || hw == 0 || hw > 64 {
        return Err("channels 1..=64, odd kernel up to 9, size 1..=64".into());
    }
    let x = Shape3 { c: channels, h: hw, w: hw };
    let mut square = Tracer::default();
    square
        .conv("c", &x, &ConvSpec::square(channels, channels, kernel, 1), ConvRole::Spatial)
        .map_err(err)?;
    let mut pair = Tracer::default();
    axial_pair(&mut pair, "p", &x, channels, channels, kernel, 1, &PairOptions::default()).map_err(err)?;
    let (sp, sm) = conv_cost(&square);
    let (pp, pm) = conv_cost(&pair);

    let c = channels.min(4);
    let mut rng = Rng::new(seed);
    let mut rand = |shape: &[usize]| -> Result<Tensor<f32>, String> {
        let mut t = Tensor::<f32>::zeros(shape).map_err(err)?;
        t.data_mut().iter_mut().for_each(|v| *v = rng.normal() as f32);
        Ok(t)
    };
    let img = rand(&[1, c, hw.min(16), hw.min(16)])?;
    let wh = rand(&[c, c, kernel, 1])?;
    let ww = rand(&[c, c, 1, kernel])?;
    let y = conv1d_h(&img, &wh, &ConvSpec::axial_h(c, c, kernel, 1)).map_err(err)?;
    let y = conv1d_w(&y, &ww, &ConvSpec::axial_w(c, c, kernel, 1)).map_err(err)?;
    let mut kk = Tensor::<f32>::zeros(&[c, c, kernel, kernel]).map_err(err)?;
    for o in 0..c {
        for i in 0..c {
            for a in 0..kernel {
                for b in 0..kernel {
                    let v: f32 = (0..c).map(|m| ww.at(&[o, m, 0, b]) * wh.at(&[m, i, a, 0])).sum();
                    kk.set(&[o, i, a, b], v);
                }
            }
        }
    }
    let z = conv2d(&img, &kk, None, &ConvSpec::square(c, c, kernel, 1)).map_err(err)?;
    let gap = y.max_abs_diff(&z).map_err(err)?;
    Ok(json!({
        "square": { "params": sp, "macs": sm },
        "pair": { "params": pp, "macs": pm },
        "param_ratio": pp as f64 / sp as f64,
        "mac_ratio": pm as f64 / sm as f64,
        "two_over_k": 2.0 / kernel as f64,
        "separable_max_abs_diff": gap,
    })
    .to_string())
}

/// Learning rate at every epoch `1..=epochs`.
pub fn lr_curve(epochs: usize, warmup: usize, peak: f64) -> Result<Vec<f64>, String> {
    let cfg = TrainConfig {
        epochs,
        warmup_epochs: warmup,
        peak_lr: peak,
        ..TrainConfig::default()
    };
    (1..=epochs).map(|e| lr_at(e, &cfg).map_err(err)).collect()
}

#[wasm_bindgen(js_name = modelCost)]
pub fn model_cost(name: &str, classes: usize) -> Result<String, JsError> {
    model_cost_json(name, classes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = axialCheck)]
pub fn axial_check(channels: usize, kernel: usize, hw: usize, seed: u32) -> Result<String, JsError> {
    axial_check_json(channels, kernel, hw, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn lr_curve_js(epochs: usize, warmup: usize, peak: f64) -> Result<Vec<f64>, JsError> {
    lr_curve(epochs, warmup, peak).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_cost_reports_ran_reduction() {
        let v: serde_json::Value = serde_json::from_str(&model_cost_json("ran26", 10).unwrap()).unwrap();
        assert_eq!(v["depth"], 26);
        assert!(v["comparison"]["param_reduction_pct"].as_f64().unwrap() > 0.0);
        let groups: u64 = v["groups"].as_array().unwrap().iter().map(|g| g["params"].as_u64().unwrap()).sum();
        assert_eq!(groups, v["params"].as_u64().unwrap());
        let d: serde_json::Value = serde_json::from_str(&model_cost_json("drrn19", 10).unwrap()).unwrap();
        assert_eq!(d["params"], 297_216);
        assert!(model_cost_json("vgg16", 10).is_err());
    }

    #[test]
    fn axial_check_ratio_and_gap() {
        let v: serde_json::Value = serde_json::from_str(&axial_check_json(8, 5, 10, 1).unwrap()).unwrap();
        assert_eq!(v["param_ratio"].as_f64(), Some(0.4));
        assert_eq!(v["mac_ratio"].as_f64(), Some(0.4));
        assert!(v["separable_max_abs_diff"].as_f64().unwrap() < 1e-4);
        assert!(axial_check_json(8, 4, 10, 1).is_err());
    }

    #[test]
    fn schedule_curve() {
        let c = lr_curve(150, 10, 0.1).unwrap();
        assert_eq!(c.len(), 150);
        assert!((c[9] - 0.1).abs() < 1e-12 && c[149].abs() < 1e-12);
    }
}
