//! Ready-made finite-difference checks of single blocks, for command-line use.

use crate::blocks::{BlockKind, BlockSpec};
use crate::cost::{Shape3, Tracer};
use crate::error::Result;
use crate::nn::{grad_check, GradCheckReport, Mode};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::session::Session;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Random weights (batch-norm scales in `[0.5, 1.5]`), random input and
/// target, MSE loss on the block output; every trainable tensor and the
/// input are checked. Batch 2, 4×4 spatial.
pub fn check_block(spec: &BlockSpec, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let (n, h, w) = (2, 4, 4);
    let mut tracer = Tracer::default();
    let out = spec.forward(&mut tracer, "blk", &Shape3 { c: spec.d_in, h, w })?;
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::<f64>::from_decls(tracer.decls(), &mut rng)?;
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        if !store.is_trainable(&name) {
            continue;
        }
        let bn_scale = store.get(&name)?.rank() == 1 && name.ends_with(".weight");
        for v in store.get_mut(&name)?.data_mut() {
            *v = if bn_scale { rng.range(0.5, 1.5) } else { *v + 0.1 * rng.normal() };
        }
    }
    let mut x = Tensor::<f64>::zeros(&[n, spec.d_in, h, w])?;
    x.data_mut().iter_mut().for_each(|v| *v = rng.normal());
    store.insert("x", x, true);
    let mut target = Tensor::<f64>::zeros(&[n, out.c, out.h, out.w])?;
    target.data_mut().iter_mut().for_each(|v| *v = rng.normal());

    grad_check(&mut store, &mut rng, eps, |store| {
        let mut s = Session::new(store, Mode::Train);
        let xv = s.param("x")?;
        let y = spec.forward(&mut s, "blk", &xv)?;
        let t = s.input(target.clone());
        let loss = s.tape.mse_loss(y, t)?;
        Ok((s.into_tape(), loss))
    })
}

/// The geometries checked for `kind`: identity shortcut, plus a strided
/// projection for the non-recursive kinds.
pub fn standard_specs(kind: BlockKind) -> Result<Vec<BlockSpec>> {
    Ok(if kind.is_unit() {
        vec![BlockSpec::new(kind, 3, 3, 3, 1)?]
    } else if kind.is_bottleneck() {
        vec![BlockSpec::new(kind, 4, 2, 4, 1)?, BlockSpec::new(kind, 3, 2, 4, 2)?]
    } else {
        vec![BlockSpec::new(kind, 3, 3, 3, 1)?, BlockSpec::new(kind, 2, 3, 3, 2)?]
    })
}

/// `(label, report)` for every standard geometry of `kind`.
pub fn check_kind(kind: BlockKind, seed: u64, eps: f64) -> Result<Vec<(String, GradCheckReport)>> {
    standard_specs(kind)?
        .into_iter()
        .map(|s| {
            let label = format!("{} s{} {}->{}", kind.name(), s.stride, s.d_in, s.d_out);
            Ok((label, check_block(&s, seed, eps)?))
        })
        .collect()
}
