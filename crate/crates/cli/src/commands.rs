use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use raxn::check::check_kind;
use raxn::config::{config_from_name, RunConfig};
use raxn::cost::{analyze, compare_report, comparison_markdown, human_count, latency_bench, CostReport, CountOptions};
use raxn::data::{load_checkpoint, mod_crop, save_checkpoint, save_pnm};
use raxn::nn::Mode;
use raxn::train::{degrade, eval_sr, evaluate, luma, train_classifier, train_sr, ChannelStats, EpochRecord};
use raxn::zoo::{ModelGraph, Task};
use raxn::{forward, BlockKind, ParamStore};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::resolve::{self, Resolved};
use crate::report;

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Inspect(a) => inspect(a),
        Command::Count(a) => count(a),
        Command::Compare(a) => compare(a),
        Command::Bench(a) => bench(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::SrTrain(a) => sr_train(a),
        Command::SrEval(a) => sr_eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ReproReport(a) => report::run(a),
    }
}

pub fn write_out(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path.display(), e))
}

pub fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// `# config: {...}` header line for CSV artifacts.
pub fn config_comment<T: Serialize>(cfg: &T) -> String {
    format!("# config: {}\n", serde_json::to_string(cfg).expect("serializable"))
}

fn resolved_model(a: &ModelArgs) -> CliResult<(Resolved, ModelGraph)> {
    let r = resolve::model(a)?;
    resolve::finish(&r)?;
    let m = r.cfg.build()?;
    Ok((r, m))
}

fn print_rows(report: &CostReport) {
    println!("{:<40} {:<10} {:>12} {:>12} {:>14}", "layer", "kind", "out", "params", "macs");
    for r in &report.rows {
        let shape: Vec<String> = r.out_shape.iter().map(|d| d.to_string()).collect();
        println!(
            "{:<40} {:<10} {:>12} {:>12} {:>14}",
            r.layer,
            r.kind,
            shape.join("x"),
            r.params,
            r.macs
        );
    }
}

fn task_line(m: &ModelGraph) -> String {
    match m.task {
        Task::Classification { classes } => format!("classification, {classes} classes"),
        Task::SuperResolution { scale } => format!("super-resolution x{scale}"),
    }
}

fn inspect(a: InspectArgs) -> CliResult<()> {
    let (r, m) = resolved_model(&a.model)?;
    let report = analyze(&m, m.input_hw, CountOptions::default())?;
    let depth = m.depth()?;
    println!("model  {} ({})", m.name, task_line(&m));
    println!("input  {}x{}x{}", m.in_channels, m.input_hw.0, m.input_hw.1);
    println!("depth  {depth}");
    print_rows(&report);
    println!(
        "total  {} params ({}), {} MACs ({})",
        report.total_params,
        human_count(report.total_params),
        report.total_macs,
        human_count(report.total_macs)
    );
    if let Some(out) = &a.out {
        write_out(out, &to_json(&json!({ "config": r.cfg, "depth": depth, "report": report })))?;
    }
    Ok(())
}

fn count(a: CountArgs) -> CliResult<()> {
    let (r, m) = resolved_model(&a.model)?;
    let opts = if a.weights_only {
        CountOptions::weights_only()
    } else {
        CountOptions {
            include_bn: !a.no_bn,
            include_bias: a.include_bias,
        }
    };
    let report = analyze(&m, m.input_hw, opts)?;
    print_rows(&report);
    println!("total  {} params, {} MACs", report.total_params, report.total_macs);
    if let Some(out) = &a.out {
        let text = if extension(out) == "json" {
            to_json(&json!({ "config": r.cfg, "report": report }))
        } else {
            config_comment(&r.cfg) + &report.to_csv()
        };
        write_out(out, &text)?;
    }
    Ok(())
}

fn named(name: &str, classes: usize) -> CliResult<(RunConfig, ModelGraph)> {
    let mut cfg = config_from_name(name, classes)?;
    cfg.seed = resolve::env_seed()?.unwrap_or(0);
    let m = cfg.build()?;
    Ok((cfg, m))
}

fn bench_model(m: &ModelGraph, seed: u64, warmup: usize, reps: usize) -> CliResult<raxn::cost::LatencyStats> {
    let store = m.init_params::<f32>(&mut raxn::Rng::new(seed))?;
    Ok(latency_bench(m, &store, [m.in_channels, m.input_hw.0, m.input_hw.1], warmup, reps)?)
}

fn compare(a: CompareArgs) -> CliResult<()> {
    let (bc, bm) = named(&a.base, a.classes)?;
    let (nc, nm) = named(&a.new, a.classes)?;
    let base = analyze(&bm, bm.input_hw, CountOptions::default())?;
    let new = compare_report(&base, &analyze(&nm, nm.input_hw, CountOptions::default())?);
    let latency = if a.latency_reps > 0 {
        Some((
            bench_model(&bm, bc.seed, 1, a.latency_reps)?,
            bench_model(&nm, nc.seed, 1, a.latency_reps)?,
        ))
    } else {
        None
    };
    let md = comparison_markdown(&base, &new, latency);
    print!("{md}");
    let config = json!({ "base": bc, "new": nc, "classes": a.classes });
    if let Some(out) = &a.out {
        let c = new.comparison.as_ref().expect("compare_report sets a comparison");
        let text = match extension(out) {
            "json" => to_json(&json!({ "config": config, "base": base, "new": new, "latency": latency })),
            "csv" => {
                let mut s = config_comment(&config);
                s.push_str("model,params,macs,param_reduction_pct,mac_reduction_pct\n");
                let _ = writeln!(s, "{},{},{},,", base.model, base.total_params, base.total_macs);
                let _ = writeln!(
                    s,
                    "{},{},{},{:?},{:?}",
                    new.model, new.total_params, new.total_macs, c.param_reduction_pct, c.mac_reduction_pct
                );
                s
            }
            _ => format!("{md}\n```json\n{}```\n", to_json(&config)),
        };
        write_out(out, &text)?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let (r, m) = resolved_model(&a.model)?;
    let stats = bench_model(&m, r.cfg.seed, a.warmup, a.reps)?;
    println!(
        "{}: mean {:.3} ms, p50 {:.3} ms, p95 {:.3} ms over {} reps",
        m.name, stats.mean_ms, stats.p50_ms, stats.p95_ms, stats.reps
    );
    if let Some(out) = &a.out {
        write_out(out, &to_json(&json!({ "config": r.cfg, "model": m.name, "latency": stats })))?;
    }
    Ok(())
}

fn require(m: &ModelGraph, classifier: bool) -> CliResult<()> {
    let is_classifier = matches!(m.task, Task::Classification { .. });
    if is_classifier != classifier {
        let want = if classifier { "a classifier family (resnet, ran)" } else { "a recursive family (drrn, rarnet)" };
        return Err(CliError::Config(format!("key `family`: this command needs {want}")));
    }
    Ok(())
}

fn numeric(e: raxn::Error) -> CliError {
    match e {
        raxn::Error::Diverged { .. } => CliError::Numeric(e.to_string()),
        other => other.into(),
    }
}

fn log_epoch(r: &EpochRecord) {
    println!(
        "epoch {:>3}  lr {:.5}  loss {:.4}  train {:5.1}%  val {:5.1}  ({:.1}s)",
        r.epoch, r.lr, r.train_loss, r.train_acc, r.val_metric, r.seconds
    );
}

fn load_into(m: &ModelGraph, cfg: &RunConfig, path: &Path) -> CliResult<ParamStore<f32>> {
    let (_, _, mut init) = resolve::streams(cfg);
    let mut store = m.init_params::<f32>(&mut init)?;
    load_checkpoint(path, &mut store).map_err(CliError::Data)?;
    Ok(store)
}

fn train(a: TrainArgs) -> CliResult<()> {
    let mut r = resolve::model(&a.model)?;
    resolve::data(&mut r, &a.data, "oriented-bars");
    resolve::train(&mut r, &a.train)?;
    resolve::finish(&r)?;
    let cfg = &r.cfg;
    let m = cfg.build()?;
    require(&m, true)?;
    let (train, val) = resolve::datasets(cfg)?;
    let (_, _, mut init) = resolve::streams(cfg);
    let mut store = m.init_params::<f32>(&mut init)?;
    println!("training {} on {} images for {} epochs", m.name, train.len(), cfg.train.epochs);
    let t0 = Instant::now();
    let out = train_classifier(&m, &mut store, &train, val.as_ref(), &cfg.train, log_epoch).map_err(numeric)?;
    let dir = &a.out;
    write_out(&dir.join("config.json"), &to_json(cfg))?;
    write_out(&dir.join("history.csv"), &(config_comment(cfg) + &out.history.to_csv()))?;
    save_checkpoint(&store, dir.join("model.ckpt")).map_err(CliError::Data)?;
    let last = out.history.records.last();
    let best = out.history.records.iter().map(|r| r.val_metric).fold(f64::NAN, f64::max);
    write_out(
        &dir.join("summary.json"),
        &to_json(&json!({
            "config": cfg,
            "model": m.name,
            "final": last,
            "best_val_accuracy": best,
            "channel_stats": out.stats,
            "seconds": t0.elapsed().as_secs_f64(),
        })),
    )?;
    println!("best val {best:.1}%; artifacts in {}", dir.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let mut r = resolve::model(&a.model)?;
    resolve::data(&mut r, &a.data, "oriented-bars");
    resolve::finish(&r)?;
    let cfg = &r.cfg;
    let m = cfg.build()?;
    require(&m, true)?;
    let store = load_into(&m, cfg, &a.checkpoint)?;
    let (train, val) = resolve::datasets(cfg)?;
    // Same normalization the training run derived from its training split.
    let stats = if cfg.train.augment.normalize {
        ChannelStats::of(&train)?
    } else {
        ChannelStats::identity(train.image_shape()[0])
    };
    let set = val.unwrap_or(train);
    let acc = evaluate(&m, &store, &set, &stats, cfg.train.batch_size)?;
    println!("{}: {acc:.2}% top-1 on {} images", m.name, set.len());
    if let Some(out) = &a.out {
        write_out(
            out,
            &to_json(&json!({ "config": cfg, "model": m.name, "images": set.len(), "accuracy": acc })),
        )?;
    }
    Ok(())
}

fn sr_train(a: SrTrainArgs) -> CliResult<()> {
    let mut r = resolve::model(&a.model)?;
    resolve::data(&mut r, &a.data, "sr-edges");
    resolve::sr(&mut r, &a.sr);
    resolve::finish(&r)?;
    let cfg = &r.cfg;
    let m = cfg.build()?;
    require(&m, false)?;
    let (train, val) = resolve::datasets(cfg)?;
    let (_, _, mut init) = resolve::streams(cfg);
    let mut store = m.init_params::<f32>(&mut init)?;
    println!("training {} on {} images for {} steps", m.name, train.len(), cfg.sr.steps);
    let t0 = Instant::now();
    let history = train_sr(&m, &mut store, &train, &cfg.sr, a.sr.log_every, |r| {
        println!("step {:>5}  lr {:.5}  loss {:.6}  ({:.1}s)", r.epoch, r.lr, r.train_loss, r.seconds)
    })
    .map_err(numeric)?;
    let dir = &a.out;
    write_out(&dir.join("config.json"), &to_json(cfg))?;
    write_out(&dir.join("history.csv"), &(config_comment(cfg) + &history.to_csv()))?;
    save_checkpoint(&store, dir.join("model.ckpt")).map_err(CliError::Data)?;
    let eval = val.as_ref().map(|v| eval_sr(&m, &store, v, cfg.scale)).transpose()?;
    if let Some(e) = &eval {
        println!(
            "held-out: {:.3} dB vs bicubic {:.3} dB ({:+.3} dB)",
            e.mean_psnr,
            e.mean_bicubic_psnr,
            e.mean_psnr - e.mean_bicubic_psnr
        );
    }
    write_out(
        &dir.join("summary.json"),
        &to_json(&json!({
            "config": cfg,
            "model": m.name,
            "final": history.records.last(),
            "eval": eval,
            "seconds": t0.elapsed().as_secs_f64(),
        })),
    )?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn sr_eval(a: SrEvalArgs) -> CliResult<()> {
    let mut r = resolve::model(&a.model)?;
    resolve::data(&mut r, &a.data, "sr-edges");
    resolve::finish(&r)?;
    let cfg = &r.cfg;
    let m = cfg.build()?;
    require(&m, false)?;
    let store = load_into(&m, cfg, &a.checkpoint)?;
    let set = resolve::eval_set(cfg)?;
    let e = eval_sr(&m, &store, &set, cfg.scale)?;
    for (i, (p, b)) in e.per_image.iter().enumerate() {
        println!("image {i:>3}: {p:.3} dB (bicubic {b:.3} dB)");
    }
    println!(
        "{} x{}: mean {:.3} dB vs bicubic {:.3} dB ({:+.3} dB) on {} images",
        m.name,
        cfg.scale,
        e.mean_psnr,
        e.mean_bicubic_psnr,
        e.mean_psnr - e.mean_bicubic_psnr,
        set.len()
    );
    if let Some(dir) = &a.save_images {
        fs::create_dir_all(dir).map_err(|err| CliError::io(dir.display(), err))?;
        let mut store = store.clone();
        for i in 0..set.len() {
            let hr = luma(&mod_crop(&set.image(i), cfg.scale)?)?;
            let up = degrade(&hr, cfg.scale)?;
            let shape = up.shape().to_vec();
            let x = up.clone().reshape(&[1, shape[0], shape[1], shape[2]])?;
            let y = forward(&m, &mut store, &x, Mode::Eval)?
                .reshape(&shape)?
                .map(|v| v.clamp(0.0, 1.0));
            for (tag, img) in [("hr", &hr), ("bicubic", &up), ("sr", &y)] {
                save_pnm(img, dir.join(format!("{i:03}_{tag}.pgm"))).map_err(CliError::Data)?;
            }
        }
    }
    if let Some(out) = &a.out {
        write_out(out, &to_json(&json!({ "config": cfg, "model": m.name, "eval": e })))?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let kinds = match &a.block {
        Some(b) => vec![BlockKind::parse(b).map_err(|e| CliError::Usage(e.to_string()))?],
        None => BlockKind::ALL.to_vec(),
    };
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for kind in kinds {
        for (label, r) in check_kind(kind, a.seed, a.eps)? {
            let ok = r.checked > 0 && r.max_rel_error < a.tol;
            println!(
                "{} {label}: max relative error {:.3e} over {} elements (worst {})",
                if ok { "ok  " } else { "FAIL" },
                r.max_rel_error,
                r.checked,
                r.worst
            );
            if !ok {
                failed.push(label.clone());
            }
            results.push(json!({
                "check": label,
                "max_rel_error": r.max_rel_error,
                "checked": r.checked,
                "worst": r.worst,
                "passed": ok,
            }));
        }
    }
    if let Some(out) = &a.out {
        let config = json!({ "block": a.block, "seed": a.seed, "eps": a.eps, "tol": a.tol });
        write_out(out, &to_json(&json!({ "config": config, "results": results })))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check above {:e} for {}",
            a.tol,
            failed.join(", ")
        )))
    }
}
