//! Turns a config file plus flags into one effective `RunConfig`.

use raxn::config::{config_from_name, RunConfig};
use raxn::data::{
    load_cifar10_binary, load_pnm_dir, synth_dataset, synth_dataset_sized, LabeledImageSet, SynthKind,
};
use raxn::train::Flip;
use raxn::zoo::Family;
use raxn::Rng;
use serde_json::Value;

use crate::args::{DataArgs, ModelArgs, SrOverrides, TrainOverrides};
use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "RAXN_SEED";

/// Effective config plus the raw file contents (to tell explicit keys from
/// defaults).
pub struct Resolved {
    pub cfg: RunConfig,
    raw: Value,
}

impl Resolved {
    fn file_sets(&self, pointer: &str) -> bool {
        self.raw.pointer(pointer).is_some()
    }
}

pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn model(args: &ModelArgs) -> CliResult<Resolved> {
    let (mut cfg, raw) = match (&args.config, &args.model) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --config or --model, not both".into())),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", path.display()));
            let cfg: RunConfig = serde_json::from_str(&text).map_err(bad)?;
            (cfg, serde_json::from_str(&text).map_err(bad)?)
        }
        (None, Some(name)) => (config_from_name(name, args.classes.unwrap_or(10))?, Value::Null),
        (None, None) => match &args.family {
            Some(f) => (RunConfig::new(Family::parse(f)?), Value::Null),
            None => return Err(CliError::Usage("choose a model with --config, --model or --family".into())),
        },
    };
    if let Some(f) = &args.family {
        cfg.family = Family::parse(f)?;
    }
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = args.$field.clone() { $target = v; })*
        };
    }
    set!(widen_k => cfg.widen_k, classes => cfg.classes, blocks => cfg.blocks, units => cfg.units,
         channels => cfg.channels, scale => cfg.scale, batch_norm => cfg.batch_norm);
    if args.depth.is_some() {
        cfg.depth = args.depth;
    }
    if args.stage_channels.is_some() {
        cfg.stage_channels = args.stage_channels.clone();
    }
    if args.input_size.is_some() {
        cfg.input_size = args.input_size;
    }
    let file_seed = raw.get("seed").is_some();
    cfg.seed = match (args.seed, file_seed) {
        (Some(s), _) => s,
        (None, true) => cfg.seed,
        (None, false) => env_seed()?.unwrap_or(0),
    };
    cfg.train.seed = cfg.seed;
    cfg.sr.seed = cfg.seed;
    Ok(Resolved { cfg, raw })
}

/// `default_synth` applies when neither the file nor the flags pick a kind.
pub fn data(r: &mut Resolved, d: &DataArgs, default_synth: &str) {
    if d.synth.is_none() && !r.file_sets("/data/synth") {
        r.cfg.data.synth = default_synth.into();
    }
    let c = &mut r.cfg.data;
    if let Some(v) = &d.source {
        c.source = v.clone();
    }
    if let Some(v) = &d.synth {
        c.synth = v.clone();
    }
    if let Some(v) = d.n_train {
        c.n_train = v;
    }
    if let Some(v) = d.n_val {
        c.n_val = v;
    }
    if let Some(v) = d.image_size {
        c.image_size = v;
    }
    if d.train_path.is_some() {
        c.train_path = d.train_path.clone();
    }
    if d.val_path.is_some() {
        c.val_path = d.val_path.clone();
    }
}

pub fn train(r: &mut Resolved, t: &TrainOverrides) -> CliResult<()> {
    let explicit_flip = t.flip.is_some() || r.file_sets("/train/augment/flip");
    let c = &mut r.cfg.train;
    if let Some(v) = t.epochs {
        c.epochs = v;
    }
    if let Some(v) = t.warmup_epochs {
        c.warmup_epochs = v;
    }
    if let Some(v) = t.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = t.lr {
        c.peak_lr = v;
    }
    if let Some(v) = t.momentum {
        c.momentum = v;
    }
    if let Some(v) = t.weight_decay {
        c.weight_decay = v;
    }
    if let Some(v) = t.crop_pad {
        c.augment.crop_pad = v;
    }
    if let Some(v) = &t.flip {
        c.augment.flip = serde_json::from_value(Value::String(v.clone()))
            .map_err(|_| CliError::Usage(format!("--flip must be off, random or always, got `{v}`")))?;
    }
    // Mirroring an oriented bar turns it into a different class.
    if !explicit_flip && r.cfg.data.source == "synthetic" && r.cfg.data.synth == "oriented-bars" {
        r.cfg.train.augment.flip = Flip::Off;
    }
    Ok(())
}

pub fn sr(r: &mut Resolved, s: &SrOverrides) {
    let c = &mut r.cfg.sr;
    if let Some(v) = s.steps {
        c.steps = v;
    }
    if let Some(v) = s.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = s.patch {
        c.patch = v;
    }
    if let Some(v) = s.lr {
        c.lr = v;
    }
    if let Some(v) = s.clip {
        c.clip = v;
    }
    if let Some(v) = s.lr_step {
        c.lr_step = v;
    }
    c.scale = r.cfg.scale;
}

/// Validates the merged config; errors here are configuration errors.
pub fn finish(r: &Resolved) -> CliResult<()> {
    r.cfg.validate()?;
    Ok(())
}

/// Generator streams: 1 train, 2 validation, 3 initialization.
pub fn streams(cfg: &RunConfig) -> (Rng, Rng, Rng) {
    let root = Rng::new(cfg.seed);
    (root.split(1), root.split(2), root.split(3))
}

fn synth(cfg: &RunConfig, rng: &mut Rng, n: usize) -> CliResult<LabeledImageSet> {
    let kind = SynthKind::parse(&cfg.data.synth)?;
    let s = cfg.data.image_size;
    let set = if s == 0 {
        synth_dataset(rng, kind, n)?
    } else {
        synth_dataset_sized(rng, kind, n, kind.default_shape()[0], s, s)?
    };
    Ok(set)
}

fn path<'a>(p: &'a Option<String>, key: &str) -> CliResult<&'a str> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("key `data.{key}` is required for this data source")))
}

/// `(train, validation)`. Validation is absent for file sources without
/// `val_path`.
pub fn datasets(cfg: &RunConfig) -> CliResult<(LabeledImageSet, Option<LabeledImageSet>)> {
    let (mut tr, mut va, _) = streams(cfg);
    let d = &cfg.data;
    let data_err = |e| CliError::Data(e);
    match d.source.as_str() {
        "synthetic" => Ok((synth(cfg, &mut tr, d.n_train)?, Some(synth(cfg, &mut va, d.n_val)?))),
        "cifar10" => {
            let train = load_cifar10_binary(path(&d.train_path, "train_path")?).map_err(data_err)?;
            let val = d.val_path.as_ref().map(load_cifar10_binary).transpose().map_err(data_err)?;
            Ok((train, val))
        }
        "pnm" => {
            let train = load_pnm_dir(path(&d.train_path, "train_path")?).map_err(data_err)?;
            let val = d.val_path.as_ref().map(load_pnm_dir).transpose().map_err(data_err)?;
            Ok((train, val))
        }
        other => Err(CliError::Config(format!(
            "key `data.source`: unknown source `{other}` (synthetic, cifar10, pnm)"
        ))),
    }
}

/// Held-out images for evaluation: the validation split, or the training
/// split when no validation data is configured.
pub fn eval_set(cfg: &RunConfig) -> CliResult<LabeledImageSet> {
    let (train, val) = datasets(cfg)?;
    Ok(val.unwrap_or(train))
}
