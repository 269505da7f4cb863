//! Finite-difference harness shared by the gradcheck and acceptance targets.

use raxn::blocks::{recursive_block, BlockKind, BlockSpec, Builder, ConvRole, RecursiveSpec};
use raxn::cost::{Shape3, Tracer};
use raxn::nn::{grad_check, ConvSpec, GradCheckReport, Mode};
use raxn::zoo::{build_rarnet, Family, RecursiveConfig};
use raxn::{ParamStore, Result, Rng, Session, Tensor};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-6;
// Chosen so that no relu input sits within ε of its kink.
const SEED: u64 = 3;

pub trait Net {
    fn input(&self) -> [usize; 4];
    fn run<B: Builder>(&self, b: &mut B, x: &B::V) -> Result<B::V>;
    /// `Some(classes)` for a cross-entropy head, else MSE on the output.
    fn classes(&self) -> Option<usize> {
        None
    }
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut Rng) {
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in names {
        if !store.is_trainable(&n) {
            continue;
        }
        let bn_scale = n.ends_with(".weight") && store.get(&n).unwrap().rank() == 1;
        let t = store.get_mut(&n).unwrap();
        for v in t.data_mut() {
            *v = if bn_scale { rng.range(0.5, 1.5) } else { *v + 0.1 * rng.normal() };
        }
    }
}

pub fn check<N: Net>(net: &N) -> GradCheckReport {
    let [n, c, h, w] = net.input();
    let mut tracer = Tracer::default();
    let out = net.run(&mut tracer, &Shape3 { c, h, w }).unwrap();
    let mut rng = Rng::new(SEED);
    let mut store = ParamStore::<f64>::from_decls(tracer.decls(), &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let mut x = Tensor::<f64>::zeros(&[n, c, h, w]).unwrap();
    x.data_mut().iter_mut().for_each(|v| *v = rng.normal());
    store.insert("x", x, true);
    let mut target = Tensor::<f64>::zeros(&[n, out.c, out.h, out.w]).unwrap();
    target.data_mut().iter_mut().for_each(|v| *v = rng.normal());
    let labels: Vec<usize> = (0..n).map(|i| i % net.classes().unwrap_or(1)).collect();

    grad_check(&mut store, &mut rng, EPS, |store| {
        let mut s = Session::new(store, Mode::Train);
        let xv = s.param("x")?;
        let y = net.run(&mut s, &xv)?;
        let loss = match net.classes() {
            Some(_) => s.tape.softmax_cross_entropy(y, &labels)?,
            None => {
                let t = s.input(target.clone());
                s.tape.mse_loss(y, t)?
            }
        };
        Ok((s.into_tape(), loss))
    })
    .unwrap()
}

pub type Cases = Vec<(String, GradCheckReport)>;

struct Conv {
    spec: ConvSpec,
    role: ConvRole,
    relu: bool,
    bn: bool,
    residual: bool,
}

impl Net for Conv {
    fn input(&self) -> [usize; 4] {
        [2, self.spec.d_in, 6, 6]
    }
    fn run<B: Builder>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let mut y = b.conv("c", x, &self.spec, self.role)?;
        if self.bn {
            y = b.batch_norm("c_bn", &y)?;
        }
        if self.residual {
            y = b.add(&y, x)?;
        }
        if self.relu {
            y = b.relu(&y)?;
        }
        Ok(y)
    }
}

fn conv(spec: ConvSpec, role: ConvRole) -> Conv {
    Conv {
        spec,
        role,
        relu: false,
        bn: false,
        residual: false,
    }
}

pub fn conv_cases() -> Cases {
    let plain = [
        ("conv2d+bias", ConvSpec::square(2, 3, 3, 1).with_bias(), ConvRole::Spatial),
        ("conv2d/s2", ConvSpec::square(2, 3, 3, 2), ConvRole::Spatial),
        ("conv1x1/s2", ConvSpec::pointwise(3, 2, 2), ConvRole::Projection),
        ("conv1d_h", ConvSpec::axial_h(2, 3, 3, 1), ConvRole::AxialH),
        ("conv1d_w", ConvSpec::axial_w(2, 3, 3, 1), ConvRole::AxialW),
        ("conv1d_h/s2", ConvSpec::axial_h(2, 2, 5, 2), ConvRole::AxialH),
        ("conv1d_w/s2", ConvSpec::axial_w(2, 2, 5, 2), ConvRole::AxialW),
    ];
    let mut out: Cases = plain.into_iter().map(|(l, s, r)| (l.to_string(), check(&conv(s, r)))).collect();
    let mut c = conv(ConvSpec::square(3, 3, 3, 1), ConvRole::Spatial);
    c.relu = true;
    out.push(("relu".into(), check(&c)));
    c.bn = true;
    out.push(("batch_norm".into(), check(&c)));
    c.residual = true;
    out.push(("add".into(), check(&c)));
    out
}

struct Head;

impl Net for Head {
    fn input(&self) -> [usize; 4] {
        [4, 3, 4, 4]
    }
    fn classes(&self) -> Option<usize> {
        Some(3)
    }
    fn run<B: Builder>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let p = b.global_avg_pool(x)?;
        b.linear("fc", &p, 3, 3)
    }
}

pub fn head_cases() -> Cases {
    vec![("gap+linear+ce".into(), check(&Head))]
}

struct Block(BlockSpec);

impl Net for Block {
    fn input(&self) -> [usize; 4] {
        [2, self.0.d_in, 4, 4]
    }
    fn run<B: Builder>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        self.0.forward(b, "blk", x)
    }
}

pub fn block_cases() -> Cases {
    let mut out = Vec::new();
    for kind in BlockKind::ALL {
        let specs = if kind.is_unit() {
            vec![BlockSpec::new(kind, 3, 3, 3, 1).unwrap()]
        } else if kind.is_bottleneck() {
            vec![
                BlockSpec::new(kind, 4, 2, 4, 1).unwrap(),
                BlockSpec::new(kind, 3, 2, 4, 2).unwrap(),
            ]
        } else {
            vec![
                BlockSpec::new(kind, 3, 3, 3, 1).unwrap(),
                BlockSpec::new(kind, 2, 3, 3, 2).unwrap(),
            ]
        };
        for s in specs {
            let label = format!("{} s{} {}->{}", kind.name(), s.stride, s.d_in, s.d_out);
            out.push((label, check(&Block(s))));
        }
    }
    out
}

struct Recursive(RecursiveSpec);

impl Net for Recursive {
    fn input(&self) -> [usize; 4] {
        [2, self.0.d_in, 5, 5]
    }
    fn run<B: Builder>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        recursive_block(b, "rb", x, &self.0)
    }
}

struct Model(raxn::ModelGraph);

impl Net for Model {
    fn input(&self) -> [usize; 4] {
        [2, self.0.in_channels, 6, 6]
    }
    fn run<B: Builder>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        self.0.forward(b, x)
    }
}

pub fn recursive_cases() -> Cases {
    let mut out = Vec::new();
    for kind in [BlockKind::DrrnUnit, BlockKind::RarnetUnit] {
        for entry_preact in [false, true] {
            let spec = RecursiveSpec {
                kind,
                d_in: 2,
                channels: 3,
                units: 3,
                kernel: 3,
                batch_norm: true,
                entry_preact,
            };
            out.push((format!("tied {} preact={entry_preact}", kind.name()), check(&Recursive(spec))));
        }
    }
    let mut cfg = RecursiveConfig::new(Family::Rarnet, 2, 2);
    cfg.channels = 3;
    cfg.batch_norm = true;
    out.push(("rarnet b2 u2".into(), check(&Model(build_rarnet(&cfg).unwrap()))));
    out
}

/// Prints each case and returns the labels that failed.
pub fn failures(cases: &Cases) -> Vec<String> {
    let mut bad = Vec::new();
    for (label, r) in cases {
        println!(
            "  {label}: max rel error {:.2e} at {} {:?} ({} checked)",
            r.max_rel_error, r.worst, r.worst_values, r.checked
        );
        if r.checked == 0 || !(r.max_rel_error < TOL) {
            bad.push(label.clone());
        }
    }
    bad
}
