use raxn::blocks::{BlockKind, BlockSpec, ConvRole};
use raxn::cost::{latency_bench, RowKind, Shape3, Tracer};
use raxn::data::{synth_dataset, SynthKind};
use raxn::nn::Mode;
use raxn::parallel::with_workers;
use raxn::train::{eval_sr, train_classifier, Flip, History, TrainConfig};
use raxn::zoo::{build_classifier, build_rarnet, ClassifierConfig, Family, RecursiveConfig};
use raxn::{forward, ModelGraph, ParamStore, Rng, Session, Tensor};

fn tiny(classes: usize, hw: usize) -> ModelGraph {
    let mut cfg = ClassifierConfig::new(Family::Ran, 26, classes).unwrap();
    cfg.stage_channels = vec![4, 4, 8, 8];
    cfg.input_hw = (hw, hw);
    build_classifier(&cfg).unwrap()
}

fn gaussians_run(seed: u64, epochs: usize) -> (History, ParamStore<f32>, f64) {
    let m = tiny(2, 16);
    let root = Rng::new(seed);
    let train = synth_dataset(&mut root.split(1), SynthKind::TwoGaussians, 200).unwrap();
    let mut store = m.init_params::<f32>(&mut root.split(3)).unwrap();
    let mut cfg = TrainConfig {
        epochs,
        warmup_epochs: 1,
        batch_size: 20,
        seed,
        ..TrainConfig::default()
    };
    // The classes differ by a pixel-aligned template; shifts and mirrors would blur it.
    cfg.augment.flip = Flip::Off;
    cfg.augment.crop_pad = 0;
    let out = train_classifier(&m, &mut store, &train, None, &cfg, |_| {}).unwrap();
    let acc = out.history.records.last().unwrap().train_acc;
    (out.history, store, acc)
}

fn history_bits(h: &History) -> Vec<u64> {
    h.deterministic_part()
        .into_iter()
        .flat_map(|(e, a, b, c, d)| [e as u64, a.to_bits(), b.to_bits(), c.to_bits(), d.to_bits()])
        .collect()
}

fn bits(store: &ParamStore<f32>) -> Vec<u32> {
    store.iter().flat_map(|(_, t, _)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn two_gaussians_are_fit() {
    let (_, _, acc) = gaussians_run(0, 6);
    assert!(acc > 95.0, "train accuracy {acc}");
}

#[test]
fn same_seed_same_bits_other_seed_differs() {
    let (h1, s1, _) = gaussians_run(5, 2);
    let (h2, s2, _) = gaussians_run(5, 2);
    assert_eq!(history_bits(&h1), history_bits(&h2));
    assert_eq!(bits(&s1), bits(&s2));
    let (_, s3, _) = gaussians_run(6, 2);
    assert_ne!(bits(&s1), bits(&s3));
}

#[test]
fn worker_count_does_not_change_training() {
    let (h1, s1, _) = with_workers(1, || gaussians_run(2, 2));
    let (h8, s8, _) = with_workers(8, || gaussians_run(2, 2));
    assert_eq!(history_bits(&h1), history_bits(&h8));
    assert_eq!(bits(&s1), bits(&s8));
}

#[test]
fn latency_percentiles_are_ordered() {
    let m = tiny(10, 32);
    let store = m.init_params::<f32>(&mut Rng::new(0)).unwrap();
    let l = latency_bench(&m, &store, [3, 32, 32], 1, 7).unwrap();
    assert_eq!(l.reps, 7);
    assert!(l.p50_ms <= l.p95_ms && l.mean_ms > 0.0);
    assert!(latency_bench(&m, &store, [3, 32, 32], 0, 0).is_err());
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f32> {
    let mut t = Tensor::<f32>::zeros(shape).unwrap();
    t.data_mut().iter_mut().for_each(|v| *v = rng.normal() as f32);
    t
}

#[test]
fn zeroed_branches_are_identities() {
    let mut rng = Rng::new(8);
    for kind in BlockKind::ALL {
        let spec = if kind.is_bottleneck() {
            BlockSpec::new(kind, 8, 2, 8, 1).unwrap()
        } else {
            BlockSpec::new(kind, 5, 5, 5, 1).unwrap()
        };
        let mut t = Tracer::default();
        spec.forward(&mut t, "b", &Shape3 { c: spec.d_in, h: 6, w: 7 }).unwrap();
        let mut store = ParamStore::<f32>::from_decls(t.decls(), &mut rng).unwrap();
        let branch: Vec<String> = t
            .rows()
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Conv(role) if role != ConvRole::Projection))
            .map(|r| format!("{}.weight", r.layer))
            .collect();
        assert!(!branch.is_empty());
        store.zero_where(|n| branch.iter().any(|b| b == n));
        let x = random(&mut rng, &[3, spec.d_in, 6, 7]).map(f32::abs);
        let mut s = Session::new(&mut store, Mode::Eval);
        let xv = s.input(x.clone());
        let y = spec.forward(&mut s, "b", &xv).unwrap();
        assert!(s.value(y).max_abs_diff(&x).unwrap() < 1e-6, "{}", kind.name());
    }
}

#[test]
fn zero_weight_rarnet_returns_its_input() {
    let mut rc = RecursiveConfig::new(Family::Rarnet, 2, 3);
    rc.channels = 6;
    let m = build_rarnet(&rc).unwrap();
    let mut store = m.init_params::<f32>(&mut Rng::new(1)).unwrap();
    store.zero_where(|n| n.ends_with(".weight"));
    let x = random(&mut Rng::new(2), &[2, 1, 11, 9]);
    assert_eq!(forward(&m, &mut store, &x, Mode::Eval).unwrap(), x);
}

#[test]
fn fresh_rarnet_matches_bicubic_exactly() {
    // The exit conv starts at zero, so an untrained model is bicubic upsampling.
    let mut rc = RecursiveConfig::new(Family::Rarnet, 1, 2);
    rc.channels = 8;
    let m = build_rarnet(&rc).unwrap();
    let store = m.init_params::<f32>(&mut Rng::new(3)).unwrap();
    let hr = synth_dataset(&mut Rng::new(4), SynthKind::SrEdges, 4).unwrap();
    let e = eval_sr(&m, &store, &hr, 2).unwrap();
    for (p, b) in &e.per_image {
        assert_eq!(p.to_bits(), b.to_bits());
    }
}
