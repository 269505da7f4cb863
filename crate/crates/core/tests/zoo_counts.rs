use raxn::cost::{count_macs, count_params};
use raxn::zoo::{
    build_classifier, build_drrn, build_rarnet, drrn_depth, rarnet_depth, ClassifierConfig, Family, RecursiveConfig,
    DEPTHS,
};

const TABLE_PARAMS: [f64; 5] = [40.9e6, 57.8e6, 82.5e6, 149.2e6, 204.1e6];
const TABLE_MACS: [f64; 5] = [0.66e9, 0.86e9, 1.18e9, 2.29e9, 3.41e9];

#[test]
fn resnet_baselines_near_published_totals() {
    for (i, &d) in DEPTHS.iter().enumerate() {
        let m = build_classifier(&ClassifierConfig::new(Family::Resnet, d, 10).unwrap()).unwrap();
        let p = count_params(&m, true, false).unwrap().total_params as f64;
        let f = count_macs(&m, [3, 32, 32]).unwrap().total_macs as f64;
        println!("resnet{d}: {p} {f} depth={}", m.depth().unwrap());
        assert!((p / TABLE_PARAMS[i] - 1.0).abs() <= 0.05, "resnet{d} params {p}");
        assert!((f / TABLE_MACS[i] - 1.0).abs() <= 0.10, "resnet{d} macs {f}");
    }
}

#[test]
fn ran_strictly_cheaper_than_resnet() {
    for &d in &DEPTHS {
        let r = build_classifier(&ClassifierConfig::new(Family::Resnet, d, 10).unwrap()).unwrap();
        let a = build_classifier(&ClassifierConfig::new(Family::Ran, d, 10).unwrap()).unwrap();
        let (pr, pa) = (
            count_params(&r, true, false).unwrap().total_params,
            count_params(&a, true, false).unwrap().total_params,
        );
        let (mr, ma) = (
            count_macs(&r, [3, 32, 32]).unwrap().total_macs,
            count_macs(&a, [3, 32, 32]).unwrap().total_macs,
        );
        println!("ran{d}: {pa} {ma} depth={}", a.depth().unwrap());
        assert!(pa < pr && ma < mr);
    }
}

#[test]
fn drrn_exact_weight_count() {
    let m = build_drrn(&RecursiveConfig::new(Family::Drrn, 1, 9)).unwrap();
    assert_eq!(count_params(&m, false, false).unwrap().total_params, 1_152 + 2 * 147_456 + 1_152);
    assert_eq!(m.depth().unwrap(), drrn_depth(1, 9));
}

#[test]
fn rarnet_fewer_weights_than_drrn() {
    let d = build_drrn(&RecursiveConfig::new(Family::Drrn, 1, 9)).unwrap();
    let r = build_rarnet(&RecursiveConfig::new(Family::Rarnet, 1, 9)).unwrap();
    let pd = count_params(&d, false, false).unwrap().total_params as f64;
    let pr = count_params(&r, false, false).unwrap().total_params as f64;
    assert_eq!(pr, 100_608.0);
    assert!((pd - pr) / pd >= 0.282);
    assert_eq!(r.depth().unwrap(), rarnet_depth(1, 9));
}

#[test]
fn tied_units_constant_in_u() {
    let a = build_rarnet(&RecursiveConfig::new(Family::Rarnet, 2, 3)).unwrap();
    let b = build_rarnet(&RecursiveConfig::new(Family::Rarnet, 2, 7)).unwrap();
    assert_eq!(
        count_params(&a, true, true).unwrap().total_params,
        count_params(&b, true, true).unwrap().total_params
    );
}
