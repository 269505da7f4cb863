use std::collections::HashSet;

use raxn::cost::Tracer;
use raxn::data::{
    apply_checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, load_cifar10_binary, load_pnm,
    load_pnm_dir, save_checkpoint, save_pnm, synth_dataset, SynthKind,
};
use raxn::zoo::{build_drrn, Family, RecursiveConfig};
use raxn::{Error, Rng, Tensor};

#[test]
fn cifar_file_round_trip() {
    let mut bytes = Vec::new();
    let mut want = Vec::new();
    for i in 0..3u8 {
        bytes.push(i * 3);
        let px: Vec<u8> = (0..3072).map(|j| (j as u8).wrapping_mul(i + 1)).collect();
        want.push(px.clone());
        bytes.extend(px);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    std::fs::write(&path, &bytes).unwrap();
    let set = load_cifar10_binary(&path).unwrap();
    assert_eq!(set.labels, vec![0, 3, 6]);
    assert_eq!(set.image_shape(), [3, 32, 32]);
    for (n, px) in want.iter().enumerate() {
        let got: Vec<u8> = set.image(n).data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(&got, px);
    }

    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_cifar10_binary(&path), Err(Error::Format { .. })));
}

#[test]
fn pnm_files_and_directories() {
    let dir = tempfile::tempdir().unwrap();
    let set = synth_dataset(&mut Rng::new(4), SynthKind::OrientedBars, 3).unwrap();
    for i in 0..3 {
        // 8-bit quantization first so the round trip is exact.
        let img = set.image(i).map(|v| (v * 255.0).round() / 255.0);
        let p = dir.path().join(format!("{i}.ppm"));
        save_pnm(&img, &p).unwrap();
        assert_eq!(load_pnm(&p).unwrap(), img);
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let loaded = load_pnm_dir(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);

    let gray = Tensor::<f32>::zeros(&[1, 32, 32]).unwrap();
    save_pnm(&gray, dir.path().join("3.pgm")).unwrap();
    assert!(matches!(load_pnm_dir(dir.path()), Err(Error::Format { .. })));
}

fn drrn() -> raxn::ModelGraph {
    build_drrn(&RecursiveConfig::new(Family::Drrn, 1, 9)).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let m = drrn();
    let store = m.init_params::<f32>(&mut Rng::new(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("drrn.ckpt");
    save_checkpoint(&store, &path).unwrap();
    let mut fresh = m.init_params::<f32>(&mut Rng::new(10)).unwrap();
    load_checkpoint(&path, &mut fresh).unwrap();
    for ((na, a, _), (nb, b, _)) in store.iter().zip(fresh.iter()) {
        assert_eq!(na, nb);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn drrn_checkpoint_holds_each_tied_tensor_once() {
    let m = drrn();
    let tracer = Tracer::trace(&m, m.input_hw).unwrap();
    let declared: HashSet<String> = tracer.decls().iter().map(|d| d.name.clone()).collect();
    let store = m.init_params::<f32>(&mut Rng::new(1)).unwrap();
    let tensors = decode_checkpoint(&encode_checkpoint(&store), "mem".as_ref()).unwrap();
    let names: Vec<&str> = tensors.iter().map(|(n, _)| n.as_str()).collect();
    let unique: HashSet<String> = names.iter().map(|s| s.to_string()).collect();
    assert_eq!(unique.len(), names.len(), "no duplicates");
    assert_eq!(unique, declared);
    // Entry conv, the two shared unit convs, exit conv: nine recursions, one copy.
    let convs: Vec<&str> = tensors.iter().filter(|(_, t)| t.rank() == 4).map(|(n, _)| n.as_str()).collect();
    assert_eq!(convs.len(), 4, "{convs:?}");
    let weights: usize = tensors.iter().filter(|(_, t)| t.rank() == 4).map(|(_, t)| t.len()).sum();
    assert_eq!(weights, 297_216);
}

#[test]
fn renamed_layer_is_reported_by_name() {
    let m = drrn();
    let mut store = m.init_params::<f32>(&mut Rng::new(1)).unwrap();
    let mut tensors = decode_checkpoint(&encode_checkpoint(&store), "mem".as_ref()).unwrap();
    let old = tensors[0].0.clone();
    tensors[0].0 = "renamed.weight".into();
    match apply_checkpoint(&mut store, tensors) {
        Err(Error::CheckpointKeys { missing, unexpected }) => {
            assert_eq!(missing, vec![old]);
            assert_eq!(unexpected, vec!["renamed.weight".to_string()]);
        }
        other => panic!("expected a key error, got {other:?}"),
    }
}

#[test]
fn wrong_shape_is_rejected() {
    let m = drrn();
    let mut store = m.init_params::<f32>(&mut Rng::new(1)).unwrap();
    let mut tensors = decode_checkpoint(&encode_checkpoint(&store), "mem".as_ref()).unwrap();
    tensors[0].1 = Tensor::zeros(&[1, 1, 1, 1]).unwrap();
    assert!(apply_checkpoint(&mut store, tensors).is_err());
}
