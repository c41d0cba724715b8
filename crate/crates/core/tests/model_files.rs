use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relprop::model_io::{blob_path_for, load_model, save_model};
use relprop::toy::{base_model, random_input, random_network, RandomKind};
use relprop::{Error, Network};

fn param_bits(net: &Network) -> Vec<u64> {
    net.layers().iter().flat_map(|l| l.params()).map(f64::to_bits).collect()
}

#[test]
fn save_load_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let net = base_model(16, 3, true).unwrap();
    save_model(&net, &path).unwrap();
    assert!(blob_path_for(&path).exists());
    let back = load_model(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(param_bits(&back), param_bits(&net));
}

#[test]
fn truncated_blob_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&base_model(8, 0, false).unwrap(), &path).unwrap();
    let blob = blob_path_for(&path);
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    match load_model(&path).unwrap_err() {
        Error::BlobLength { expected, actual } => assert_eq!(expected, actual + 4),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn missing_blob_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&base_model(8, 0, false).unwrap(), &path).unwrap();
    std::fs::remove_file(blob_path_for(&path)).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Io { .. })));
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = random_network(&mut rng, RandomKind::Conv, 4, true).unwrap();
    let x = random_input(&net, &mut rng, -1.0, 1.0);
    let a = net.forward(&x).unwrap();
    let b = net.forward(&x).unwrap();
    for (ta, tb) in a.activations().iter().zip(b.activations()) {
        let ba: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ba, bb);
    }
}

#[test]
fn network_can_be_shared_across_threads() {
    let net = base_model(16, 1, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs: Vec<_> = (0..4).map(|_| random_input(&net, &mut rng, 0.0, 1.0)).collect();
    let serial: Vec<_> = inputs.iter().map(|x| net.predict(x).unwrap()).collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = inputs.iter().map(|x| s.spawn(|| net.predict(x).unwrap())).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn roundtrip_is_identity(seed in 0u64..10_000, conv in proptest::bool::ANY, depth in 2usize..6, bias in proptest::bool::ANY) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = if conv { RandomKind::Conv } else { RandomKind::Dense };
        let net = random_network(&mut rng, kind, depth, bias).unwrap();
        let (json, blob) = relprop::model_io::encode_model(&net, "m.bin").unwrap();
        let back = relprop::model_io::decode_model(&relprop::model_io::parse_manifest(&json).unwrap(), &blob).unwrap();
        prop_assert_eq!(param_bits(&back), param_bits(&net));
        prop_assert_eq!(back, net);
    }
}
