mod common;

use bsr::format::*;
use bsr_core::cost::model_size;
use bsr_core::*;
use common::{random_image, random_model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn round_trip_is_byte_and_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let m = random_model(seed);
        let path = dir.path().join(format!("m{seed}.bsrn"));
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(encode(&back).unwrap(), std::fs::read(&path).unwrap());
        let x = random_image(7, 6, &mut rng);
        assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
    }
}

#[test]
fn file_size_is_payload_plus_overhead() {
    for seed in 0..10 {
        let m = random_model(seed);
        let size = model_size(&m);
        assert_eq!(encode(&m).unwrap().len() as u64, size.binary_model_bytes + overhead_bytes(&m) as u64);
    }
}

#[test]
fn reference_model_file_tracks_binary_size() {
    let m = SrModel::build(SrModelConfig::resnet(4, 16), 0).unwrap();
    let bytes = encode(&m).unwrap().len() as u64;
    let size = model_size(&m);
    assert_eq!(bytes, size.binary_model_bytes + overhead_bytes(&m) as u64);
    assert!((bytes as f64 - size.binary_model_bytes as f64) / (size.binary_model_bytes as f64) < 1e-3);
}

#[test]
fn corruptions_map_to_distinct_errors() {
    let m = random_model(3);
    let good = encode(&m).unwrap();

    let mut magic = good.clone();
    magic[0] = b'X';
    let mut version = good.clone();
    version[4] = 9;
    let truncated = good[..good.len() - 3].to_vec();
    let mut trailing = good.clone();
    trailing.push(0);
    let mut tag = good.clone();
    tag[HEADER_BYTES] = 200;

    let errors = [
        decode(&magic).unwrap_err(),
        decode(&version).unwrap_err(),
        decode(&truncated).unwrap_err(),
        decode(&trailing).unwrap_err(),
        decode(&tag).unwrap_err(),
    ];
    assert_eq!(errors[0], FormatError::BadMagic);
    assert_eq!(errors[1], FormatError::UnsupportedVersion(9));
    assert_eq!(errors[2], FormatError::Truncated);
    assert!(matches!(errors[3], FormatError::Corrupt(_)));
    assert!(matches!(errors[4], FormatError::Corrupt(_)));
    let codes: std::collections::BTreeSet<u32> = errors[..4].iter().map(FormatError::code).collect();
    assert_eq!(codes.len(), 4, "{codes:?}");
    assert!(decode(&[]).is_err());
}

#[test]
fn unsynced_model_is_refused() {
    let mut m = SrModel::build(SrModelConfig::resnet(2, 1).with_channels(4), 0).unwrap();
    for slot in m.network_mut().layers_mut() {
        if let Layer::BinaryConv(l) = &mut slot.layer {
            let w = l.shadow_mut();
            let v = -w.data()[0];
            w.data_mut()[0] = if v == 0.0 { -1.0 } else { v };
        }
    }
    assert_eq!(encode(&m).unwrap_err(), FormatError::Unsynced);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_model(std::path::Path::new("/nonexistent/model.bsrn")).unwrap_err();
    assert!(matches!(err, FormatError::Io(_)));
}
