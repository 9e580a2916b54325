use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v3dg_core::build::{build_bundle, BuildParams};
use v3dg_core::io::{decode_bundle, encode_bundle, encoded_size, read_bundle, write_bundle, HEADER_BYTES};
use v3dg_core::synthetic::{blob, sphere_shell};
use v3dg_core::Error;

fn quick(cluster_size: usize, group_size: usize, seed: u64) -> BuildParams {
    BuildParams {
        cluster_size,
        group_size,
        iterations: 0,
        seed,
        ..Default::default()
    }
}

#[test]
fn hundred_random_bundles_roundtrip_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let n = rng.random_range(1..600);
        let cs = rng.random_range(1..80);
        let gs_size = rng.random_range(2..5);
        let asset = if i % 2 == 0 { blob(n, rng.random_range(0.5..3.0), i) } else { sphere_shell(n, 1.0, i) };
        let b = build_bundle(&asset, &quick(cs, gs_size, rng.random())).unwrap();

        let bytes = encode_bundle(&b);
        assert_eq!(bytes.len(), encoded_size(b.clusters.len(), b.gaussians.len()));
        let back = decode_bundle(&bytes).unwrap();
        assert_eq!(back, b, "bundle {i}");
        assert_eq!(encode_bundle(&back), bytes);

        let path = dir.path().join(format!("b{i}.v3dg"));
        write_bundle(&b, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(read_bundle(&path).unwrap(), b);
    }
}

#[test]
fn size_formula_on_4096_gaussians() {
    let b = build_bundle(&blob(4096, 1.0, 5), &quick(512, 2, 0)).unwrap();
    let bytes = encode_bundle(&b);
    let (c, n) = (b.clusters.len(), b.gaussians.len());
    assert_eq!(bytes.len(), 52 + 48 * c + 56 * n + 4);
    assert_eq!(b.base_gaussians().len(), 4096);
}

#[test]
fn damaged_files_are_rejected_with_the_right_kind() {
    let b = build_bundle(&blob(300, 1.0, 6), &quick(50, 2, 0)).unwrap();
    let bytes = encode_bundle(&b);

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_bundle(&magic), Err(Error::Format(_))));

    let mut version = bytes.clone();
    version[4] = 7;
    assert!(matches!(decode_bundle(&version), Err(Error::Format(_))));

    for at in [8, 20, HEADER_BYTES - 5] {
        let mut header = bytes.clone();
        header[at] ^= 0x40;
        assert!(matches!(decode_bundle(&header), Err(Error::Corruption(_))), "header byte {at}");
    }

    for at in [HEADER_BYTES + 3, bytes.len() / 2, bytes.len() - 5] {
        let mut body = bytes.clone();
        body[at] ^= 0x01;
        assert!(matches!(decode_bundle(&body), Err(Error::Corruption(_))), "body byte {at}");
    }

    for len in [0, 3, HEADER_BYTES - 1, HEADER_BYTES + 10, bytes.len() - 1] {
        match decode_bundle(&bytes[..len]) {
            Err(Error::Io(e)) => assert_eq!(e.kind(), std::io::ErrorKind::UnexpectedEof, "len {len}"),
            Err(Error::Format(_)) if len < 8 => {}
            other => panic!("truncated to {len}: {other:?}"),
        }
    }
}

#[test]
fn writer_refuses_a_broken_bundle() {
    let mut b = build_bundle(&blob(300, 1.0, 7), &quick(50, 2, 0)).unwrap();
    let top = b.top_layer();
    let i = b.clusters.iter().position(|c| c.layer == top).unwrap();
    b.clusters[i].parent.radius = 1.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.v3dg");
    assert!(matches!(write_bundle(&b, &path), Err(Error::Corruption(_))));
    assert!(!path.exists());
}
