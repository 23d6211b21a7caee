mod common;

use std::io::Write;

use divfuse::manifest::{
    read_manifest, sidecar_path, toy_embed, write_manifest, Branch, EmbeddingRecord, Label, Manifest,
};
use divfuse::{Error, Raster};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn arb_manifest() -> impl Strategy<Value = Manifest> {
    (1usize..12, 1usize..20).prop_flat_map(|(dim, n)| {
        proptest::collection::vec(
            (
                proptest::collection::vec(-10.0f32..10.0, dim),
                any::<bool>(),
                prop_oneof![Just(Branch::Pixel), Just(Branch::Spectrum)],
                "[a-z]{0,6}",
            ),
            n,
        )
        .prop_filter_map("nonzero vectors", move |rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (mut v, fake, branch, generator))| {
                    if v.iter().all(|x| *x == 0.0) {
                        v[0] = 1.0;
                    }
                    EmbeddingRecord {
                        id: format!("id-{i}"),
                        label: Label::from_fake(fake),
                        generator,
                        branch,
                        source_path: format!("imgs/{i}.png"),
                        vector: v,
                    }
                })
                .collect();
            Manifest::from_records(dim, records, "prop").ok()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_read_is_identity(m in arb_manifest()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        prop_assert_eq!(&back, &m);
        for (a, b) in back.records().iter().zip(m.records()) {
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn ingested_vectors_are_unit(m in arb_manifest()) {
        for r in m.records() {
            let n: f64 = r.vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6, "norm {}", n);
        }
    }
}

#[test]
fn large_manifest_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 768;
    let records = (0..10_000)
        .map(|i| {
            let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            EmbeddingRecord::new(format!("{i}"), Label::from_fake(i % 3 == 0), "g", Branch::Pixel, v)
        })
        .collect();
    let m = Manifest::from_records(dim, records, "big").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.emb");
    write_manifest(&m, &path).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);
}

fn write_raw(dir: &std::path::Path, header: &str, values: &[f32], ids: &[&str]) -> std::path::PathBuf {
    let path = dir.join("raw.emb");
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(header.as_bytes()).unwrap();
    f.write_all(b"\n").unwrap();
    for v in values {
        f.write_all(&v.to_le_bytes()).unwrap();
    }
    let mut meta = String::new();
    for id in ids {
        meta.push_str(&format!(
            "{{\"id\":\"{id}\",\"label\":\"real\",\"generator\":\"\",\"branch\":\"pixel\",\"source_path\":\"\"}}\n"
        ));
    }
    std::fs::write(sidecar_path(&path), meta).unwrap();
    path
}

#[test]
fn short_row_is_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let values = vec![0.5f32; 767];
    let path = write_raw(dir.path(), r#"{"dimension":768,"count":1,"dtype":"f32"}"#, &values, &["a"]);
    assert!(matches!(read_manifest(&path), Err(Error::Integrity(_))));
}

#[test]
fn zero_vector_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let values = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let path = write_raw(dir.path(), r#"{"dimension":4,"count":2,"dtype":"f32"}"#, &values, &["ok", "dead"]);
    match read_manifest(&path) {
        Err(Error::Data { id, .. }) => assert_eq!(id, "dead"),
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn malformed_header_names_field() {
    let dir = tempfile::tempdir().unwrap();
    for (header, field) in [
        (r#"{"dimension":"four","count":1,"dtype":"f32"}"#, "dimension"),
        (r#"{"dimension":4,"dtype":"f32"}"#, "count"),
        (r#"{"dimension":4,"count":1,"dtype":"f16"}"#, "dtype"),
        ("not json", "header"),
    ] {
        let path = write_raw(dir.path(), header, &[1.0; 4], &["a"]);
        match read_manifest(&path) {
            Err(Error::Format { field: f, .. }) => assert_eq!(f, field, "{header}"),
            other => panic!("{header}: expected format error, got {other:?}"),
        }
    }
}

#[test]
fn read_preserves_disk_order() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f32> = (0..5).flat_map(|i| [1.0, i as f32]).collect();
    let ids = ["e", "a", "d", "b", "c"];
    let path = write_raw(dir.path(), r#"{"dimension":2,"count":5,"dtype":"f32"}"#, &values, &ids);
    let m = read_manifest(&path).unwrap();
    let got: Vec<&str> = m.records().iter().map(|r| r.id.as_str()).collect();
    assert_eq!(got, ids);
}

/// Re-derivation of the toy encoder: 16×16 area-average of the channel mean,
/// a bias input of 1, then a `dim × 257` standard-normal matrix drawn row by
/// row from ChaCha8 seeded with `seed`.
fn oracle_toy_embed(gray: &[f64], w: usize, h: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut grid = vec![];
    for r in 0..16 {
        let y0 = r * h / 16;
        let y1 = ((r + 1) * h / 16).max(y0 + 1);
        for c in 0..16 {
            let x0 = c * w / 16;
            let x1 = ((c + 1) * w / 16).max(x0 + 1);
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += gray[y * w + x];
                }
            }
            grid.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    grid.push(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..257).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let out: Vec<f64> = m.iter().map(|row| row.iter().zip(&grid).map(|(a, b)| a * b).sum()).collect();
    common::unit(&out)
}

#[test]
fn toy_embed_black_white_matches_reimplementation() {
    let black = Raster::filled(32, 32, 3, 0.0);
    let white = Raster::filled(32, 32, 3, 1.0);
    let eb = toy_embed(&black, 8, 7).unwrap();
    let ew = toy_embed(&white, 8, 7).unwrap();
    let ob = oracle_toy_embed(&[0.0; 1024], 32, 32, 8, 7);
    let ow = oracle_toy_embed(&[1.0; 1024], 32, 32, 8, 7);
    for (a, b) in eb.iter().zip(&ob).chain(ew.iter().zip(&ow)) {
        assert!((f64::from(*a) - b).abs() < 1e-6);
    }
    let cos_crate = divfuse::similarity::cosine(&eb, &ew).unwrap();
    let cos_oracle: f64 = ob.iter().zip(&ow).map(|(a, b)| a * b).sum();
    assert!((cos_crate - cos_oracle).abs() < 1e-6, "{cos_crate} vs {cos_oracle}");
}

#[test]
fn toy_embed_odd_sized_image_matches_reimplementation() {
    let img = Raster::from_fn(37, 21, 1, |x, y, _| ((x * 7 + y * 3) % 11) as f32 / 10.0);
    let gray: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
    let got = toy_embed(&img, 24, 99).unwrap();
    let want = oracle_toy_embed(&gray, 37, 21, 24, 99);
    for (a, b) in got.iter().zip(&want) {
        assert!((f64::from(*a) - b).abs() < 1e-6);
    }
}

#[test]
fn toy_embed_is_deterministic_and_identity_preserving() {
    let img = Raster::from_fn(20, 20, 3, |x, y, c| ((x + 2 * y + c) % 9) as f32 / 8.0);
    let a = toy_embed(&img, 16, 1).unwrap();
    let b = toy_embed(&img.clone(), 16, 1).unwrap();
    assert_eq!(a, b);
    let s = divfuse::similarity::cosine(&a, &b).unwrap();
    assert!((s - 1.0).abs() < 1e-6);
}

#[test]
fn toy_embed_rejects_bad_arguments() {
    let img = Raster::filled(4, 4, 1, 0.5);
    assert!(matches!(toy_embed(&img, 1, 0), Err(Error::Argument(_))));
    let empty = Raster::new(0, 0, 1, vec![]).unwrap();
    assert!(matches!(toy_embed(&empty, 8, 0), Err(Error::Argument(_))));
}
