use std::path::Path;

use dsct::dataset::{build_dataset, read_tensor, write_tensor, DatasetManifest, DatasetSpec, IngestPair, Split, SplitSpec};
use dsct::geometry::GeometrySpec;
use dsct::opmt::OpmtConfig;

fn small_spec(count: usize) -> DatasetSpec {
    DatasetSpec {
        count,
        geometry: GeometrySpec {
            n_s: 12,
            n_d: 32,
            l_d: 1.6,
            n_r: 24,
            ..GeometrySpec::default()
        },
        opmt: OpmtConfig {
            n_sweeps: 2,
            ..OpmtConfig::default()
        },
        split: SplitSpec([1, 1, 1]),
        seed: 9,
        ..DatasetSpec::default()
    }
}

fn max_of(root: &Path, rel: &str) -> f64 {
    let (_, v) = read_tensor(&root.join(rel)).unwrap();
    v.iter().copied().fold(0.0f32, f32::max) as f64
}

#[test]
fn three_sample_build_has_one_sample_per_split() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(&small_spec(3), dir.path()).unwrap();
    manifest.verify(dir.path()).unwrap();
    assert_eq!(manifest, DatasetManifest::load(dir.path()).unwrap());

    assert_eq!(manifest.image_shape, [24, 24]);
    assert_eq!(manifest.sinogram_shape, [12, 32]);
    for split in Split::ALL {
        assert_eq!(manifest.split(split).count(), 1, "{split:?}");
    }
    let ids: Vec<&str> = manifest.samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["0000", "0001", "0002"]);

    let train = manifest.split(Split::Train).next().unwrap();
    assert!(train.paths.f_gt.starts_with(&format!("train/{}/", train.id)));
    assert_eq!(manifest.normalization.f, max_of(dir.path(), &train.paths.f_gt));
    assert_eq!(manifest.normalization.g, max_of(dir.path(), &train.paths.g_gt));
    assert_eq!(manifest.provenance.master_seed, 9);
    assert_eq!(manifest.provenance.spectra_hashes.len(), 3);
}

#[test]
fn different_seeds_change_the_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = build_dataset(&small_spec(3), a.path()).unwrap();
    let mb = build_dataset(&DatasetSpec { seed: 10, ..small_spec(3) }, b.path()).unwrap();
    let p1 = |root: &Path, m: &DatasetManifest| {
        let s = m.samples.iter().find(|s| s.id == "0000").unwrap();
        read_tensor(&root.join(&s.paths.p1)).unwrap().1
    };
    assert_ne!(p1(a.path(), &ma), p1(b.path(), &mb));
}

#[test]
fn ingested_pairs_are_stored_as_ground_truth() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let n = 24;
    let mut ingest = Vec::new();
    for k in 0..2 {
        let f: Vec<f32> = (0..n * n).map(|i| ((i + k) % 5) as f32 * 0.1).collect();
        let g: Vec<f32> = (0..n * n).map(|i| ((i + 2 * k) % 3) as f32 * 0.5).collect();
        let fp = src.path().join(format!("f{k}.tsr"));
        let gp = src.path().join(format!("g{k}.tsr"));
        write_tensor(&fp, &[n, n], &f).unwrap();
        write_tensor(&gp, &[n, n], &g).unwrap();
        ingest.push(IngestPair { f: fp, g: gp });
    }
    let spec = DatasetSpec {
        ingest: ingest.clone(),
        split: SplitSpec([1, 1, 0]),
        ..small_spec(99)
    };
    let manifest = build_dataset(&spec, out.path()).unwrap();
    assert_eq!(manifest.samples.len(), 2);
    for (i, s) in manifest.samples.iter().enumerate() {
        let (_, stored) = read_tensor(&out.path().join(&s.paths.f_gt)).unwrap();
        let (_, original) = read_tensor(&ingest[i].f).unwrap();
        assert_eq!(stored, original);
    }
}

#[test]
fn failed_samples_are_marked_incomplete() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let good = src.path().join("good.tsr");
    let bad = src.path().join("bad.tsr");
    write_tensor(&good, &[24, 24], &vec![0.5; 24 * 24]).unwrap();
    write_tensor(&bad, &[8, 8], &vec![0.5; 64]).unwrap();
    let spec = DatasetSpec {
        ingest: vec![
            IngestPair {
                f: good.clone(),
                g: good.clone(),
            },
            IngestPair { f: bad, g: good },
        ],
        split: SplitSpec([1, 1, 0]),
        ..small_spec(0)
    };
    assert!(build_dataset(&spec, out.path()).is_err());
    let manifest = DatasetManifest::load(out.path()).unwrap();
    assert!(manifest.samples[0].complete);
    assert!(!manifest.samples[1].complete);
    assert!(manifest.samples[1].error.as_deref().unwrap().contains("shape"));
    assert!(manifest.verify(out.path()).is_err());
}
