//! Synthetic corpora, domain shift, dataset IO and splits.

mod corpus;
pub mod io;
mod manifest;

use rand::seq::SliceRandom;

pub use corpus::{
    generate_corpus, render_sample, shift_corpus, CorpusSpec, DomainShift, ShapeFamily, Texture, INTRA_TAG,
    TEXTURE_BASE_PERIOD,
};
pub use manifest::{load_dataset, Dataset, DatasetManifest, ManifestEntry, MANIFEST_VERSION};

use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};

/// Train/validation/test partition of one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Randomly partitions `manifest` by `ratios = (train, val, test)`.
///
/// Validation and test sizes are `floor(n * ratio)`; the remainder goes to
/// training. Entries are sorted by id before shuffling so the result depends
/// only on the id set and `seed`. Each part keeps id order.
pub fn split(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::validation(format!(
            "split ratios must all be positive, got {ratios:?}"
        )));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    if manifest.is_empty() {
        return Err(Error::validation("cannot split an empty dataset"));
    }
    let n = manifest.len();
    let mut entries = manifest.entries.clone();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    entries.shuffle(&mut rng_for(seed, Stream::Split, 0));
    let n_val = (n as f64 * rv + 1e-9).floor() as usize;
    let n_test = (n as f64 * rs + 1e-9).floor() as usize;
    let mut test = entries.split_off(n - n_test);
    let mut val = entries.split_off(n - n_test - n_val);
    let mut train = entries;
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(Split {
        train: manifest.with_entries(train),
        val: manifest.with_entries(val),
        test: manifest.with_entries(test),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::average::{intensity_stats, is_classwise_constant};

    fn noiseless(n: usize, seed: u64) -> CorpusSpec {
        let mut spec = CorpusSpec::new(n, 32, 3, seed);
        spec.texture.noise_amplitude = 0.0;
        spec
    }

    fn read_tree(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["images", "labels"] {
            let mut names: Vec<_> = std::fs::read_dir(root.join(sub))
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            names.sort();
            for p in names {
                out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
            }
        }
        out.push(("manifest".into(), std::fs::read(root.join("manifest.json")).unwrap()));
        out
    }

    #[test]
    fn noiseless_corpus_is_classwise_constant() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&noiseless(12, 3), dir.path()).unwrap();
        for pair in load_dataset(&dir.path().join("manifest.json")).unwrap().iter() {
            let pair = pair.unwrap();
            assert!(is_classwise_constant(&pair.image, &pair.label, 1e-9).unwrap());
            assert!(pair.label.class_counts()[1..].iter().any(|&c| c > 0));
        }
        assert_eq!(m.len(), 12);
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = CorpusSpec::new(6, 32, 4, 11);
        generate_corpus(&spec, a.path()).unwrap();
        generate_corpus(&spec, b.path()).unwrap();
        assert_eq!(read_tree(a.path()), read_tree(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate_corpus(&CorpusSpec { seed: 12, ..spec }, c.path()).unwrap();
        assert_ne!(read_tree(a.path()), read_tree(c.path()));
    }

    #[test]
    fn class_means_follow_spec() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec::new(100, 32, 3, 5);
        generate_corpus(&spec, dir.path()).unwrap();
        let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(ds.len(), 100);
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for pair in ds.iter() {
            let pair = pair.unwrap();
            for (v, &id) in pair.image.values().iter().zip(pair.label.ids()) {
                assert!(id < 3);
                sums[id as usize] += v;
                counts[id as usize] += 1;
            }
        }
        for k in 0..3 {
            assert!(counts[k] > 0);
            let mean = sums[k] / counts[k] as f64;
            let want = spec.texture.intensity_means[k];
            assert!((mean - want).abs() < spec.texture.noise_amplitude, "class {k}: {mean} vs {want}");
        }
    }

    #[test]
    fn round_trip_stats_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = CorpusSpec::new(5, 32, 3, 8);
        spec.texture.gradient_strength = 0.2;
        generate_corpus(&spec, dir.path()).unwrap();
        let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
        for i in 0..spec.num_samples {
            let (img, lab) = render_sample(&spec, i).unwrap();
            let before = intensity_stats(&img, &lab, 16).unwrap();
            let pair = ds.get(i).unwrap();
            assert_eq!(pair.label, lab);
            let after = intensity_stats(&pair.image, &pair.label, 16).unwrap();
            for (a, b) in before.classes.iter().zip(&after.classes) {
                assert_eq!(a.pixel_count, b.pixel_count);
                if !a.empty {
                    assert!((a.channels[0].mean - b.channels[0].mean).abs() <= 1.0 / 255.0);
                }
            }
        }
    }

    #[test]
    fn ring_family_stays_sparse() {
        let mut spec = noiseless(20, 2);
        spec.shape_family = ShapeFamily::Rings;
        for i in 0..20 {
            let (_, lab) = render_sample(&spec, i).unwrap();
            let fg = lab.ids().iter().filter(|&&v| v != 0).count();
            assert!(fg > 0 && fg < 32 * 32 / 2);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = CorpusSpec::new(4, 32, 3, 0);
        s.texture.intensity_means.pop();
        assert!(matches!(generate_corpus(&s, std::path::Path::new("/nonexistent")), Err(Error::Validation(_))));
        let mut s = CorpusSpec::new(4, 32, 1, 0);
        s.texture.intensity_means = vec![0.5];
        assert!(s.validate().is_err());
        let mut s = CorpusSpec::new(4, 32, 2, 0);
        s.texture.intensity_means = vec![0.5, 1.2];
        assert!(s.validate().is_err());
    }

    #[test]
    fn unwritable_root_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = generate_corpus(&CorpusSpec::new(2, 32, 3, 0), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn identity_shift_preserves_images() {
        let dir = tempfile::tempdir().unwrap();
        let src = generate_corpus(&CorpusSpec::new(4, 32, 3, 1), &dir.path().join("a")).unwrap();
        let out = shift_corpus(&src, &DomainShift::default(), 9, &dir.path().join("b"), "cross").unwrap();
        let (a, b) = (Dataset::new(src).unwrap(), Dataset::new(out).unwrap());
        for i in 0..a.len() {
            let (pa, pb) = (a.get(i).unwrap(), b.get(i).unwrap());
            assert_eq!(pb.domain_tag, "cross");
            for (x, y) in pa.image.values().iter().zip(pb.image.values()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn offset_shift_on_constant_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = noiseless(3, 4);
        spec.num_classes = 2;
        spec.texture.intensity_means = vec![0.5, 0.5];
        let src = generate_corpus(&spec, &dir.path().join("a")).unwrap();
        let shift = DomainShift {
            intensity_offset: 0.2,
            ..DomainShift::default()
        };
        let out = shift_corpus(&src, &shift, 0, &dir.path().join("b"), "cross").unwrap();
        for pair in Dataset::new(out).unwrap().iter() {
            for v in pair.unwrap().image.values() {
                // 0.5 is stored as 128/255, so allow one quantization step.
                assert!((v - 0.7).abs() <= 1.0 / 255.0, "{v}");
            }
        }
    }

    #[test]
    fn strong_shift_clamps_and_keeps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let src = generate_corpus(&CorpusSpec::new(8, 32, 3, 6), &dir.path().join("a")).unwrap();
        let shift = DomainShift {
            intensity_offset: 0.3,
            contrast_scale: 1.4,
            noise_amplitude_delta: 0.05,
            texture_frequency_scale: 1.0,
        };
        let out = shift_corpus(&src, &shift, 2, &dir.path().join("b"), "cross").unwrap();
        for (ea, eb) in src.entries.iter().zip(&out.entries) {
            assert_eq!(
                std::fs::read(src.label_path(ea)).unwrap(),
                std::fs::read(out.label_path(eb)).unwrap()
            );
        }
        for pair in Dataset::new(out.clone()).unwrap().iter() {
            assert!(pair.unwrap().image.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let again = shift_corpus(&src, &shift, 2, &dir.path().join("c"), "cross").unwrap();
        for (ea, eb) in out.entries.iter().zip(&again.entries) {
            assert_eq!(
                std::fs::read(out.image_path(ea)).unwrap(),
                std::fs::read(again.image_path(eb)).unwrap()
            );
        }
    }

    #[test]
    fn missing_file_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&CorpusSpec::new(3, 32, 3, 0), dir.path()).unwrap();
        std::fs::remove_file(m.image_path(&m.entries[1])).unwrap();
        let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("s00001"), "{err}");
    }

    #[test]
    fn bad_label_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&CorpusSpec::new(2, 32, 3, 0), dir.path()).unwrap();
        let bad = crate::image::LabelMap::new(32, 32, 8, vec![7; 32 * 32]).unwrap();
        io::save_label(&bad, &m.label_path(&m.entries[0])).unwrap();
        let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
        let err = ds.get(0).unwrap_err();
        assert!(err.to_string().contains("s00000"), "{err}");
        let small = crate::image::LabelMap::new(16, 16, 3, vec![0; 256]).unwrap();
        io::save_label(&small, &m.label_path(&m.entries[1])).unwrap();
        assert!(ds.get(1).unwrap_err().to_string().contains("s00001"));
    }

    fn fake_manifest(n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                id: format!("id{i:03}"),
                image: String::new(),
                label: String::new(),
                domain: "intra".into(),
            })
            .collect();
        DatasetManifest::new("/tmp", 3, entries)
    }

    fn ids(m: &DatasetManifest) -> BTreeSet<String> {
        m.entries.iter().map(|e| e.id.clone()).collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = fake_manifest(10);
        let s = split(&m, (0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert_eq!(s, split(&m, (0.7, 0.1, 0.2), 3).unwrap());
        let mut reversed = m.clone();
        reversed.entries.reverse();
        assert_eq!(s, split(&reversed, (0.7, 0.1, 0.2), 3).unwrap());
        assert!(matches!(split(&m, (1.0, 0.0, 0.0), 0), Err(Error::Validation(_))));
        assert!(split(&m, (0.5, 0.3, 0.3), 0).is_err());
        assert!(split(&fake_manifest(0), (0.7, 0.1, 0.2), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_is_partition(n in 1usize..80, a in 0.05f64..0.9, b in 0.01f64..1.0, seed in 0u64..1000) {
            let rest = 1.0 - a;
            let (rv, rs) = (rest * b.min(0.99), rest * (1.0 - b.min(0.99)));
            let m = fake_manifest(n);
            let s = split(&m, (a, rv, rs), seed).unwrap();
            let (t, v, te) = (ids(&s.train), ids(&s.val), ids(&s.test));
            proptest::prop_assert!(t.is_disjoint(&v) && t.is_disjoint(&te) && v.is_disjoint(&te));
            let all: BTreeSet<_> = t.union(&v).chain(te.iter()).cloned().collect();
            proptest::prop_assert_eq!(all, ids(&m));
            proptest::prop_assert_eq!(v.len(), (n as f64 * rv + 1e-9).floor() as usize);
        }
    }
}
