use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use tripath::data::{
    image_path, load_manifest, make_batches, png_io, synth_dataset, Dihedral, ManifestFile, Normalization, Split,
    Splits, SynthOptions, SYNTH_MAX_CHANGE, SYNTH_MIN_CHANGE,
};
use tripath::Error;
use tripath_autograd::par::{self, Exec};

/// Four hand-made 8x8 samples with known contents.
fn tiny_dataset(root: &Path, num_classes: usize) -> Vec<Array2<u8>> {
    let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
    let mut masks = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let img = Array3::from_shape_fn((3, 8, 8), |(c, y, x)| ((c * 64 + y * 8 + x + i) % 256) as f64 / 255.0);
        let mask = Array2::from_shape_fn((8, 8), |(y, x)| if y < 2 && x < 2 + i { (1 + i % num_classes) as u8 } else { 0 });
        png_io::write_rgb(&image_path(root, "A", id), &img).unwrap();
        png_io::write_rgb(&image_path(root, "B", id), &img.mapv(|v| 1.0 - v)).unwrap();
        png_io::write_mask(&image_path(root, "label", id), &mask).unwrap();
        masks.push(mask);
    }
    ManifestFile {
        num_classes,
        class_names: (1..=num_classes).map(|c| format!("c{c}")).collect(),
        splits: Splits { train: ids, val: vec![], test: vec![] },
    }
    .write(root)
    .unwrap();
    masks
}

#[test]
fn manifest_lists_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    let masks = tiny_dataset(dir.path(), 3);
    let m = load_manifest(dir.path(), Split::Train).unwrap();
    assert_eq!(m.len(), 4);
    assert!(m.labeled);
    assert_eq!(m.entries, vec!["s0", "s1", "s2", "s3"]);
    for (i, mask) in masks.iter().enumerate() {
        let p = m.load_pair(i).unwrap();
        assert_eq!(p.mask.as_ref().unwrap(), mask);
        assert_eq!(p.image_t1.dim(), (3, 8, 8));
        assert!((p.image_t1[[0, 0, 1]] - (1 + i) as f64 / 255.0).abs() < 1e-12);
    }
    let empty = load_manifest(dir.path(), Split::Val).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn out_of_range_label_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path(), 3);
    let mut bad = Array2::<u8>::zeros((8, 8));
    bad[[4, 4]] = 4;
    png_io::write_mask(&image_path(dir.path(), "label", "s3"), &bad).unwrap();
    match load_manifest(dir.path(), Split::Train) {
        Err(Error::LabelOutOfRange { sample, value, max }) => {
            assert_eq!((sample.as_str(), value, max), ("s3", 4, 3));
        }
        other => panic!("expected LabelOutOfRange, got {other:?}"),
    }
}

#[test]
fn missing_image_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path(), 3);
    for entry in fs::read_dir(dir.path().join("A")).unwrap() {
        fs::remove_file(entry.unwrap().path()).unwrap();
    }
    assert!(matches!(load_manifest(dir.path(), Split::Train), Err(Error::MissingFile { .. })));
}

#[test]
fn mismatched_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path(), 3);
    png_io::write_rgb(&image_path(dir.path(), "B", "s1"), &Array3::zeros((3, 8, 4))).unwrap();
    assert!(matches!(load_manifest(dir.path(), Split::Train), Err(Error::ShapeMismatch(_))));
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["A", "B", "label"] {
        let mut files: Vec<_> = fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files {
            out.push((format!("{sub}/{}", f.file_name().unwrap().to_string_lossy()), fs::read(&f).unwrap()));
        }
    }
    out.push(("manifest.json".into(), fs::read(root.join("manifest.json")).unwrap()));
    out
}

#[test]
fn synthetic_generation_is_byte_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut opts = SynthOptions::new(7, 3, 32, 3);
    opts.val_count = 1;
    synth_dataset(a.path(), &opts).unwrap();
    synth_dataset(b.path(), &opts).unwrap();
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
    opts.seed = 8;
    synth_dataset(c.path(), &opts).unwrap();
    assert_ne!(read_tree(a.path()), read_tree(c.path()));
}

#[test]
fn synthetic_masks_respect_class_count_and_change_band() {
    let dir = tempfile::tempdir().unwrap();
    for n in [1usize, 3, 6] {
        let root = dir.path().join(format!("n{n}"));
        let m = synth_dataset(&root, &SynthOptions::new(n as u64, 6, 64, n)).unwrap();
        assert_eq!(m.num_classes, n);
        let mut seen = vec![0usize; n + 1];
        for i in 0..m.len() {
            let p = m.load_pair(i).unwrap();
            let mask = p.mask.unwrap();
            let changed = mask.iter().filter(|&&v| v > 0).count() as f64 / mask.len() as f64;
            assert!((SYNTH_MIN_CHANGE..=SYNTH_MAX_CHANGE).contains(&changed), "N={n} {}: {changed}", p.sample_id);
            for &v in &mask {
                seen[v as usize] += 1;
            }
            // the two dates agree wherever nothing changed
            for ((y, x), &v) in mask.indexed_iter() {
                if v == 0 {
                    for c in 0..3 {
                        assert_eq!(p.image_t1[[c, y, x]], p.image_t2[[c, y, x]]);
                    }
                }
            }
        }
        assert_eq!(seen.iter().sum::<usize>(), 6 * 64 * 64);
        assert!(seen[1..].iter().all(|&c| c > 0), "N={n}: every change class appears ({seen:?})");
        if n == 1 {
            assert_eq!(seen.len(), 2);
        }
    }
}

#[test]
fn batching_covers_each_sample_once_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(dir.path(), &SynthOptions::new(1, 4, 16, 3)).unwrap();
    let loader = make_batches(&m, 2, true, 5).unwrap();
    assert_eq!(loader.batches_per_epoch(), 2);
    let batches: Vec<_> = loader.epoch(0).collect::<Result<_, _>>().unwrap();
    assert_eq!(batches.len(), 2);
    let mut ids: Vec<String> = batches.iter().flat_map(|b| b.sample_ids.clone()).collect();
    ids.sort();
    assert_eq!(ids, m.entries);
    for b in &batches {
        assert_eq!(b.t1.dim(), (2, 3, 16, 16));
        assert_eq!(b.masks.as_ref().unwrap().dim(), (2, 16, 16));
    }
    let odd = make_batches(&m, 3, false, 5).unwrap();
    let sizes: Vec<usize> = odd.epoch(0).map(|b| b.unwrap().len()).collect();
    assert_eq!(sizes, vec![3, 1]);
    assert!(matches!(make_batches(&m, 0, false, 0), Err(Error::InvalidArg(_))));
}

#[test]
fn augmentation_moves_images_and_mask_together() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(dir.path(), &SynthOptions::new(2, 4, 16, 2)).unwrap();
    let norm = Normalization::default();
    let loader = make_batches(&m, 4, true, 9).unwrap();
    let mut seen = std::collections::HashSet::new();
    for epoch in 0..6 {
        for batch in loader.epoch(epoch) {
            let batch = batch.unwrap();
            let masks = batch.masks.as_ref().unwrap();
            for (k, id) in batch.sample_ids.iter().enumerate() {
                let t = batch.transforms[k];
                seen.insert(t);
                let raw = m.load_pair(m.index_of(id).unwrap()).unwrap();
                assert_eq!(batch.t1.index_axis(Axis(0), k), norm.apply(&t.apply_image(&raw.image_t1)));
                assert_eq!(batch.t2.index_axis(Axis(0), k), norm.apply(&t.apply_image(&raw.image_t2)));
                assert_eq!(masks.index_axis(Axis(0), k), t.apply_plane(raw.mask.as_ref().unwrap()));
                // independent check: every pixel that differs between dates is labeled
                let (t1, t2) = (batch.t1.index_axis(Axis(0), k), batch.t2.index_axis(Axis(0), k));
                for ((c, y, x), &a) in t1.indexed_iter() {
                    if a != t2[[c, y, x]] {
                        assert!(masks[[k, y, x]] > 0);
                    }
                }
            }
        }
    }
    assert!(seen.len() >= 4, "only {seen:?} sampled");
}

#[test]
fn dihedral_transforms_are_invertible() {
    let g = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as u8);
    for t in Dihedral::ALL {
        let back = Dihedral::ALL.iter().find(|u| u.apply_plane(&t.apply_plane(&g)) == g);
        assert!(back.is_some(), "{t:?}");
    }
}

#[test]
fn epochs_are_reproducible_and_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(dir.path(), &SynthOptions::new(3, 6, 16, 3)).unwrap();
    let a = make_batches(&m, 2, true, 11).unwrap();
    let b = make_batches(&m, 2, true, 11).unwrap();
    for e in 0..4 {
        assert_eq!(a.plan(e), b.plan(e));
    }
    assert!((1..6).any(|e| a.plan(e) != a.plan(0)));
    let ids = |l: &tripath::data::BatchLoader| -> Vec<String> { l.epoch(1).flat_map(|b| b.unwrap().sample_ids).collect() };
    assert_eq!(ids(&a), ids(&b));
    let plain = make_batches(&m, 2, false, 11).unwrap().sequential();
    assert_eq!(ids(&plain), m.entries);
}

#[test]
fn parallel_and_sequential_loading_agree() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(dir.path(), &SynthOptions::new(4, 5, 16, 3)).unwrap();
    let loader = make_batches(&m, 2, true, 13).unwrap();
    let collect = |exec| {
        par::set_exec(exec);
        let out: Vec<_> = loader.epoch(2).map(|b| b.unwrap()).collect();
        par::set_exec(Exec::Parallel);
        out
    };
    let (p, s) = (collect(Exec::Parallel), collect(Exec::Sequential));
    for (x, y) in p.iter().zip(&s) {
        assert_eq!(x.sample_ids, y.sample_ids);
        assert_eq!(x.t1, y.t1);
        assert_eq!(x.masks, y.masks);
    }
    let pre = loader.clone().preload().unwrap();
    let q: Vec<_> = pre.epoch(2).map(|b| b.unwrap()).collect();
    assert_eq!(q.iter().map(|b| &b.t2).collect::<Vec<_>>(), p.iter().map(|b| &b.t2).collect::<Vec<_>>());
}
