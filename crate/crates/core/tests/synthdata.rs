mod common;

use common::*;
use hkit::descriptor::{encode_fv, Codebook, GmmModel, PcaModel};
use hkit::nets::{init_model, ArchConfig, BlockShape, Feed, StreamConfig, StreamId, StreamKind};
use hkit::powernorm::apply_pn;
use hkit::sketch::apply_sketch;
use hkit::synthdata::{
    build_ground_truth, fit_dictionaries, gen_dataset, load_dataset, raw_dim, read_manifest, save_dataset, stream_sketch, Dataset,
    DictConfig, Dictionaries, GenConfig, GtConfig, Split, StoredDataset, SynthClip,
};
use hkit::trainer::{train, TrainConfig};
use hkit::Error;

fn small() -> GenConfig {
    GenConfig {
        classes: 3,
        clips_per_class: 6,
        train_per_class: 4,
        frames: 4,
        desc_per_frame: 8,
        shape: BlockShape { channels: 4, slots: 3, branches: 2 },
        seed: 5,
        ..GenConfig::default()
    }
}

fn small_dict() -> DictConfig {
    DictConfig { pca_dim: 6, bow_k: 8, gmm_k: 3, ..DictConfig::default() }
}

fn small_gt() -> GtConfig {
    GtConfig { streams: vec![StreamKind::Fv1, StreamKind::Fv2, StreamKind::Bow, StreamKind::Off], out_dim: 16, ..GtConfig::default() }
}

fn stored() -> StoredDataset {
    let ds = gen_dataset(&small()).unwrap();
    let dicts = fit_dictionaries(&ds, &small_dict()).unwrap();
    let gt = build_ground_truth(&ds, &dicts, &small_gt()).unwrap();
    StoredDataset { dataset: ds, dict: Some((small_dict(), dicts)), gt: Some(gt) }
}

#[test]
fn generation_is_deterministic_and_well_formed() {
    let cfg = small();
    let a = gen_dataset(&cfg).unwrap();
    assert_eq!(a, gen_dataset(&cfg).unwrap());
    assert_ne!(a, gen_dataset(&GenConfig { seed: 6, ..cfg.clone() }).unwrap());
    assert_eq!(a.clips.len(), 18);
    assert_eq!(a.indices(Split::Train).len(), 12);
    for c in &a.clips {
        assert!(c.label < 3);
        assert_eq!(c.descriptors.len(), 4 * 8 * cfg.d_raw);
        assert!(c.descriptors.iter().all(|v| v.is_finite()));
        assert!(c.block.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert!(gen_dataset(&GenConfig { classes: 1, ..cfg.clone() }).is_err());
    assert!(matches!(gen_dataset(&GenConfig { clips_per_class: 1, ..cfg }), Err(Error::Config(_))));
}

#[test]
fn default_dataset_round_trips() {
    let ds = gen_dataset(&GenConfig::default()).unwrap();
    assert_eq!((ds.classes(), ds.clips.len(), ds.config.frames, ds.config.d_raw), (10, 600, 16, 20));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.hkit");
    let s = StoredDataset::new(ds);
    save_dataset(&path, &s).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), s);
}

#[test]
fn full_file_round_trips_bit_exactly() {
    let s = stored();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.hkit");
    save_dataset(&path, &s).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, s);
    let m = read_manifest(&path).unwrap();
    assert_eq!((m.clips, m.classes, m.d_raw, m.data.seed), (18, 3, 20, 5));
    assert_eq!(m.gt.as_ref().unwrap().sketch_seed, 0);
    assert_eq!(m.gt_streams, ["fv1", "fv2", "bow", "off"]);
}

/// Section names and payload byte ranges, parsed independently of the library.
fn layout(bytes: &[u8]) -> Vec<(String, usize, usize)> {
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let mut pos = 10;
    let mut out = Vec::new();
    for _ in 0..count {
        let n = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        let name = String::from_utf8(bytes[pos + 2..pos + 2 + n].to_vec()).unwrap();
        pos += 2 + n;
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        out.push((name, pos, pos + len));
        pos += len + 4;
    }
    out
}

#[test]
fn damaged_files_name_the_section() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.hkit");
    save_dataset(&path, &stored()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let sections = layout(&bytes);
    let names: Vec<&str> = sections.iter().map(|s| s.0.as_str()).collect();
    assert_eq!(names, ["manifest", "clips", "descriptors", "blocks", "dictionaries", "groundtruth"]);

    let bad = dir.path().join("bad.hkit");
    for (name, start, end) in &sections {
        std::fs::write(&bad, &bytes[..(start + end) / 2]).unwrap();
        match load_dataset(&bad) {
            Err(Error::Format { section, message }) => {
                assert_eq!(&section, name);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("truncated {name}: {other:?}"),
        }
        let mut flipped = bytes.clone();
        flipped[(start + end) / 2] ^= 0x40;
        std::fs::write(&bad, &flipped).unwrap();
        match load_dataset(&bad) {
            Err(Error::Format { section, message }) => {
                assert_eq!(&section, name);
                assert!(message.contains("checksum"), "{message}");
            }
            other => panic!("corrupted {name}: {other:?}"),
        }
    }
    let mut versioned = bytes.clone();
    versioned[4] = 9;
    std::fs::write(&bad, &versioned).unwrap();
    assert!(matches!(load_dataset(&bad), Err(Error::Format { section, .. }) if section == "header"));

    // the manifest stays readable when only the bodies are damaged
    let (_, start, end) = &sections[2];
    std::fs::write(&bad, &bytes[..(start + end) / 2]).unwrap();
    assert_eq!(read_manifest(&bad).unwrap().clips, 18);
}

#[test]
fn ground_truth_is_reproducible() {
    let s = stored();
    let (_, dicts) = s.dict.as_ref().unwrap();
    let before = dicts.clone();
    let again = build_ground_truth(&s.dataset, dicts, &small_gt()).unwrap();
    assert_eq!(&again, s.gt.as_ref().unwrap());
    assert_eq!(dicts, &before);
    let reseeded = build_ground_truth(&s.dataset, dicts, &GtConfig { sketch_seed: 1, ..small_gt() }).unwrap();
    assert_ne!(reseeded.vectors, again.vectors);
}

#[test]
fn dictionaries_ignore_test_clips() {
    let mut ds = gen_dataset(&small()).unwrap();
    let base = fit_dictionaries(&ds, &small_dict()).unwrap();
    for c in ds.clips.iter_mut().filter(|c| c.split == Split::Test) {
        c.descriptors.iter_mut().for_each(|v| *v += 100.0);
    }
    assert_eq!(fit_dictionaries(&ds, &small_dict()).unwrap(), base);
}

#[test]
fn bow_target_of_a_single_word_clip() {
    let cfg = small();
    let s = stored();
    let (_, dicts) = s.dict.clone().unwrap();
    // raw descriptors that project exactly onto the first visual word
    let word = dicts.codebook.center(0).to_vec();
    let raw = dicts.pca.reconstruct(&word).unwrap();
    let n = cfg.frames * cfg.desc_per_frame;
    let clip = SynthClip {
        label: 0,
        split: Split::Train,
        frames: cfg.frames,
        desc_per_frame: cfg.desc_per_frame,
        descriptors: raw.iter().map(|&v| v as f32).cycle().take(n * cfg.d_raw).collect(),
        block: vec![0.0; cfg.shape.len()],
    };
    let ds = Dataset { config: cfg.clone(), clips: vec![clip] };
    let gtc = GtConfig { streams: vec![StreamKind::Bow], ..small_gt() };
    let pack = build_ground_truth(&ds, &dicts, &gtc).unwrap();
    let mut e1 = vec![0.0; dicts.codebook.k()];
    e1[0] = 1.0;
    let p = stream_sketch(&gtc, StreamId::new(StreamKind::Bow, 0), dicts.codebook.k()).unwrap();
    let want = apply_sketch(&p, &apply_pn(&gtc.pn, &e1).unwrap()).unwrap();
    let got: Vec<f64> = pack.vectors[0][0].iter().map(|&v| f64::from(v)).collect();
    assert!(max_abs_diff(&got, &want) < 1e-5, "{got:?} vs {want:?}");
}

#[test]
fn full_scale_fisher_target_sketches_to_1000() {
    let (k, d) = (256, 213);
    let dicts = Dictionaries {
        pca: PcaModel::new(vec![0.0; d], d, identity(d)).unwrap(),
        codebook: Codebook::new(d, vec![0.0; d]).unwrap(),
        gmm: GmmModel::new(d, vec![1.0 / k as f64; k], uniform_vec(&mut rng(0), k * d, -0.1, 0.1), vec![1.0; k * d]).unwrap(),
    };
    let shape = BlockShape::FULL_SCALE;
    assert_eq!(raw_dim(StreamKind::Fv1, &dicts, shape), 54_528);
    assert_eq!(raw_dim(StreamKind::Fv2, &dicts, shape), 54_528);
    let fv = encode_fv(&vec![0.05; d], &dicts.gmm).unwrap();
    let gtc = GtConfig { out_dim: 1000, ..GtConfig::default() };
    let p = stream_sketch(&gtc, StreamId::new(StreamKind::Fv1, 0), 54_528).unwrap();
    assert_eq!(apply_sketch(&p, &fv[..54_528]).unwrap().len(), 1000);
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Test accuracy of HAF-only and hallucinated models on one dataset.
fn accuracies(gen: &GenConfig) -> (f64, f64) {
    let ds = gen_dataset(gen).unwrap();
    let dicts = fit_dictionaries(&ds, &DictConfig::default()).unwrap();
    let gt = build_ground_truth(&ds, &dicts, &GtConfig::default()).unwrap();
    let train_cfg = TrainConfig { epochs: 25, lr: 1e-2, ..TrainConfig::default() };
    let run = |streams: Vec<StreamKind>| {
        let arch = ArchConfig {
            input: gen.shape,
            classes: gen.classes,
            streams,
            multiplicity: 1,
            feed: Feed::Hallucinated,
            haf: StreamConfig::fc(vec![8], 64),
            halluc: StreamConfig::fc(vec![8], 64),
            total_sketch_dim: None,
            total_sketch_seed: 0,
        };
        let ids = arch.stream_ids();
        let tr = ds.training_set(Some(&gt), Split::Train, &ids).unwrap();
        let te = ds.training_set(Some(&gt), Split::Test, &ids).unwrap();
        let (m, _) = train(&train_cfg, init_model(&arch, 0).unwrap(), &tr, &te).unwrap();
        hkit::eval::evaluate(&m, &te.blocks, &te.gt, &te.labels).unwrap().accuracy
    };
    (run(vec![]), run(vec![StreamKind::Fv1, StreamKind::Fv2, StreamKind::Bow]))
}

#[test]
fn descriptor_signal_orders_the_hallucination_gain() {
    let gaps: Vec<f64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&w| {
            let (haf, hall) = accuracies(&GenConfig { descriptor_signal: w, ..GenConfig::default() });
            hall - haf
        })
        .collect();
    assert!(gaps[0] < gaps[1] && gaps[1] < gaps[2], "gaps {gaps:?}");
    // without descriptor signal the two configurations differ by less than
    // two standard errors of a difference of accuracies on 200 test clips
    let se = (2.0 * 0.25 / 200.0f64).sqrt();
    assert!(gaps[0].abs() < 2.0 * se, "gaps {gaps:?}");
}
