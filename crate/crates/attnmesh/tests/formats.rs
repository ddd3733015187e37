use std::path::Path;

use attnmesh::checkpoint::{decode_params, encode_params, load_model, save_model, ModelKind, Sidecar};
use attnmesh::dataset::{self, blob_size, decode_sample, encode_sample, params_json, read_dataset, write_dataset, MANIFEST};
use attnmesh::report::{CostReport, ReportDoc};
use attnmesh::topo::{load_topology, resolve_topology, save_topology, topology_hash};
use attnmesh::Error;
use attnmesh_core::cost::{count_macs, Variant};
use attnmesh_core::eval::evaluate_predictions;
use attnmesh_core::synth::SynthConfig;
use attnmesh_core::{LandmarkSet, Model, ModelConfig, Rng, Topology};

fn small_set(n: usize) -> Vec<attnmesh_core::synth::Sample> {
    dataset::generate(7, n, &SynthConfig::default(), &Topology::desk(), 1)
}

#[test]
fn sample_blob_round_trip() {
    for s in small_set(5) {
        let bytes = encode_sample(&s);
        assert_eq!(bytes.len(), blob_size(64, s.landmarks.len(), params_json(&s.params).len()));
        let back = decode_sample(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.image, s.image);
        assert_eq!(back.landmarks, s.landmarks);
        assert_eq!(back.params, s.params);
    }
}

#[test]
fn truncated_or_corrupt_blobs_are_rejected() {
    let s = &small_set(1)[0];
    let bytes = encode_sample(s);
    for cut in [0, 3, 15, 100, bytes.len() - 1] {
        assert!(decode_sample(&bytes[..cut], Path::new("mem")).is_err(), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_sample(&bad, Path::new("mem")).is_err());
    let mut longer = bytes;
    longer.push(0);
    assert!(decode_sample(&longer, Path::new("mem")).is_err());
}

#[test]
fn predicted_byte_count_over_2000_samples_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dataset::generate(0, 2000, &SynthConfig::default(), &Topology::desk(), 1);
    write_dataset(dir.path(), &samples, &Topology::desk(), None).unwrap();
    let predicted: u64 = samples
        .iter()
        .map(|s| blob_size(64, 78, params_json(&s.params).len()) as u64)
        .sum();
    let mut actual = 0u64;
    for i in 0..2000 {
        actual += std::fs::metadata(dataset::sample_path(dir.path(), i)).unwrap().len();
    }
    assert_eq!(actual, predicted);
}

#[test]
fn dataset_round_trip_and_tamper_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let samples = small_set(4);
    let topo = Topology::desk();
    write_dataset(dir.path(), &samples, &topo, None).unwrap();
    let d = read_dataset(dir.path(), Some(&topo)).unwrap();
    assert_eq!(d.samples.len(), 4);
    assert_eq!(d.samples[2].landmarks, samples[2].landmarks);

    assert!(matches!(read_dataset(dir.path(), Some(&Topology::full())), Err(Error::Mismatch(_))));

    let mpath = dir.path().join(MANIFEST);
    let text = std::fs::read_to_string(&mpath).unwrap();
    let hash = topology_hash(&topo);
    let tampered = text.replace(&hash, &"0".repeat(hash.len()));
    assert_ne!(text, tampered);
    std::fs::write(&mpath, tampered).unwrap();
    assert!(read_dataset(dir.path(), None).is_err());

    std::fs::write(&mpath, &text).unwrap();
    let blob = dataset::sample_path(dir.path(), 1);
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[200] ^= 1;
    std::fs::write(&blob, bytes).unwrap();
    assert!(read_dataset(dir.path(), None).is_err());
}

#[test]
fn generation_ignores_thread_count() {
    let a = dataset::generate(3, 9, &SynthConfig::default(), &Topology::desk(), 1);
    let b = dataset::generate(3, 9, &SynthConfig::default(), &Topology::desk(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.landmarks, y.landmarks);
    }
}

#[test]
fn checkpoint_round_trip_and_topology_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::desk();
    let model = Model::build(cfg.clone(), Topology::desk(), &mut Rng::new(5)).unwrap();
    let path = dir.path().join("m.amck");
    save_model(&path, &model, &Sidecar::new(ModelKind::Unified, &cfg, &Topology::desk())).unwrap();
    let (back, sc) = load_model(&path, Some(&Topology::desk())).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(sc.kind, ModelKind::Unified);
    assert!(matches!(load_model(&path, Some(&Topology::full())), Err(Error::Mismatch(_))));

    let bytes = encode_params(&model.params);
    assert_eq!(decode_params(&bytes, &path).unwrap(), model.params);
    assert!(decode_params(&bytes[..bytes.len() - 3], &path).is_err());
    assert!(decode_params(&bytes[..7], &path).is_err());

    let sc_path = attnmesh::checkpoint::sidecar_path(&path);
    let text = std::fs::read_to_string(&sc_path).unwrap();
    let hash = topology_hash(&Topology::desk());
    std::fs::write(&sc_path, text.replace(&hash, &"f".repeat(hash.len()))).unwrap();
    assert!(load_model(&path, None).is_err());
}

#[test]
fn topology_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.json");
    save_topology(&Topology::full(), &p).unwrap();
    let t = load_topology(&p).unwrap();
    assert_eq!(topology_hash(&t), topology_hash(&Topology::full()));
    assert_eq!(t.unified_count(), 478);
    let by_name = resolve_topology(Some(p.to_str().unwrap())).unwrap();
    assert_eq!(by_name.unified_count(), 478);
    assert_eq!(resolve_topology(None).unwrap().unified_count(), 78);
}

fn offset_report() -> ReportDoc {
    let topo = Topology::desk();
    let gts: Vec<LandmarkSet> = small_set(3).into_iter().map(|s| s.landmarks).collect();
    let preds: Vec<LandmarkSet> = gts
        .iter()
        .map(|g| LandmarkSet::new(g.points.iter().map(|p| [p[0] + 0.01, p[1], p[2]]).collect()))
        .collect();
    let mut doc = ReportDoc::default();
    for v in Variant::ALL {
        doc.evals.push(evaluate_predictions(v, "offset", &preds, &gts, &topo).unwrap());
    }
    let macs = count_macs(&ModelConfig::desk(), &topo).unwrap();
    doc.cost = Some(CostReport::new("desk", macs, Vec::new()));
    doc
}

#[test]
fn report_json_round_trip_is_byte_identical() {
    let doc = offset_report();
    let text = doc.to_json();
    let back = ReportDoc::from_json(&text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.to_json(), text);

    let empty = ReportDoc::default();
    let t = empty.to_json();
    let e = ReportDoc::from_json(&t).unwrap();
    assert!(e.evals.is_empty() && e.cost.is_none());
    assert_eq!(e.to_json(), t);

    let future = t.replace("\"schema_version\": 1", "\"schema_version\": 99");
    assert!(ReportDoc::from_json(&future).is_err());
}

#[test]
fn markdown_tables_have_the_expected_rows_and_columns() {
    let md = offset_report().to_markdown();
    assert!(md.contains("| Model | All | Lips | Eyes |"), "{md}");
    for row in ["| Mesh |", "| Cascade |", "| Attention mesh |"] {
        assert!(md.contains(row), "missing {row} in\n{md}");
    }
    assert!(md.contains("**PASS**"), "{md}");
    assert!(md.contains("16.6/22.4 = 0.741"), "{md}");
}
