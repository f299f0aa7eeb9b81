use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streetdcm::data::{
    load_choice_data, load_embeddings, load_semantic_labels, load_zone_map, validate_dataset,
    write_choice_data, write_semantic_labels, write_zone_map, EmbeddingStore, Issue,
};
use streetdcm::simulator::{simulate, SyntheticSpec};
use streetdcm::Attribute;

fn small() -> streetdcm::simulator::SyntheticDataset {
    simulate(&SyntheticSpec { n_observations: 10, seed: 11, ..SyntheticSpec::default() }).unwrap()
}

/// Rewrites a CSV file with its data rows in a shuffled order.
fn shuffle_rows(src: &Path, dst: &Path, seed: u64) {
    let text = std::fs::read_to_string(src).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1..].shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    std::fs::write(dst, lines.join("\n") + "\n").unwrap();
}

#[test]
fn twenty_row_choice_file_round_trips() {
    let d = small();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    write_choice_data(&first, &d.choices).unwrap();
    let text = std::fs::read_to_string(&first).unwrap();
    assert_eq!(text.lines().count(), 21);

    let loaded = load_choice_data(&first).unwrap();
    assert_eq!(loaded, d.choices);
    let second = dir.path().join("b.csv");
    write_choice_data(&second, &loaded).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn thousand_wide_embeddings_round_trip_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows: Vec<(String, Vec<f32>)> = (0..1000)
        .map(|i| (format!("img{i:06}"), (0..768).map(|_| rng.random_range(-3.0f32..3.0)).collect()))
        .collect();
    let store = EmbeddingStore::from_rows(768, rows.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (bin, idx) = (dir.path().join("e.bin"), dir.path().join("e.idx.csv"));
    store.write(&bin, &idx).unwrap();
    assert_eq!(std::fs::metadata(&bin).unwrap().len(), 16 + 1000 * 768 * 4);

    let loaded = load_embeddings(&bin, &idx).unwrap();
    assert_eq!(loaded, store);
    for (id, row) in &rows {
        let got = loaded.get(id).unwrap();
        assert!(got.iter().zip(row).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let (bin2, idx2) = (dir.path().join("f.bin"), dir.path().join("f.idx.csv"));
    loaded.write(&bin2, &idx2).unwrap();
    assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(&bin2).unwrap());
    assert_eq!(std::fs::read(&idx).unwrap(), std::fs::read(&idx2).unwrap());
}

#[test]
fn label_and_zone_files_round_trip() {
    let d = small();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_semantic_labels(&p.join("s1.csv"), &d.labels).unwrap();
    let (labels, report) = load_semantic_labels(&p.join("s1.csv")).unwrap();
    assert!(report.renormalised.is_empty());
    write_semantic_labels(&p.join("s2.csv"), &labels).unwrap();
    assert_eq!(std::fs::read(p.join("s1.csv")).unwrap(), std::fs::read(p.join("s2.csv")).unwrap());

    write_zone_map(&p.join("z1.csv"), &d.zones).unwrap();
    let zones = load_zone_map(&p.join("z1.csv")).unwrap();
    assert_eq!(zones, d.zones);
    write_zone_map(&p.join("z2.csv"), &zones).unwrap();
    assert_eq!(std::fs::read(p.join("z1.csv")).unwrap(), std::fs::read(p.join("z2.csv")).unwrap());
}

#[test]
fn loading_ignores_row_order() {
    let d = small();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_choice_data(&p.join("c.csv"), &d.choices).unwrap();
    write_semantic_labels(&p.join("s.csv"), &d.labels).unwrap();
    write_zone_map(&p.join("z.csv"), &d.zones).unwrap();
    for seed in 0..5 {
        shuffle_rows(&p.join("c.csv"), &p.join("c2.csv"), seed);
        shuffle_rows(&p.join("s.csv"), &p.join("s2.csv"), seed);
        shuffle_rows(&p.join("z.csv"), &p.join("z2.csv"), seed);
        let choices = load_choice_data(&p.join("c2.csv")).unwrap();
        assert_eq!(choices.by_id(), d.choices.by_id());
        assert_eq!(load_semantic_labels(&p.join("s2.csv")).unwrap().0, d.labels);
        assert_eq!(load_zone_map(&p.join("z2.csv")).unwrap(), d.zones);
    }
}

fn label_file(dir: &Path, proportions: &[f64; 9]) -> std::path::PathBuf {
    let path = dir.join("labels.csv");
    let row: Vec<String> = proportions.iter().map(f64::to_string).collect();
    std::fs::write(
        &path,
        format!(
            "image_id,car_count,p_car,p_building,p_grass,p_road,p_sky,p_trees,p_plants,p_fence,p_water\nimg,2,{}\n",
            row.join(",")
        ),
    )
    .unwrap();
    path
}

#[test]
fn coverage_rules_for_label_files() {
    let dir = tempfile::tempdir().unwrap();

    let partial = [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05];
    let (s, r) = load_semantic_labels(&label_file(dir.path(), &partial)).unwrap();
    assert!((s["img"].get(Attribute::Unsegmented) - 0.2).abs() < 1e-12);
    assert!(r.renormalised.is_empty());

    let over = [0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.115];
    let (s, r) = load_semantic_labels(&label_file(dir.path(), &over)).unwrap();
    let v = s["img"];
    assert!((v.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(v.unsegmented, 0.0);
    assert!((v.get(Attribute::Car) - 0.2 / 1.015).abs() < 1e-12);
    assert_eq!(r.renormalised, vec!["img".to_string()]);

    let gross = [0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!(load_semantic_labels(&label_file(dir.path(), &gross)).is_err());
}

#[test]
fn partial_labels_block_only_the_head_phase() {
    let mut d = simulate(&SyntheticSpec { n_observations: 200, seed: 13, ..SyntheticSpec::default() }).unwrap();
    let images: Vec<String> = d.choices.image_ids().iter().map(|s| s.to_string()).collect();
    let drop = images.len() / 10;
    for id in &images[..drop] {
        d.labels.shift_remove(id);
    }
    let report = validate_dataset(&d.choices, &d.embeddings, Some(&d.labels), Some(&d.zones), Some(&d.split));
    assert!(!report.trainable_phase1);
    assert!(report.trainable_phase23);
    let missing = report.issues.iter().filter(|i| matches!(i, Issue::MissingLabel(_))).count();
    assert_eq!(missing, drop);
    assert_eq!(report.issues.len(), drop);
}
