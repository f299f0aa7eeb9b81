use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::value::RawValue;
use serde_json::Value;
use streetdcm::data::{ZoneEntry, ZoneMap};
use streetdcm::model::{reported_params, ModelParams};
use streetdcm::semantics::{Attribute, SemanticVector};
use streetdcm::simulator::{simulate_embeddings, simulate_semantics, SyntheticSpec};
use streetdcm::spatial::{
    aggregate_zones, decompose_all, join_geojson, joint_distribution_stats, pearson, score_images,
    write_image_scores, write_zone_scores, GroupMeans, ZoneReport,
};

struct City {
    params: ModelParams,
    embeddings: streetdcm::data::EmbeddingStore,
    zones: ZoneMap,
}

fn city(n_images: usize, n_zones: usize, seed: u64) -> City {
    let spec = SyntheticSpec { sigma_z: 0.05, seed, ..SyntheticSpec::default() };
    let (ids, labels) = simulate_semantics(&spec, n_images).unwrap();
    let emb = simulate_embeddings(&spec, &labels).unwrap();
    let mut params = spec.true_params(&emb.encoder).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut params.beta_res {
        *b = rng.random_range(-0.2..0.2);
    }
    let zones = ids
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 97 != 0)
        .map(|(_, id)| {
            let zone_id = format!("Z{:05}", rng.random_range(0..n_zones));
            (id.clone(), ZoneEntry { zone_id, lon: None, lat: None })
        })
        .collect();
    City { params, embeddings: emb.store, zones }
}

#[test]
fn zero_model_scores_zero() {
    let c = city(50, 5, 1);
    let zero = ModelParams::new(c.params.k(), vec![]);
    let scores = score_images(&zero, &c.embeddings, true).unwrap();
    assert!(scores.iter().all(|s| s.utility.v_total == 0.0));
}

#[test]
fn score_is_semantic_plus_residual() {
    let c = city(200, 5, 2);
    let scores = score_images(&c.params, &c.embeddings, true).unwrap();
    for s in &scores {
        let z = c.embeddings.get(&s.image_id).unwrap();
        let raw: Vec<f64> = (0..10)
            .map(|t| c.params.head.bias()[t] + (0..z.len()).map(|k| c.params.head.weight(t, k) * z[k] as f64).sum::<f64>())
            .collect();
        let sem = SemanticVector::from_prediction(&raw.try_into().unwrap());
        let v_sem: f64 = Attribute::ALL.iter().map(|&a| c.params.beta_sem[a.index()] * sem.get(a)).sum();
        let v_res: f64 = c.params.beta_res.iter().zip(z).map(|(b, &x)| b * x as f64).sum();
        assert!((s.utility.v_total - (v_sem + v_res)).abs() < 1e-12);
        assert_eq!(s.utility.v_numeric, 0.0);
    }
    let without = score_images(&c.params, &c.embeddings, false).unwrap();
    assert!(without.iter().all(|s| s.utility.v_residual == 0.0));
}

#[test]
fn decomposition_identity_on_ten_thousand_zones() {
    let c = city(60_000, 10_000, 3);
    let scores = score_images(&c.params, &c.embeddings, true).unwrap();
    let agg = aggregate_zones(&scores, &c.zones, 5).unwrap();
    assert!(agg.zones.len() > 9_900);
    let decomps = decompose_all(&agg, &c.params);
    for d in &decomps {
        assert!(d.identity_error().abs() <= 1e-9, "{}: {}", d.zone_id, d.identity_error());
        assert_eq!(d.delta(Attribute::Building), 0.0);
    }
    assert!(agg.zones.iter().any(|z| z.low_confidence));
    assert_eq!(agg.unmapped.len(), 60_000usize.div_ceil(97));
}

#[test]
fn zone_means_match_an_independent_group_by() {
    let c = city(5_000, 40, 4);
    let scores = score_images(&c.params, &c.embeddings, true).unwrap();
    let agg = aggregate_zones(&scores, &c.zones, 5).unwrap();

    let total: usize = agg.zones.iter().map(|z| z.means.image_count).sum();
    let weighted = agg
        .zones
        .iter()
        .map(|z| z.means.mean_utility * z.means.image_count as f64)
        .sum::<f64>()
        / total as f64;
    assert_eq!(total, agg.citywide.image_count);
    assert!((weighted - agg.citywide.mean_utility).abs() <= 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("image_scores.csv");
    let zone_csv = dir.path().join("zone_scores.csv");
    write_image_scores(&images, &scores, Some(&c.zones)).unwrap();
    write_zone_scores(&zone_csv, &agg.zones).unwrap();

    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut r = csv::Reader::from_path(&images).unwrap();
    for row in r.records() {
        let row = row.unwrap();
        if row[1].is_empty() {
            continue;
        }
        let e = groups.entry(row[1].to_string()).or_default();
        e.0 += row[2].parse::<f64>().unwrap();
        e.1 += 1;
    }
    let mut r = csv::Reader::from_path(&zone_csv).unwrap();
    let mut seen = 0;
    for row in r.records() {
        let row = row.unwrap();
        let (sum, n) = groups[&row[0]];
        assert_eq!(row[1].parse::<usize>().unwrap(), n);
        assert!((row[2].parse::<f64>().unwrap() - sum / n as f64).abs() <= 1e-12);
        seen += 1;
    }
    assert_eq!(seen, groups.len());
}

#[test]
fn aggregation_ignores_stream_order() {
    let c = city(2_000, 30, 5);
    let scores = score_images(&c.params, &c.embeddings, true).unwrap();
    let a = aggregate_zones(&scores, &c.zones, 5).unwrap();
    let mut shuffled = scores.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(aggregate_zones(&shuffled, &c.zones, 5).unwrap(), a);
}

fn report(id: &str, utility: f64, attrs: [f64; 11]) -> ZoneReport {
    ZoneReport {
        zone_id: id.into(),
        means: GroupMeans { image_count: 10, mean_utility: utility, mean_attributes: attrs, mean_residual: 0.0 },
        median_utility: utility,
        low_confidence: false,
    }
}

fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn correlations_of_independent_columns_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let zones: Vec<ZoneReport> = (0..10_000)
        .map(|i| report(&format!("z{i}"), rng.random(), std::array::from_fn(|_| rng.random())))
        .collect();
    let stats = joint_distribution_stats(&zones).unwrap();
    let n = stats.variables.len();
    for i in 0..n {
        for j in 0..n {
            let r = stats.correlation[i][j];
            if stats.variables[i] == "mean_residual" || stats.variables[j] == "mean_residual" {
                assert_eq!(r, None);
            } else if i == j {
                assert_eq!(r, Some(1.0));
            } else {
                assert!(r.unwrap().abs() < 0.05);
            }
        }
    }
    let trees = stats.summary.iter().find(|s| s.name == "mean_p_trees").unwrap();
    assert!(trees.min >= 0.0 && trees.max < 1.0 && (trees.mean - 0.5).abs() < 0.02);
}

#[test]
fn pearson_matches_the_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-1.0..1.0)).collect();
        assert!((pearson(&x, &y).unwrap() - textbook_pearson(&x, &y)).abs() < 1e-10);
    }
}

#[test]
fn too_few_zones_for_statistics() {
    let zones = vec![report("a", 0.0, [0.0; 11]), report("b", 1.0, [0.0; 11])];
    assert!(joint_distribution_stats(&zones).is_err());
}

const POLYGONS: &str = r#"{
  "type": "FeatureCollection",
  "crs": { "type": "name", "properties": { "name": "urn:ogc:def:crs:EPSG::28992" } },
  "features": [
    { "type": "Feature", "properties": { "zone_id": "3011" },
      "geometry": { "type": "Polygon", "coordinates": [[[92000.125, 437000.5], [92500.0, 437000.5], [92500.0, 437400.0000000001], [92000.125, 437000.5]]] } },
    { "type": "Feature", "properties": { "zone_id": "3012", "pc4": 3012 },
      "geometry": {"type":"Polygon","coordinates":[[[1e5,4.37e5],[100300,437000],[100300,437300],[1e5,4.37e5]]]} },
    { "type": "Feature", "id": 7, "properties": { "zone_id": "3013" },
      "geometry": { "type": "MultiPolygon", "coordinates": [[[[0,0],[1,0],[1,1],[0,0]]]] } }
  ]
}"#;

fn geometries(text: &str) -> Vec<String> {
    #[derive(serde::Deserialize)]
    struct Doc<'a> {
        #[serde(borrow)]
        features: Vec<BTreeMap<String, &'a RawValue>>,
    }
    let d: Doc = serde_json::from_str(text).unwrap();
    d.features.iter().map(|f| f["geometry"].get().to_string()).collect()
}

#[test]
fn geojson_join_keeps_geometry_bytes() {
    let p = reported_params(1);
    let zones = vec![
        report("3011", 0.4, [0.1; 11]),
        report("3012", 0.1, [0.2; 11]),
        report("3013", -0.2, [0.3; 11]),
    ];
    let agg = streetdcm::spatial::Aggregation {
        zones: zones.clone(),
        citywide: GroupMeans { image_count: 30, mean_utility: 0.1, mean_attributes: [0.2; 11], mean_residual: 0.0 },
        unmapped: vec![],
        min_zone_count: 5,
    };
    let joined = join_geojson(POLYGONS, &zones, &decompose_all(&agg, &p)).unwrap();
    assert_eq!((joined.features, joined.joined), (3, 3));
    assert!(joined.zones_missing_geometry.is_empty());

    let doc: Value = serde_json::from_str(&joined.text).unwrap();
    for (f, z) in doc["features"].as_array().unwrap().iter().zip(&zones) {
        assert_eq!(f["properties"]["mean_utility"], z.means.mean_utility);
        assert!(f["properties"]["delta_p_trees"].is_number());
    }
    assert_eq!(doc["features"][2]["id"], 7);
    assert_eq!(doc["crs"]["properties"]["name"], "urn:ogc:def:crs:EPSG::28992");
    assert_eq!(geometries(&joined.text), geometries(POLYGONS));
    assert!(geometries(POLYGONS)[1].contains("[1e5,4.37e5]"));
}
