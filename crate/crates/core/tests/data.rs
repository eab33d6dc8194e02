mod common;

use std::io::Write;

use arcdog::data::{
    csv_header, generate_synthetic, ingest_csv, load_dataset, make_model_input, save_dataset, write_csv, ClimateMode,
    Dataset, DomainField, NormStats, Schema, Split, SplitPlan, SyntheticSpec, CURATED_CLASSES,
};
use arcdog::{Error, ErrorKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn csv_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(ds, &mut out).unwrap();
    out
}

/// Landsat-schema dataset with cloud gaps, via the synthetic generator.
fn landsat_like(grid: usize, cloud: f64) -> Dataset {
    let mut ds = generate_synthetic(&SyntheticSpec {
        grid,
        domain_dim: 19,
        classes: 3,
        cloud,
        ..SyntheticSpec::default()
    })
    .unwrap();
    ds.schema = Schema::landsat();
    ds.classes = CURATED_CLASSES[..3].iter().map(|s| s.to_string()).collect();
    ds
}

fn write_file(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(body).unwrap();
    path
}

#[test]
fn csv_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let ds = landsat_like(12, 0.2);
    let first = csv_bytes(&ds);
    let back = ingest_csv(&write_file(&dir, "a.csv", &first)).unwrap();
    assert_eq!(csv_bytes(&back), first);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.missing, b.missing);
        assert_eq!(a.climate, b.climate);
        assert_eq!((a.lat, a.lon, a.region), (b.lat, b.lon, b.region));
        for ((x, y), m) in a.timeseries.iter().zip(&b.timeseries).zip(&a.missing) {
            if !m {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
    assert_eq!(back.imputed_cells, ds.imputed_cells);
}

#[test]
fn short_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let header = csv_header(&Schema::landsat());
    assert_eq!(header.len(), 94);
    let mut body = header.join(",") + "\n";
    let full: Vec<String> = (0..94)
        .map(|i| match i {
            0 => "40.0".into(),
            1 => "-100.0".into(),
            2 => "Corn".into(),
            _ => "0.5".into(),
        })
        .collect();
    body += &(full.join(",") + "\n");
    body += &(full[..93].join(",") + "\n");
    let err = ingest_csv(&write_file(&dir, "bad.csv", body.as_bytes())).unwrap_err();
    match &err {
        Error::Parse { line, .. } => assert_eq!(*line, 3),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains(":3:"));
    assert_eq!(err.kind(), ErrorKind::Data);
}

#[test]
fn one_empty_cell_is_imputed() {
    let dir = tempfile::tempdir().unwrap();
    let ds = landsat_like(6, 0.0);
    let text = String::from_utf8(csv_bytes(&ds)).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[5].split(',').collect();
    cells[3 + 9 * 2 + 4] = "";
    lines[5] = cells.join(",");
    let back = ingest_csv(&write_file(&dir, "gap.csv", (lines.join("\n") + "\n").as_bytes())).unwrap();
    assert_eq!(back.imputed_cells, 1);
    let s = &back.samples[4];
    assert!(s.missing[2 * 9 + 4]);
    assert_eq!(s.timeseries[2 * 9 + 4], back.stats.channel_mean[4]);
}

#[test]
fn unknown_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = landsat_like(4, 0.0);
    let text = String::from_utf8(csv_bytes(&ds)).unwrap().replacen(&ds.classes[0], "Moon Cheese", 1);
    // the header has no class names, so the first replacement hits a row
    let err = ingest_csv(&write_file(&dir, "label.csv", text.as_bytes())).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn train_split_standardizes_to_unit_scale() {
    let ds = generate_synthetic(&SyntheticSpec {
        grid: 40,
        cloud: 0.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let split = Split::new(&ds, &SplitPlan::new(1, 0)).unwrap();
    let stats = NormStats::fit(&ds, &split.train).unwrap();
    let x = make_model_input(&ds, &split.train, &stats, ClimateMode::All).unwrap();
    let (m, t, c) = x.dims3().unwrap();
    for ch in 0..c {
        let vals: Vec<f64> = (0..m * t).map(|i| x.data()[i * c + ch]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() < 1e-8, "channel {ch} mean {mean}");
        assert!((std - 1.0).abs() < 1e-6, "channel {ch} std {std}");
    }
}

fn label_shares(ds: &Dataset) -> Vec<Vec<f64>> {
    let k = ds.num_classes();
    (0..4u8)
        .map(|r| {
            let idx = ds.region_indices(r);
            let mut counts = vec![0.0; k];
            for &i in &idx {
                counts[ds.samples[i].label] += 1.0;
            }
            counts.iter().map(|c| c / idx.len() as f64).collect()
        })
        .collect()
}

/// Largest gap in any class share between two regions.
fn max_share_gap(ds: &Dataset) -> f64 {
    let shares = label_shares(ds);
    let mut gap = 0.0f64;
    for k in 0..ds.num_classes() {
        let col: Vec<f64> = shares.iter().map(|s| s[k]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        gap = gap.max(hi - lo);
    }
    gap
}

#[test]
fn no_drift_means_no_label_shift() {
    let ds = generate_synthetic(&SyntheticSpec {
        grid: 200,
        drift: 0.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    assert_eq!(ds.len(), 40_000);
    let gap = max_share_gap(&ds);
    assert!(gap < 0.03, "class share gap {gap}");
}

#[test]
fn drift_spreads_labels_across_regions() {
    let gap = |drift| {
        max_share_gap(
            &generate_synthetic(&SyntheticSpec {
                grid: 100,
                drift,
                ..SyntheticSpec::default()
            })
            .unwrap(),
        )
    };
    let (none, some, strong) = (gap(0.0), gap(1.0), gap(3.0));
    assert!(none < some && some < strong, "{none} {some} {strong}");
}

#[test]
fn domain_field_is_lipschitz_on_the_grid() {
    let spec = SyntheticSpec {
        grid: 60,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let field = DomainField::sample(
        spec.domain_dim,
        spec.harmonics,
        spec.max_frequency,
        &mut ChaCha8Rng::seed_from_u64(spec.seed),
    );
    // gradient bound per dimension, combined over dimensions
    let lip = field
        .dims
        .iter()
        .map(|hs| {
            hs.iter()
                .map(|h| h.amplitude.abs() * std::f64::consts::TAU * h.fx.hypot(h.fy))
                .sum::<f64>()
                .powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let step = 1.0 / spec.grid as f64;
    let g = spec.grid;
    let dist = |a: usize, b: usize| {
        let (u, v) = (&ds.samples[a].climate, &ds.samples[b].climate);
        u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let mut worst = 0.0f64;
    for row in 0..g {
        for col in 0..g {
            let i = row * g + col;
            if col + 1 < g {
                worst = worst.max(dist(i, i + 1));
            }
            if row + 1 < g {
                worst = worst.max(dist(i, i + g));
            }
        }
    }
    assert!(worst <= lip * step * (1.0 + 1e-9), "{worst} > {}", lip * step);
    // the stored climate is the field itself
    let (x, y) = ((0.5) / g as f64, (0.5) / g as f64);
    assert_eq!(ds.samples[0].climate, field.eval(x, y));
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticSpec {
        grid: 15,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let path = dir.path().join("ds.bin");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_seed_deterministic(seed in any::<u64>(), grid in 2usize..12) {
        let spec = SyntheticSpec { grid, seed, ..SyntheticSpec::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), grid * grid);
        prop_assert!(a.samples.iter().all(|s| (25.0..=49.0).contains(&s.lat) && (-124.0..=-67.0).contains(&s.lon)));
    }
}
