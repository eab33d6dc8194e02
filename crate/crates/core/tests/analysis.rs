mod common;

use arcdog::analysis::{argmax_rows, compute_metrics, knn_climate, ramp, Field, Palette, REGION_PALETTE};
use arcdog::data::{ClimateMode, NormStats, Split, SplitPlan};
use arcdog::numerics::Tensor;
use common::{brute_knn, landsat_dataset};
use proptest::prelude::*;

#[test]
fn eight_sample_example() {
    let labels = [0, 0, 0, 0, 1, 1, 2, 2];
    let preds = [0, 0, 1, 2, 1, 1, 2, 0];
    let m = compute_metrics(&preds, &labels, 3).unwrap();
    assert_eq!(m.overall, 0.625);
    assert!((m.macro_accuracy - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(m.per_class, vec![Some(0.5), Some(1.0), Some(0.5)]);
    assert_eq!(m.confusion[0], vec![2, 1, 1]);
}

#[test]
fn absent_classes_are_skipped_in_macro() {
    let m = compute_metrics(&[0, 1, 1], &[0, 1, 0], 4).unwrap();
    assert_eq!(m.per_class[2], None);
    assert_eq!(m.macro_accuracy, 0.75);
}

#[test]
fn argmax_takes_first_maximum() {
    assert_eq!(argmax_rows(&[1.0, 3.0, 3.0, 0.0, 0.0, -1.0], 3), vec![1, 0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_direct_counts(pairs in prop::collection::vec((0usize..25, 0usize..25), 1..400)) {
        let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = compute_metrics(&preds, &labels, 25).unwrap();
        let hits = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert_eq!(m.overall, hits as f64 / pairs.len() as f64);
        let mut recalls = Vec::new();
        for k in 0..25 {
            let of_k: Vec<_> = pairs.iter().filter(|p| p.1 == k).collect();
            if !of_k.is_empty() {
                recalls.push(of_k.iter().filter(|p| p.0 == k).count() as f64 / of_k.len() as f64);
            }
        }
        let macro_acc = recalls.iter().sum::<f64>() / recalls.len() as f64;
        prop_assert!((m.macro_accuracy - macro_acc).abs() < 1e-12);
        prop_assert_eq!(m.confusion.iter().flatten().sum::<usize>(), pairs.len());
    }

    #[test]
    fn ramp_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (p, q) = (ramp(lo, 0.0, 1.0), ramp(hi, 0.0, 1.0));
        prop_assert!(p[0] <= q[0] && p[2] >= q[2]);
        prop_assert_eq!(p[1], 0);
    }
}

#[test]
fn temperature_knn_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let ds = landsat_dataset(24, 3, dir.path());
    let split = Split::new(&ds, &SplitPlan { val_fraction: 0.0, ..SplitPlan::new(2, 0) }).unwrap();
    let stats = NormStats::fit(&ds, &split.train).unwrap();
    let vars = ClimateMode::Temperature.variables(&ds.schema);
    assert_eq!(vars.len(), 11);
    let ours = knn_climate(&ds, &split.train, &split.test, &stats, vars.clone()).unwrap();

    let z = |idx: &[usize]| {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| vars.clone().map(|v| (ds.samples[i].climate[v] - stats.climate_mean[v]) / stats.climate_std[v]).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        Tensor::from_rows(&refs)
    };
    let regions: Vec<u8> = split.train.iter().map(|&i| ds.samples[i].region).collect();
    let brute = brute_knn(&z(&split.train), &regions, &z(&split.test));
    assert_eq!(ours.coords.len(), split.test.len());
    for (q, (r, j, d)) in brute.iter().enumerate() {
        assert_eq!((ours.region[q], ours.index[q]), (*r, *j));
        assert!((ours.distance[q] - d).abs() < 1e-12);
        assert_ne!(ours.region[q], 2);
    }
}

#[test]
fn heatmap_csv_round_trip_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let coords: Vec<(f64, f64)> = (0..12).map(|i| (25.0 + (i / 4) as f64 * 0.1, -100.0 + (i % 4) as f64 / 3.0)).collect();
    let values: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() / 7.0).collect();
    let field = Field::new(&coords, &values).unwrap();
    let path = dir.path().join("f.csv");
    field.write_csv(&path).unwrap();
    let back = Field::read_csv(&path).unwrap();
    assert_eq!(back, field);
    assert_eq!(back.to_csv(), field.to_csv());
    assert_eq!(back.raster(Palette::Ramp).unwrap(), field.raster(Palette::Ramp).unwrap());
}

#[test]
fn raster_layout_and_palettes() {
    let f = Field::new(&[(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)], &[0.0, 1.0, 2.0, 3.0]).unwrap();
    let r = f.raster(Palette::Ramp).unwrap();
    // north-west, north-east, south-west, south-east
    assert_eq!(r.pixel(0, 0), ramp(2.0, 0.0, 3.0));
    assert_eq!(r.pixel(0, 1), [255, 0, 0]);
    assert_eq!(r.pixel(1, 0), [0, 0, 255]);
    assert_eq!(r.pixel(1, 1), ramp(1.0, 0.0, 3.0));
    let regions = f.raster(Palette::Regions).unwrap();
    assert_eq!(regions.pixel(1, 1), REGION_PALETTE[1]);

    let flat = Field::new(&[(0.0, 0.0), (1.0, 1.0)], &[2.5, 2.5]).unwrap().raster(Palette::Ramp).unwrap();
    assert_eq!(flat.pixel(1, 0), flat.pixel(0, 1));

    let mut ppm = Vec::new();
    r.write_ppm(&mut ppm).unwrap();
    assert!(ppm.starts_with(b"P6\n2 2\n255\n"));
    assert_eq!(ppm.len(), 11 + 12);
}

#[test]
fn malformed_heatmap_csv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "lat,lon,value\n1,2,3\n1,2\n").unwrap();
    let err = Field::read_csv(&path).unwrap_err();
    assert!(err.to_string().contains(":3:"), "{err}");
}
