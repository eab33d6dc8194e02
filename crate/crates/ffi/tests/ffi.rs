use std::ffi::{CStr, CString};
use std::ptr;

use arcdog::model::{init_params, save_checkpoint, ModelConfig};
use arcdog::numerics::Tensor;
use arcdog_ffi::*;

fn last_error() -> String {
    let p = arcdog_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn least_squares_matches_hand_solution() {
    // rows [1,0], [0,1], [1,1] against [1,2,4]: Φ = [4/3, 7/3], residual ±1/3
    let theta = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let v = [1.0, 2.0, 4.0];
    let (mut r, mut t) = (0.0, 0.0);
    let mut phi = [0.0; 2];
    let s = unsafe { arcdog_pinv_least_squares(theta.as_ptr(), 3, 2, v.as_ptr(), 1, 0.0, &mut r, &mut t, phi.as_mut_ptr()) };
    assert_eq!(s, ArcdogStatus::Ok);
    assert!((r - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    assert!((t - 21f64.sqrt()).abs() < 1e-12);
    assert!((phi[0] - 4.0 / 3.0).abs() < 1e-12 && (phi[1] - 7.0 / 3.0).abs() < 1e-12);
}

#[test]
fn rank_deficiency_is_numerical() {
    let theta = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
    let v = [1.0, 0.0, 1.0];
    let (mut r, mut t) = (0.0, 0.0);
    let s = unsafe { arcdog_pinv_least_squares(theta.as_ptr(), 3, 2, v.as_ptr(), 1, 0.0, &mut r, &mut t, ptr::null_mut()) };
    assert_eq!(s, ArcdogStatus::Numerical);
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    let s = unsafe { arcdog_pinv_least_squares(ptr::null(), 3, 2, ptr::null(), 1, 0.0, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(s, ArcdogStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { arcdog_dataset_len(ptr::null()) }, 0);
    unsafe { arcdog_dataset_free(ptr::null_mut()) };
}

#[test]
fn knn_picks_nearest_and_breaks_ties_by_region() {
    let train = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let regions = [3u8, 2, 1];
    let test = [0.1, 0.0, 0.9, 1.0];
    let mut region = [9u8; 2];
    let mut index = [9usize; 2];
    let mut dist = [0.0; 2];
    let s = unsafe {
        arcdog_knn(train.as_ptr(), regions.as_ptr(), 3, test.as_ptr(), 2, 2, region.as_mut_ptr(), index.as_mut_ptr(), dist.as_mut_ptr())
    };
    assert_eq!(s, ArcdogStatus::Ok);
    assert_eq!(region, [3, 1]);
    assert_eq!(index, [0, 2]);
    assert!((dist[0] - 0.1).abs() < 1e-12 && (dist[1] - 0.1).abs() < 1e-12);
}

#[test]
fn synthetic_dataset_handle() {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { arcdog_dataset_synthetic(20, 3, &mut ds) }, ArcdogStatus::Ok);
    let n = unsafe { arcdog_dataset_len(ds) };
    assert!(n > 0 && n <= 400);
    let mut regions = vec![0u8; n];
    assert_eq!(unsafe { arcdog_dataset_regions(ds, regions.as_mut_ptr(), n) }, ArcdogStatus::Ok);
    assert!(regions.iter().all(|&r| r < 4));
    assert_eq!(unsafe { arcdog_dataset_regions(ds, regions.as_mut_ptr(), n - 1) }, ArcdogStatus::Usage);
    unsafe { arcdog_dataset_free(ds) };
}

#[test]
fn missing_dataset_file_is_data_error() {
    let path = CString::new("/nonexistent/arcdog/dataset.bin").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { arcdog_dataset_load(path.as_ptr(), &mut ds) }, ArcdogStatus::Data);
    assert!(ds.is_null());
}

#[test]
fn model_forward_matches_library() {
    let config = ModelConfig {
        input_channels: 3,
        timepoints: 4,
        feature_dim: 8,
        encoder_layers: 1,
        heads: 2,
        feedforward_dim: 16,
        num_classes: 5,
        ..ModelConfig::default()
    };
    let params = init_params(&config, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.ckpt");
    save_checkpoint(&params, &file).unwrap();

    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { arcdog_model_load(path.as_ptr(), &mut model) }, ArcdogStatus::Ok);
    let (mut t, mut c, mut k, mut f) = (0, 0, 0, 0);
    assert_eq!(unsafe { arcdog_model_dims(model, &mut t, &mut c, &mut k, &mut f) }, ArcdogStatus::Ok);
    assert_eq!((t, c, k, f), (4, 3, 5, 8));

    let batch = 2;
    let input: Vec<f64> = (0..batch * t * c).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut logits = vec![0.0; batch * k];
    let mut feats = vec![0.0; batch * f];
    let s = unsafe { arcdog_model_forward(model, input.as_ptr(), batch, logits.as_mut_ptr(), feats.as_mut_ptr()) };
    assert_eq!(s, ArcdogStatus::Ok);

    let x = Tensor::new(vec![batch, t, c], input).unwrap();
    let (want_logits, want_feats) = params.infer(&x).unwrap();
    assert_eq!(logits, want_logits.data());
    assert_eq!(feats, want_feats.data());
    unsafe { arcdog_model_free(model) };
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/arcdog.h")).unwrap();
    for name in ["arcdog_pinv_least_squares", "arcdog_knn", "arcdog_model_forward", "ARCDOG_STATUS_NUMERICAL"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(arcdog_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
