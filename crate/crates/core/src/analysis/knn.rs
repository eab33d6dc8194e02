use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormStats, Region};
use crate::error::{Error, Result};
use crate::loss::domain_matrix;
use crate::numerics::Tensor;

/// Nearest training point for every query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub region: Vec<Region>,
    /// Row of the nearest training point.
    pub index: Vec<usize>,
    /// Euclidean distance to it.
    pub distance: Vec<f64>,
    /// `(lat, lon)` of each query, when known.
    pub coords: Vec<(f64, f64)>,
}

/// Exact 1-nearest-neighbour search by Euclidean distance. Ties go to the
/// lowest region id, then the lowest training row.
pub fn knn_features(train: &Tensor, train_regions: &[Region], test: &Tensor) -> Result<KnnResult> {
    let (n, f) = train.dims2()?;
    let (m, g) = test.dims2()?;
    if n == 0 {
        return Err(Error::Empty("kNN training set"));
    }
    if f != g {
        return Err(Error::Shape {
            op: "knn",
            lhs: train.shape().to_vec(),
            rhs: test.shape().to_vec(),
        });
    }
    if train_regions.len() != n {
        return Err(Error::Invalid(format!("{} regions for {n} training rows", train_regions.len())));
    }
    let mut result = KnnResult {
        region: Vec::with_capacity(m),
        index: Vec::with_capacity(m),
        distance: Vec::with_capacity(m),
        coords: Vec::new(),
    };
    for q in test.data().chunks_exact(f.max(1)).take(m) {
        let mut best = (f64::INFINITY, Region::MAX, usize::MAX);
        for (j, row) in train.data().chunks_exact(f.max(1)).take(n).enumerate() {
            let d2: f64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            let cand = (d2, train_regions[j], j);
            if cand.0 < best.0 || (cand.0 == best.0 && (cand.1, cand.2) < (best.1, best.2)) {
                best = cand;
            }
        }
        result.distance.push(best.0.sqrt());
        result.region.push(best.1);
        result.index.push(best.2);
    }
    Ok(result)
}

/// 1-NN over z-scored climate variables `vars`, queries carry their coordinates.
pub fn knn_climate(
    dataset: &Dataset,
    train: &[usize],
    test: &[usize],
    stats: &NormStats,
    vars: Range<usize>,
) -> Result<KnnResult> {
    let a = domain_matrix(dataset, train, stats, vars.clone())?;
    let b = domain_matrix(dataset, test, stats, vars)?;
    let regions: Vec<Region> = train.iter().map(|&i| dataset.samples[i].region).collect();
    let mut r = knn_features(&a, &regions, &b)?;
    r.coords = test.iter().map(|&i| (dataset.samples[i].lat, dataset.samples[i].lon)).collect();
    Ok(r)
}
