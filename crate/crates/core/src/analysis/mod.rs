//! Accuracy metrics, nearest-neighbour analyses and heatmap output.

mod heatmap;
mod knn;
mod metrics;

pub use heatmap::{emit_heatmap, ramp, Field, Palette, Raster, REGION_PALETTE};
pub use knn::{knn_climate, knn_features, KnnResult};
pub use metrics::{argmax_rows, compute_metrics, MetricsReport};
