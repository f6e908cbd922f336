//! Training, evaluation and reporting around the classifier: OA/AA/Kappa,
//! an Adam training loop with best-validation selection, the sparsity-ratio
//! ablation grid and palette classification maps.

pub mod ablation;
pub mod adam;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod oracle;
pub mod render;
pub mod samples;
pub mod train;

pub use ablation::{ablation_grid, AblationCell, AblationTable, DEFAULT_RATIOS};
pub use error::{HarnessError, Result};
pub use eval::{evaluate, predict_all};
pub use metrics::MetricsReport;
pub use render::{render_map, ClassMap, PixelClassifier};
pub use samples::LabeledSet;
pub use train::{curve_csv, train, EpochRecord, TrainConfig, TrainEvent, TrainOutcome};
