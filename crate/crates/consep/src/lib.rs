//! Cycle-consistency training of a projection head on patch embeddings,
//! with a separability regularizer and surrounding analysis tools.
//!
//! The crate is organized around one objective: a palindrome cycle loss
//! that rewards temporal correspondence, plus a KL separability term that
//! keeps projected tokens close to their inputs. The modules provide
//!
//! - [`numerics`]: dense matrices, a Jacobi symmetric eigensolver, and
//!   Gaussian sampling utilities;
//! - [`data`]: synthetic patch-embedding corpora with controlled intra- and
//!   inter-video covariance, plus the corpus file format;
//! - [`projection`]: linear and one-hidden-layer projection heads with
//!   hand-rolled forward/backward passes and the checkpoint format;
//! - [`objective`]: the cycle loss, the KL regularizer, and their exact
//!   gradients;
//! - [`pea`]: sinusoidal positional encodings and their scale/crop
//!   augmentation, plus the shortcut probe;
//! - [`metrics`]: inter/intra-video distance metrics, the margin score, and
//!   cycle accuracy;
//! - [`trainer`]: AdamW training loop with warmup/cosine schedule and
//!   deterministic parallelism;
//! - [`theory`]: closed-form spectra of the idealized objective and
//!   numerical verification of the supporting results;
//! - [`gradcheck`]: randomized finite-difference validation of every
//!   analytic gradient.

mod bytesio;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod numerics;
pub mod objective;
pub mod pea;
pub mod projection;
pub mod theory;
pub mod trainer;

pub use data::{
    corpus_shape, generate_corpus, read_corpus, sample_pair, temporal_gap, write_corpus,
    CorpusShape, EmbeddingGrid, SyntheticModelSpec, VideoEmbeddingSequence,
};
pub use error::{Error, Result};
pub use gradcheck::{run_gradient_suite, GradCheckConfig, GradCheckReport};
pub use metrics::{evaluate_tradeoff, EvalOptions, TradeoffMetrics, DEFAULT_GAMMA};
pub use numerics::{sym_eig, DenseMatrix, SymEigResult};
pub use objective::{total_loss, LossReport, PalindromeLoss};
pub use pea::{pea_augment, read_grid, sinusoidal_grid, write_grid, PositionalGrid, ProbeSetting};
pub use projection::{
    init_linear, init_mlp, project_forward, read_checkpoint, write_checkpoint, NormMode,
    ProjectionParams, ProjectionVariant,
};
pub use theory::{
    delta_margin_closed_form, delta_margin_empirical, mean_eigenvalue_model_spec,
    mlp_product_spectrum_check, optimal_eigs_closed_form, optimize_surrogate_linear,
    spectral_report, SpectralReport, SurrogateMode,
};
pub use trainer::{
    load_config, train, EpochSnapshot, Parallelism, StepRecord, TrainConfig, TrainHistory,
};
