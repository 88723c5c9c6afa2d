//! MLP classifier, losses, optimizer, training loop and evaluation.

mod checkpoint;
mod eval;
mod loss;
mod model;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MANIFEST};
pub use eval::{compute_mce, evaluate, Evaluator, InferenceMode};
pub use loss::{cross_entropy_soft, log_sum_exp, pi_consistency_loss, softmax, softmax_backward};
pub use model::{Dense, ForwardCache, Gradients, Model};
pub use optim::{sgd_momentum_step, OptimizerConfig};
pub use train::{
    batch_gradient, consistency_gradient, sample_gradient, train, EpochMetrics, SslConfig, TrainData, Trained,
};
