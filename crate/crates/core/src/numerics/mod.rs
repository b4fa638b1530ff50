//! Dense numerics shared by every model component: seeded random streams,
//! Gaussian and categorical divergences, feed-forward layers with analytic
//! gradients, optimizers and a finite-difference gradient checker.

mod dist;
mod gradcheck;
mod layer;
mod optim;
mod rng;

pub use dist::{
    categorical_kl, categorical_kl_floored, cosine, dot, gaussian_kl, gaussian_kl_to_std, mse,
    norm, reparam_sample, reparam_with, sigmoid, softmax, softmax_in_place, softplus,
    softplus_inverse, PROB_FLOOR, SIMPLEX_TOL,
};
pub use gradcheck::{grad_check, grad_check_at, GradCheckReport, GRAD_CHECK_FLOOR};
pub use layer::{Activation, DenseLayer, LayerSpec, Mlp, MlpShape, Trace};
pub use optim::{Optimizer, OptimizerKind};
pub use rng::Rng;
