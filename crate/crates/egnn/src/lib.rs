//! # egnn
//!
//! A classical simulator and experiment harness for (ε,γ)-feedforward neural
//! networks: networks whose inner products are only computed approximately.
//! With probability at least `1 - γ`, every inner product estimate `s` of a
//! true value `v` satisfies `|s - v| <= max(ε|v|, ε)`.
//!
//! The crate provides:
//!
//! - exact feedforward / backpropagation / SGD machinery usable as a shadow
//!   ground truth ([`network`]),
//! - ℓ2 binary search trees for logarithmic updates and squared-magnitude
//!   index sampling ([`l2bst`]),
//! - all inner-product estimation strategies behind one `(ε,γ)` interface:
//!   exact, Gaussian noise, the classically-sampled amplitude-estimation
//!   distribution, and ℓ2-tree importance-sampling estimators ([`estimators`]),
//! - implicit weight storage as update histories with on-the-fly row/column
//!   reconstruction ([`implicit`]),
//! - noisy training and evaluation built from those pieces ([`training`]),
//! - R-factor telemetry and the quantum / quantum-inspired / classical cost
//!   model ([`telemetry`]),
//! - dataset ingestion, run configs and the command implementations behind
//!   the `egnn` binary ([`data`], [`config`], [`runner`]).
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example bst_sampling            # ℓ2-BST updates and sampling
//! cargo run --release --example ripe_demo               # amplitude-estimation sampler
//! cargo run --release --example dequantized_estimation  # tree-based inner products
//! cargo run --release --example implicit_weights        # update-history weight storage
//! cargo run --release --example train_iris              # noisy training on Iris
//! cargo run --release --example train_mnist -- data/mnist  # noisy training on MNIST
//! cargo run --release --example cost_model              # running-time comparison
//! ```
//!
//! The thin `egnn` binary exposes the same capabilities as the subcommands
//! `train`, `eval`, `ripe-demo` and `costmodel`.

pub mod config;
pub mod data;
pub mod estimators;
pub mod implicit;
pub mod l2bst;
pub mod network;
pub mod rng;
pub mod runner;
pub mod telemetry;
pub mod training;

mod error;

pub use error::{Error, Result};
