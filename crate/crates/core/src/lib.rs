//! Generalized convolution for signals living on irregular 2-D point domains.
//!
//! A convolution is described by a shared weight kernel and an allocation map
//! that assigns one kernel slot to every edge of a receptive graph. The
//! rectangular moving-grid allocation ([`receptive::build_rect_graph`]) reduces
//! to an ordinary zero-padded convolution on integer lattices, while still
//! working on arbitrarily displaced points.
//!
//! Layout of the crate:
//!
//! * [`domain`]: points, entries, homogenized batches.
//! * [`receptive`]: receptive graphs and the rectangular-window allocation.
//! * [`gconv`]: the operator, its analytic backward pass, dense oracles.
//! * [`network`]: layers (conv + fused bias ReLU, patch max-pool, dense,
//!   softmax cross-entropy) and their composition.
//! * [`optim`]: Nesterov SGD and the training loop.
//! * [`mnist`], [`experiment`]: the distorted-MNIST harness and the
//!   regular-grid equivalence check.
//! * [`gradcheck`]: finite-difference suites shared by tests and the CLI.

pub mod domain;
pub mod error;
pub mod experiment;
pub mod gconv;
pub mod gradcheck;
pub mod mnist;
pub mod network;
pub mod optim;
pub mod receptive;

pub use domain::{homogenize, make_entry, regular_grid_entry, Batch, Entry, Point, PointSet};
pub use error::{GconvError, Result};
pub use gconv::{conv_backward, conv_forward, ConvGradients, Kernel};
pub use network::{Network, NetworkConfig};
pub use optim::{train, EpochMetrics, SgdConfig};
pub use receptive::{build_rect_graph, ReceptiveGraph, RectWindow};
