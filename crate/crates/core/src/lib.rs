//! Self-supervised monocular depth estimation built on selective state-space
//! (S6) scans.
//!
//! The crate is organized bottom-up: a minimal dense-tensor engine with
//! reverse-mode autodiff ([`tensor`]), the S6 selective scan ([`ssm`]) and its
//! four-direction 2D extension ([`ss2d`]), the gated MD block ([`block`]), the
//! encoder/decoder depth network and pose network ([`net`]), differentiable
//! view synthesis ([`geometry`]), the masked photometric objective ([`loss`]),
//! an Adam training loop ([`trainer`]), depth evaluation metrics ([`metrics`]),
//! a synthetic test-scene generator ([`synthetic`]), and file formats
//! ([`io`]).

pub mod augment;
pub mod block;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod ss2d;
pub mod ssm;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tape, Tensor};
