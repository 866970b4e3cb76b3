//! Adaptive rounding for weight quantization with Kronecker-factored Hessian
//! sketches: LDLQ and its two-sided generalization, the Hessian sketch
//! constructions, randomized Hadamard incoherence processing, the error
//! bounds, and a desk-scale toy-model harness on which the end-to-end KL
//! objective is exactly computable.

pub mod bounds;
pub mod container;
pub mod error;
pub mod gen;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod quantize;
pub mod rounding;
pub mod sketch;
pub mod snd;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{BlockLDLFactors, EigenDecomp, LDLFactors, SymMatrix};
pub use matrix::{unvec, Matrix};
pub use model::{Dataset, ToyModel};
pub use quantize::{QuantizedWeights, QuantizerSpec, RoundingMode, ScalePolicy};
pub use rounding::{RoundingProblem, RoundingResult};
pub use sketch::{FisherEstimate, KronSketch};
pub use snd::SupportPattern;
pub use transform::Rht;
