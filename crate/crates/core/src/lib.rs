//! Pose-free dynamic Gaussian splatting on the CPU.
//!
//! The crate covers the whole pipeline for monocular driving-style sequences:
//! time-varying Gaussian primitives ([`scene`]), camera and pose algebra
//! ([`camera`]), a differentiable tile rasterizer with analytic gradients
//! ([`raster`]), odometry providers and depth-lifted initialization
//! ([`odometry`]), the training loop with motion-mask supervision and late
//! pose refinement ([`trainer`]), image and trajectory metrics ([`eval`]), and
//! a synthetic scene generator that serves as ground truth ([`synth`]).

pub mod camera;
pub mod error;
pub mod eval;
pub mod buffer;
pub mod io;
pub mod lie;
pub mod odometry;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod sh;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
