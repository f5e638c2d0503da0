//! SDF-based multi-object surface reconstruction and novel-view rendering
//! from sparse calibrated images.
//!
//! The pipeline combines a signed-distance geometry network with volume
//! rendering: prior triangle meshes supervise the SDF before any image is
//! seen, per-object bounding boxes split every camera ray into foreground
//! (SDF-driven opacity) and background (density-driven opacity) segments,
//! and four regularizers keep the optimization stable under sparse views.
//!
//! Modules follow the processing order: [`geom`] and [`autodiff`] are the
//! numeric substrate, [`mesh`] handles prior meshes, [`fields`] defines the
//! trainable networks, [`renderer`] and [`losses`] implement rendering and
//! the training objective, [`trainer`] drives the two optimization stages,
//! and [`eval`] extracts surfaces and computes metrics.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod fields;
pub mod geom;
pub mod losses;
pub mod mesh;
pub mod renderer;
pub mod scene;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Initialize the global rayon thread pool, honoring `SPARSESHAPE_THREADS`.
///
/// Safe to call more than once; only the first call configures the pool.
pub fn init_thread_pool() {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(n) = std::env::var("SPARSESHAPE_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            if n > 0 {
                builder = builder.num_threads(n);
            }
        }
    }
    let _ = builder.build_global();
}
