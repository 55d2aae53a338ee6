//! Core engine of the edge-model referee: graph IR and interpreter, compile
//! passes, device cost model, track scoring kernels, test bundles and the
//! submission lifecycle.

pub mod bundle;
pub mod ir;
pub mod numeric;
pub mod opt;
pub mod referee;
pub mod metrics;
pub mod sim;
pub mod synth;
