//! Simulation and characterization of room-temperature telecom single-photon
//! sources: time-tag I/O, coincidence correlation, a three-level emitter
//! simulator, curve fitting, spectra, polarization tomography and
//! scan/stability analysis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod correlator;
pub mod emitsim;
pub mod fitting;
pub mod pipeline;
pub mod report;
pub mod scanstab;
pub mod spectra;
pub mod tomography;
pub mod timetag;

/// Worker threads for internal parallelism. `PHOTONFORGE_THREADS` caps the
/// count; otherwise the available parallelism is used.
pub fn default_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("PHOTONFORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(n) if n >= 1 => n.min(available),
        _ => available,
    }
}
