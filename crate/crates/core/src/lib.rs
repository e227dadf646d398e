//! Delay analysis for a point-to-point fading link whose transmitter adapts
//! the code rate to a noisy channel estimate.
//!
//! The library models one time slot of `n_slot` symbols, of which `m` are
//! spent estimating the channel and `n = n_slot - m` carry a codeword. Short
//! codewords and imperfect estimates both cause decoding failures; failed
//! slots retransmit, data queues up, and the quantity of interest is the
//! probability that the queueing delay exceeds a target number of slots.
//!
//! The crate is organised bottom-up:
//!
//! * [`specfun`] — scalar special functions (Gaussian Q and its inverse,
//!   modified Bessel I0, Marcum Q1, channel dispersion).
//! * [`channel`] — Rayleigh block fading with MMSE estimation: derived
//!   statistics, conditional SNR distributions, and slot sampling.
//! * [`errmodel`] — decoding error probabilities: exact outage, the
//!   normal-approximation integral, and invertible Gaussian-SNR bounds.
//! * [`ratepolicy`] — rate adaptation policies over a discretised estimate
//!   grid, including the convex per-point optimiser.
//! * [`snc`] — Mellin-transform service/arrival characterisations, the
//!   delay kernel and the bound search over its free parameter.
//! * [`sweep`] — outer loops: training-length optimisation and maximum
//!   supportable arrival rate under a QoS target.
//! * [`sim`] — Monte Carlo queue simulation that validates the bounds.

pub mod channel;
pub mod errmodel;
mod error;
pub mod ratepolicy;
pub mod sim;
pub mod snc;
pub mod specfun;
pub mod sweep;

mod quad;

pub use error::{Error, Result};
