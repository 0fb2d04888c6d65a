//! The kink benchmark: a one-dimensional system whose transition bends
//! sharply, so linear filters cannot track it but a GP can.

use crate::linalg::Mat;
use crate::rng::{normal, TrajectoryStreams};

/// The kink transition mean. A line of slope 1 that folds into slope -4
/// around the origin.
pub fn kink_function(x: f64) -> f64 {
    crate::gp::kink_response(x)
}

/// A simulated trajectory with its noisy observations.
#[derive(Debug, Clone)]
pub struct KinkDataset {
    /// T x 1 latent states.
    pub states: Mat<f64>,
    /// T x 1 observations `y_t = x_t + noise`.
    pub observations: Mat<f64>,
    pub process_sd: f64,
    pub obs_sd: f64,
}

/// Simulate `x_1 ~ N(0, 1)`, `x_{t+1} = kink(x_t) + process noise`,
/// `y_t = x_t + observation noise`.
///
/// Noise is consumed from the same role streams, in the same order, as the
/// generic prior sampler with a deterministic transition, so the two
/// routes produce bitwise identical data.
pub fn generate_kink_dataset(t_len: usize, process_sd: f64, obs_sd: f64, seed: u64) -> KinkDataset {
    let mut streams = TrajectoryStreams::new(seed, 0);
    let mut states = Mat::zeros(t_len, 1);
    if t_len > 0 {
        states.set(0, 0, normal(&mut streams.initial));
        for t in 0..t_len - 1 {
            let f = kink_function(states.at(t, 0));
            states.set(t + 1, 0, f + process_sd * normal(&mut streams.process));
        }
    }
    let mut emission = TrajectoryStreams::new(seed, 0);
    let mut observations = Mat::zeros(t_len, 1);
    for t in 0..t_len {
        observations.set(t, 0, states.at(t, 0) + obs_sd * normal(&mut emission.emission));
    }
    KinkDataset { states, observations, process_sd, obs_sd }
}
