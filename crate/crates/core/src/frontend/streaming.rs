use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::{Frontend, FrontendError, NoiseState};

/// Hop-by-hop frontend: feed arbitrary chunks, receive completed frames.
///
/// Produces exactly the frames of [`Frontend::compute_spectrogram`] over the
/// concatenation of everything pushed so far.
#[derive(Debug, Clone)]
pub struct StreamingFrontend {
    frontend: Frontend,
    pending: VecDeque<i16>,
    noise: NoiseState,
    scratch: Vec<i16>,
}

impl StreamingFrontend {
    pub fn new(frontend: Frontend) -> Self {
        let noise = frontend.new_noise_state();
        let window = frontend.config().window_len();
        Self { frontend, pending: VecDeque::with_capacity(2 * window), noise, scratch: Vec::new() }
    }

    pub fn noise_state(&self) -> &NoiseState {
        &self.noise
    }

    /// Samples buffered but not yet consumed by a full frame.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn push(&mut self, samples: &[i16]) -> Result<Vec<Vec<u16>>, FrontendError> {
        let window = self.frontend.config().window_len();
        let hop = self.frontend.config().hop_len();
        self.pending.extend(samples.iter().copied());
        let mut out = Vec::new();
        while self.pending.len() >= window {
            self.scratch.clear();
            self.scratch.extend(self.pending.iter().take(window).copied());
            out.push(self.frontend.process_frame(&self.scratch, &mut self.noise)?);
            self.pending.drain(..hop);
        }
        Ok(out)
    }

    /// Drops buffered audio and the noise estimate.
    pub fn reset(&mut self) {
        self.pending.clear();
        self.noise.reset();
    }
}
