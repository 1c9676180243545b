use super::{FrontendConfig, FrontendError, NoiseState};

const GAIN_BITS: u32 = 16;

/// Per-channel automatic gain driven by the smoothed noise estimate:
/// `E · (offset / (offset + noise))^strength`. Identity when disabled or
/// when `strength == 0`.
pub fn pcan_gain(
    energies: &mut [u32],
    state: &NoiseState,
    cfg: &FrontendConfig,
) -> Result<(), FrontendError> {
    if !cfg.pcan_enabled || cfg.pcan_strength == 0.0 {
        return Ok(());
    }
    if state.estimates.len() != energies.len() {
        return Err(FrontendError::State { got: state.estimates.len(), expected: energies.len() });
    }
    let one = (1u64 << GAIN_BITS) as f64;
    for (c, e) in energies.iter_mut().enumerate() {
        let noise = state.estimate(c, cfg.smoothing_bits) as f64;
        let gain = libm::pow(cfg.pcan_offset / (cfg.pcan_offset + noise), cfg.pcan_strength);
        let gain_q = libm::round(gain * one) as u64;
        *e = ((*e as u64 * gain_q + (1 << (GAIN_BITS - 1))) >> GAIN_BITS) as u32;
    }
    Ok(())
}
