use alloc::vec::Vec;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowKind {
    Kaiser { beta: f64 },
    Hann,
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= (half / k) * (half / k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Symmetric taper of length `len`.
pub fn window_f64(kind: WindowKind, len: usize) -> Vec<f64> {
    if len == 1 {
        return alloc::vec![1.0];
    }
    let m = (len - 1) as f64;
    match kind {
        WindowKind::Hann => (0..len)
            .map(|n| 0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / m))
            .collect(),
        WindowKind::Kaiser { beta } => {
            let denom = bessel_i0(beta);
            (0..len)
                .map(|n| {
                    let r = 2.0 * n as f64 / m - 1.0;
                    bessel_i0(beta * libm::sqrt((1.0 - r * r).max(0.0))) / denom
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
    }

    #[test]
    fn windows_are_symmetric_and_peak_at_one() {
        for kind in [WindowKind::Hann, WindowKind::Kaiser { beta: 6.0 }] {
            let w = window_f64(kind, 401);
            for i in 0..401 {
                assert!((w[i] - w[400 - i]).abs() < 1e-12);
            }
            assert!((w[200] - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
        }
        let rect = window_f64(WindowKind::Kaiser { beta: 0.0 }, 16);
        assert!(rect.iter().all(|&x| x == 1.0));
    }
}
