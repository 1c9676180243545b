/// `round((log2(1 + i/128) - i/128) · 2^16)` for `i = 0..=128`.
pub const LOG_LUT: [u16; 129] = [
    0, 224, 442, 654, 861, 1063, 1259, 1450, 1636, 1817, 1992, 2163, 2329, 2490, 2646, 2797, 2944,
    3087, 3224, 3358, 3487, 3611, 3732, 3848, 3960, 4068, 4172, 4272, 4368, 4460, 4549, 4633, 4714,
    4791, 4864, 4934, 5001, 5063, 5123, 5178, 5231, 5280, 5326, 5368, 5408, 5444, 5477, 5507, 5533,
    5557, 5578, 5595, 5610, 5622, 5631, 5637, 5640, 5641, 5638, 5633, 5626, 5615, 5602, 5586, 5568,
    5547, 5524, 5498, 5470, 5439, 5406, 5370, 5332, 5291, 5249, 5203, 5156, 5106, 5054, 5000, 4944,
    4885, 4825, 4762, 4697, 4630, 4561, 4490, 4416, 4341, 4264, 4184, 4103, 4020, 3935, 3848, 3759,
    3668, 3575, 3481, 3384, 3286, 3186, 3084, 2981, 2875, 2768, 2659, 2549, 2437, 2323, 2207, 2090,
    1971, 1851, 1729, 1605, 1480, 1353, 1224, 1094, 963, 830, 695, 559, 421, 282, 142, 0,
];

const SCALE_BITS: u32 = 16;
const SEGMENT_BITS: u32 = 7;
/// ln(2) in Q16.
const LN2_Q16: u64 = 45426;

/// Fractional part of log2(x) in Q16, given `msb = floor(log2 x)`.
fn log2_fraction(x: u32, msb: u32) -> u32 {
    let mut frac = (x - (1u32 << msb)) as u64;
    if msb < SCALE_BITS {
        frac <<= SCALE_BITS - msb;
    } else {
        frac >>= msb - SCALE_BITS;
    }
    let frac = frac as i64;
    let seg_unit = 1i64 << (SCALE_BITS - SEGMENT_BITS);
    let seg = (frac >> (SCALE_BITS - SEGMENT_BITS)) as usize;
    let c0 = LOG_LUT[seg] as i64;
    let c1 = LOG_LUT[seg + 1] as i64;
    let rel = ((c1 - c0) * (frac - seg_unit * seg as i64)) >> (SCALE_BITS - SEGMENT_BITS);
    (frac + c0 + rel) as u32
}

/// Integer-only `round(ln(max(energy, 1)) · 2^scale_shift)`.
pub fn log_compress(energy: u32, scale_shift: u32) -> u16 {
    if energy <= 1 {
        return 0;
    }
    let msb = 31 - energy.leading_zeros();
    let log2_q = ((msb as u64) << SCALE_BITS) + log2_fraction(energy, msb) as u64;
    let round = 1u64 << (SCALE_BITS - 1);
    let ln_q = (LN2_Q16 * log2_q + round) >> SCALE_BITS;
    (((ln_q << scale_shift) + round) >> SCALE_BITS) as u16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(x: u32) -> f64 {
        libm::round(libm::log(x.max(1) as f64) * 64.0)
    }

    #[test]
    fn lut_matches_definition() {
        for (i, &v) in LOG_LUT.iter().enumerate() {
            let t = i as f64 / 128.0;
            let exact = (libm::log2(1.0 + t) - t) * 65536.0;
            assert_eq!(v as f64, libm::round(exact), "entry {i}");
        }
    }

    #[test]
    fn anchor_values() {
        assert_eq!(log_compress(0, 6), 0);
        assert_eq!(log_compress(1, 6), 0);
        assert_eq!(log_compress(65536, 6), 710);
        assert_eq!(log_compress(u32::MAX, 6), 1420);
    }

    #[test]
    fn within_one_count_and_monotone_small_range() {
        let mut prev = 0;
        for x in 0..1_000_000u32 {
            let y = log_compress(x, 6);
            assert!((y as f64 - oracle(x)).abs() <= 1.0, "x = {x}: {y} vs {}", oracle(x));
            assert!(y >= prev, "not monotone at {x}");
            prev = y;
        }
    }

    #[test]
    fn within_one_count_large_values() {
        let mut x: u64 = 1_000_000;
        let mut prev = log_compress(999_999, 6);
        while x <= u32::MAX as u64 {
            let y = log_compress(x as u32, 6);
            assert!((y as f64 - oracle(x as u32)).abs() <= 1.0, "x = {x}");
            assert!(y >= prev);
            prev = y;
            x += 1 + x / 4096;
        }
    }
}
