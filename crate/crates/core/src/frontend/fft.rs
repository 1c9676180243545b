use alloc::vec::Vec;
use core::f64::consts::PI;

fn bit_reverse_permute<T>(re: &mut [T], im: &mut [T]) {
    let n = re.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
}

/// In-place radix-2 forward FFT. Length must be a power of two.
pub fn fft_f64(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert!(n.is_power_of_two() && im.len() == n);
    bit_reverse_permute(re, im);
    let mut len = 2;
    while len <= n {
        let step = -2.0 * PI / len as f64;
        for k in 0..len / 2 {
            let (wi, wr) = libm::sincos(step * k as f64);
            let mut start = 0;
            while start < n {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                start += len;
            }
        }
        len <<= 1;
    }
}

const TWIDDLE_BITS: u32 = 30;

/// Integer radix-2 FFT with Q30 twiddles and round-to-nearest after each
/// twiddle multiply. Inputs must stay below ~2^31/n in magnitude.
#[derive(Debug, Clone)]
pub struct FixedFft {
    n: usize,
    cos: Vec<i64>,
    sin: Vec<i64>,
}

impl FixedFft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two());
        let scale = (1u64 << TWIDDLE_BITS) as f64;
        let (cos, sin) = (0..n / 2)
            .map(|k| {
                let (s, c) = libm::sincos(-2.0 * PI * k as f64 / n as f64);
                (libm::round(c * scale) as i64, libm::round(s * scale) as i64)
            })
            .unzip();
        Self { n, cos, sin }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, re: &mut [i64], im: &mut [i64]) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n);
        bit_reverse_permute(re, im);
        let round = 1i64 << (TWIDDLE_BITS - 1);
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            for k in 0..len / 2 {
                let wr = self.cos[k * stride];
                let wi = self.sin[k * stride];
                let mut start = 0;
                while start < n {
                    let a = start + k;
                    let b = a + len / 2;
                    let tr = (re[b] * wr - im[b] * wi + round) >> TWIDDLE_BITS;
                    let ti = (re[b] * wi + im[b] * wr + round) >> TWIDDLE_BITS;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                    start += len;
                }
            }
            len <<= 1;
        }
    }
}
