//! `f64` transcendental functions for `no_std` builds.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = core::f64::consts::PI * x;
        sin(px) / px
    }
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + ln(s)
}

/// Index into `0..n` with whole-sample mirror reflection at both ends
/// (`... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...`), valid for any offset.
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i % period;
    if r < 0 {
        r += period;
    }
    if r >= n as isize {
        (period - r) as usize
    } else {
        r as usize
    }
}

/// Round to the nearest `f32`, returned as `f64`.
#[inline]
pub fn to_f32_precision(x: f64) -> f64 {
    x as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_index_reflects() {
        let got: alloc::vec::Vec<usize> = (-3..8).map(|i| mirror_index(i, 4)).collect();
        assert_eq!(got, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(mirror_index(-5, 1), 0);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.1, -2.0, 3.5];
        let naive = ln(xs.iter().map(|&x| exp(x)).sum::<f64>());
        assert!(abs(log_sum_exp(&xs) - naive) < 1e-12);
    }
}
