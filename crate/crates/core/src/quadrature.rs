//! Fixed Gauss-Legendre rules on `[0, 1]`.

const NODES_16: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];

const WEIGHTS_16: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];

/// 16-point Gauss-Legendre approximation of `int_0^1 f(theta) dtheta`.
pub fn gauss_legendre_16(mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for (x, w) in NODES_16.iter().zip(WEIGHTS_16) {
        acc += w * (f(0.5 * (1.0 - x)) + f(0.5 * (1.0 + x)));
    }
    0.5 * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    #[allow(unused_imports)]
    use num_traits::Float;

    #[test]
    fn integrates_polynomials_up_to_degree_31() {
        for k in 0..32 {
            let exact = 1.0 / (k as f64 + 1.0);
            let approx = gauss_legendre_16(|t| t.powi(k));
            assert!((approx - exact).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn weights_sum_to_one() {
        assert!((gauss_legendre_16(|_| 1.0) - 1.0).abs() < 1e-15);
    }
}
