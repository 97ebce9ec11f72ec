//! Dense helpers on row-major slices. Dimensions here are tiny (state and
//! noise dimensions), so plain loops beat any library call overhead.

#[allow(unused_imports)]
use num_traits::Float;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Frobenius norm of `a - b`.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `out = a * b` for `a: r x k`, `b: k x c`.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * c + j];
            }
            out[i * c + j] = s;
        }
    }
}

/// `out = a * v` for `a: r x c`.
pub fn matvec(a: &[f64], v: &[f64], r: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        out[i] = dot(&a[i * c..(i + 1) * c], v);
    }
}

/// `out = a^T * v` for `a: r x c`.
pub fn matvec_t(a: &[f64], v: &[f64], r: usize, c: usize, out: &mut [f64]) {
    for j in 0..c {
        let mut s = 0.0;
        for i in 0..r {
            s += a[i * c + j] * v[i];
        }
        out[j] = s;
    }
}

/// `v^T a w` for square `a`.
pub fn quadratic_form(a: &[f64], v: &[f64], w: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += v[i] * a[i * n + j] * w[j];
        }
    }
    s
}

pub fn transpose(a: &[f64], r: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
}

pub fn set_identity(out: &mut [f64], n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
}

/// Column `j` of the row-major `r x c` matrix `a`.
pub fn column(a: &[f64], r: usize, c: usize, j: usize, out: &mut [f64]) {
    for i in 0..r {
        out[i] = a[i * c + j];
    }
}

/// Largest `|a_ij - a_ji|`.
pub fn asymmetry(a: &[f64], n: usize) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}

/// Orthonormal coordinates of symmetric `n x n` matrices.
///
/// The basis is `e_a e_a^T` on the diagonal and `(e_a e_b^T + e_b e_a^T)/sqrt(2)`
/// for `a < b`, enumerated row by row over the upper triangle. Frobenius inner
/// products of symmetric matrices equal Euclidean inner products of their
/// coordinates.
#[derive(Debug, Clone)]
pub struct SymmetricBasis {
    n: usize,
    pairs: alloc::vec::Vec<(usize, usize)>,
}

impl SymmetricBasis {
    pub fn new(n: usize) -> Self {
        let mut pairs = alloc::vec::Vec::with_capacity(n * (n + 1) / 2);
        for a in 0..n {
            for b in a..n {
                pairs.push((a, b));
            }
        }
        Self { n, pairs }
    }

    pub fn matrix_dim(&self) -> usize {
        self.n
    }

    /// Number of coordinates, `n (n + 1) / 2`.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Coordinates of the symmetric part of `m`.
    pub fn coordinates(&self, m: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (r, &(a, b)) in self.pairs.iter().enumerate() {
            out[r] = if a == b {
                m[a * n + a]
            } else {
                (m[a * n + b] + m[b * n + a]) * core::f64::consts::FRAC_1_SQRT_2
            };
        }
    }

    /// Symmetric matrix with the given coordinates.
    pub fn matrix(&self, coords: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (r, &(a, b)) in self.pairs.iter().enumerate() {
            if a == b {
                out[a * n + a] = coords[r];
            } else {
                let v = coords[r] * core::f64::consts::FRAC_1_SQRT_2;
                out[a * n + b] = v;
                out[b * n + a] = v;
            }
        }
    }

    /// Basis element `r` as a dense matrix.
    pub fn element(&self, r: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (a, b) = self.pairs[r];
        let n = self.n;
        if a == b {
            out[a * n + a] = 1.0;
        } else {
            out[a * n + b] = core::f64::consts::FRAC_1_SQRT_2;
            out[b * n + a] = core::f64::consts::FRAC_1_SQRT_2;
        }
    }

    /// Matrix `M` of a linear map `L` on symmetric matrices in these
    /// coordinates: `M_rs = <E_r, L(E_s)>`.
    pub fn operator_matrix(&self, mut map: impl FnMut(&[f64], &mut [f64]), out: &mut [f64]) {
        let m = self.len();
        let n2 = self.n * self.n;
        let mut e = alloc::vec![0.0; n2];
        let mut image = alloc::vec![0.0; n2];
        let mut coords = alloc::vec![0.0; m];
        for s in 0..m {
            self.element(s, &mut e);
            map(&e, &mut image);
            self.coordinates(&image, &mut coords);
            for r in 0..m {
                out[r * m + s] = coords[r];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn symmetric_coordinates_preserve_frobenius_products() {
        let basis = SymmetricBasis::new(3);
        let a = [1.0, 2.0, -1.0, 2.0, 0.5, 3.0, -1.0, 3.0, 4.0];
        let b = [0.3, -0.2, 0.7, -0.2, 1.1, 0.0, 0.7, 0.0, -2.0];
        let mut ca = vec![0.0; 6];
        let mut cb = vec![0.0; 6];
        basis.coordinates(&a, &mut ca);
        basis.coordinates(&b, &mut cb);
        let frob: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&ca, &cb) - frob).abs() < 1e-12);
        let mut back = vec![0.0; 9];
        basis.matrix(&ca, &mut back);
        assert!(distance(&back, &a) < 1e-12);
    }

    #[test]
    fn operator_matrix_of_identity_map_is_identity() {
        let basis = SymmetricBasis::new(2);
        let mut m = vec![0.0; 9];
        basis.operator_matrix(|e, out| out.copy_from_slice(e), &mut m);
        let mut id = vec![0.0; 9];
        set_identity(&mut id, 3);
        assert!(distance(&m, &id) < 1e-15);
    }

    #[test]
    fn matmul_and_transpose_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut at = [0.0; 6];
        transpose(&a, 2, 3, &mut at);
        assert_eq!(at, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let mut g = [0.0; 4];
        matmul(&a, &at, 2, 3, 2, &mut g);
        assert_eq!(g, [14.0, 32.0, 32.0, 77.0]);
        let mut v = [0.0; 3];
        matvec_t(&a, &[1.0, -1.0], 2, 3, &mut v);
        assert_eq!(v, [-3.0, -3.0, -3.0]);
    }
}
