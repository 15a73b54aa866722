//! Dense row-major helpers on `f64` slices. Nothing here allocates beyond
//! the returned vector.

/// `m` is `rows x cols`, row-major. Returns `m v`.
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    m.chunks_exact(cols)
        .map(|row| dot(row, v))
        .collect()
}

/// Returns `vᵀ m` (length `cols`).
pub fn vec_mat(v: &[f64], m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(v.len(), rows);
    let mut out = vec![0.0; cols];
    for (row, &s) in m.chunks_exact(cols).zip(v) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += s * x;
        }
    }
    out
}

/// `a` is `n x m`, `b` is `m x p`. Returns `a b` (`n x p`).
pub fn mat_mul(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), m * p);
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let out_row = &mut out[i * p..(i + 1) * p];
        for l in 0..m {
            let s = a[i * m + l];
            for (o, &x) in out_row.iter_mut().zip(&b[l * p..(l + 1) * p]) {
                *o += s * x;
            }
        }
    }
    out
}

/// Row-major outer product `u ⊗ v`.
pub fn outer(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for &a in u {
        out.extend(v.iter().map(|&b| a * b));
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(mat_vec(&m, 2, 3, &[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(vec_mat(&[1.0, -1.0], &m, 2, 3), vec![-3.0, -3.0, -3.0]);
        assert_eq!(outer(&[1.0, 2.0], &[3.0, 4.0]), vec![3.0, 4.0, 6.0, 8.0]);
        let i2 = identity(2);
        assert_eq!(mat_mul(&i2, &m, 2, 2, 3), m.to_vec());
    }
}
