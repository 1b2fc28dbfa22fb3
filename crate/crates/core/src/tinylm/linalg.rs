//! Dense row-major kernels over slices.

/// `out[j] += Σ_i x[i] · w[i, j]` for `w` of shape `x.len() × out.len()`.
#[inline]
pub(crate) fn vec_mat_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), x.len() * cols);
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// `out[i] = Σ_j w[i, j] · y[j]` for `w` of shape `out.len() × y.len()`.
#[inline]
pub(crate) fn mat_vec(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = y.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, y);
    }
}

/// `out[i] += Σ_j w[i, j] · y[j]`.
#[inline]
pub(crate) fn mat_vec_acc(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = y.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, y);
    }
}

/// `g[i, j] += x[i] · y[j]`.
#[inline]
pub(crate) fn outer_acc(x: &[f64], y: &[f64], g: &mut [f64]) {
    let cols = y.len();
    for (xi, row) in x.iter().zip(g.chunks_exact_mut(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (gij, yj) in row.iter_mut().zip(y) {
            *gij += xi * yj;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_match_hand_arithmetic() {
        // w = [[1, 2], [3, 4], [5, 6]]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        vec_mat_acc(&[1.0, 0.0, -1.0], &w, &mut out);
        assert_eq!(out, [-4.0, -4.0]);
        let mut back = [0.0; 3];
        mat_vec(&w, &[1.0, 1.0], &mut back);
        assert_eq!(back, [3.0, 7.0, 11.0]);
        mat_vec_acc(&w, &[1.0, 0.0], &mut back);
        assert_eq!(back, [4.0, 10.0, 16.0]);
        let mut g = [0.0; 6];
        outer_acc(&[1.0, 2.0, 3.0], &[1.0, -1.0], &mut g);
        assert_eq!(g, [1.0, -1.0, 2.0, -2.0, 3.0, -3.0]);
    }
}
