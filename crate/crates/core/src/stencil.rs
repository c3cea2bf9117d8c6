//! Finite-difference weights on arbitrary node sets.

/// Fornberg's recursion: weights `w[k][j]` such that
/// `f^(k)(z) ≈ Σ_j w[k][j] f(x[j])` for `k = 0..=max_order`.
pub fn fornberg_weights(z: f64, x: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Node positions and values of a `width`-point stencil around node `i`
/// of a radial grid, mirroring across `r = 0` (even extension) and
/// shifting inward at the outer edge.
pub fn radial_stencil(nodes: &[f64], values: &[f64], i: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let half = (width / 2) as isize;
    let last = nodes.len() as isize - 1;
    let mut start = i as isize - half;
    if start + width as isize - 1 > last {
        start = last - width as isize + 1;
    }
    let mut xs = Vec::with_capacity(width);
    let mut ys = Vec::with_capacity(width);
    for j in start..start + width as isize {
        if j < 0 {
            let k = (-j) as usize;
            xs.push(-nodes[k]);
            ys.push(values[k]);
        } else {
            xs.push(nodes[j as usize]);
            ys.push(values[j as usize]);
        }
    }
    (xs, ys)
}

/// First and second derivative at node `i` from a `width`-point stencil.
pub fn radial_derivatives(nodes: &[f64], values: &[f64], i: usize, width: usize) -> (f64, f64) {
    let (xs, ys) = radial_stencil(nodes, values, i, width);
    let w = fornberg_weights(nodes[i], &xs, 2);
    let d1: f64 = w[1].iter().zip(&ys).map(|(a, b)| a * b).sum();
    let d2: f64 = w[2].iter().zip(&ys).map(|(a, b)| a * b).sum();
    (d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_three_point_weights() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[1][0] + 0.5).abs() < 1e-15 && (w[1][2] - 0.5).abs() < 1e-15);
        assert!((w[2][0] - 1.0).abs() < 1e-15 && (w[2][1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn five_point_exact_on_quartic() {
        let xs = [0.0, 0.3, 0.7, 1.2, 2.0];
        let f = |x: f64| 1.0 + x - 2.0 * x * x + 0.5 * x.powi(3) + 0.1 * x.powi(4);
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let z = 0.7;
        let w = fornberg_weights(z, &xs, 2);
        let d2: f64 = w[2].iter().zip(&ys).map(|(a, b)| a * b).sum();
        let exact = -4.0 + 3.0 * z + 1.2 * z * z;
        assert!((d2 - exact).abs() < 1e-11);
    }

    #[test]
    fn mirrored_stencil_at_origin() {
        let nodes = [0.0, 1.0, 2.0, 3.0];
        let vals = [1.0, 2.0, 5.0, 10.0];
        let (xs, ys) = radial_stencil(&nodes, &vals, 0, 5);
        assert_eq!(xs, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(ys, vec![5.0, 2.0, 1.0, 2.0, 5.0]);
    }
}
