//! Finite-difference stencils on uniform node grids.

/// Centred first derivative at interior nodes, second-order one-sided at the ends.
pub fn gradient_nodes(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    out
}

/// Fourth-order first and second derivatives at every node.
///
/// Uses five-point centred stencils in the interior and six-point one-sided
/// stencils on the two nodes nearest each end. Needs at least six nodes.
pub fn derivatives_fourth_order(values: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    assert!(n >= 6, "fourth-order stencils need at least six nodes");
    let f = values;
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 2..n - 2 {
        d1[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
        d2[i] = (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]) / (12.0 * h * h);
    }
    // one-sided coefficients for offsets 0..5 relative to the evaluation node
    let fwd = |g: &dyn Fn(usize) -> f64, s: f64| -> (f64, f64) {
        let (a0, a1, a2, a3, a4) = (g(0), g(1), g(2), g(3), g(4));
        let a5 = g(5);
        let first = (-25.0 * a0 + 48.0 * a1 - 36.0 * a2 + 16.0 * a3 - 3.0 * a4) / (12.0 * h) * s;
        let second = (45.0 * a0 - 154.0 * a1 + 214.0 * a2 - 156.0 * a3 + 61.0 * a4 - 10.0 * a5) / (12.0 * h * h);
        (first, second)
    };
    // node 1 uses a shifted stencil: offsets -1..4
    let near = |g: &dyn Fn(isize) -> f64, s: f64| -> (f64, f64) {
        let first = (-3.0 * g(-1) - 10.0 * g(0) + 18.0 * g(1) - 6.0 * g(2) + g(3)) / (12.0 * h) * s;
        let second = (10.0 * g(-1) - 15.0 * g(0) - 4.0 * g(1) + 14.0 * g(2) - 6.0 * g(3) + g(4)) / (12.0 * h * h);
        (first, second)
    };
    let (a, b) = fwd(&|k| f[k], 1.0);
    d1[0] = a;
    d2[0] = b;
    let (a, b) = fwd(&|k| f[n - 1 - k], -1.0);
    d1[n - 1] = a;
    d2[n - 1] = b;
    let (a, b) = near(&|k| f[(1 + k) as usize], 1.0);
    d1[1] = a;
    d2[1] = b;
    let (a, b) = near(&|k| f[(n as isize - 2 - k) as usize], -1.0);
    d1[n - 2] = a;
    d2[n - 2] = b;
    (d1, d2)
}

/// Fourth-order first derivative on a periodic grid of `n` distinct nodes.
pub fn periodic_gradient_fourth_order(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let at = |i: isize| values[i.rem_euclid(n as isize) as usize];
    (0..n as isize)
        .map(|i| (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * h))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_order_exact_on_quartics() {
        let h = 0.1;
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * h).collect();
        let f: Vec<f64> = xs.iter().map(|x| x.powi(4) - 2.0 * x.powi(3) + x).collect();
        let (d1, d2) = derivatives_fourth_order(&f, h);
        for (i, x) in xs.iter().enumerate() {
            let e1 = 4.0 * x.powi(3) - 6.0 * x.powi(2) + 1.0;
            let e2 = 12.0 * x.powi(2) - 12.0 * x;
            assert!((d1[i] - e1).abs() < 1e-9, "d1 at {i}: {} vs {e1}", d1[i]);
            assert!((d2[i] - e2).abs() < 1e-8, "d2 at {i}: {} vs {e2}", d2[i]);
        }
    }

    #[test]
    fn second_order_gradient_exact_on_quadratics() {
        let h = 0.25;
        let f: Vec<f64> = (0..5).map(|i| (i as f64 * h).powi(2)).collect();
        let g = gradient_nodes(&f, h);
        for (i, v) in g.iter().enumerate() {
            assert!((v - 2.0 * i as f64 * h).abs() < 1e-12);
        }
    }
}
