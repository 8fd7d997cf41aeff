//! Gauss-Legendre rules on [0, 1] and 1D Lagrange bases on equispaced nodes.

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `n`-point Gauss-Legendre rule mapped to [0, 1]; exact up to degree 2n-1.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "gauss_legendre needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1,1] -> [0,1]
        points[i] = 0.5 * (1.0 - x);
        points[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.5;
    }
    Rule { points, weights }
}

/// `(P_n(x), P_n'(x))`
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values and derivatives of the order-`r` Lagrange basis on nodes `p/r`.
pub fn lagrange_1d(r: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let nodes: Vec<f64> = (0..=r).map(|p| p as f64 / r as f64).collect();
    let mut val = vec![0.0; r + 1];
    let mut der = vec![0.0; r + 1];
    for p in 0..=r {
        let mut v = 1.0;
        let mut d = 0.0;
        for q in 0..=r {
            if q == p {
                continue;
            }
            let denom = nodes[p] - nodes[q];
            // product rule: d(v * f) = d*f + v*f'
            d = d * (x - nodes[q]) / denom + v / denom;
            v *= (x - nodes[q]) / denom;
        }
        val[p] = v;
        der[p] = d;
    }
    (val, der)
}
