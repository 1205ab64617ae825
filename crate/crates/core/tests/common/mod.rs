//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

/// `sum (a - b)^2`.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn center_dist(p: &[f64]) -> f64 {
    let u = 1.0 / p.len() as f64;
    p.iter().map(|x| (x - u) * (x - u)).sum::<f64>().sqrt()
}

/// Minimizer of `|q - v|^2` over the simplex outside the ball of radius `r`
/// about the centre, by enumerating every face and, per face, the two
/// possible KKT points (ball constraint active or not). Exact for small K.
pub fn exact_sparsestmax(v: &[f64], r: f64) -> Vec<f64> {
    let k = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |q: Vec<f64>| {
        if q.iter().any(|&x| x < -1e-12) || center_dist(&q) < r - 1e-12 {
            return;
        }
        let d = dist2(&q, v);
        if best.as_ref().is_none_or(|(b, _)| d < *b) {
            best = Some((d, q));
        }
    };
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let m = support.len() as f64;
        let mean = support.iter().map(|&i| v[i]).sum::<f64>() / m;
        let mut proj = vec![0.0; k];
        let mut dir = vec![0.0; k];
        for &i in &support {
            proj[i] = v[i] - mean + 1.0 / m;
            dir[i] = v[i] - mean;
        }
        consider(proj);
        let rho2 = r * r - (1.0 / m - 1.0 / k as f64);
        if rho2 >= -1e-15 {
            let rho = rho2.max(0.0).sqrt();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut q = vec![0.0; k];
            for &i in &support {
                q[i] = 1.0 / m + if norm > 0.0 { rho * dir[i] / norm } else { 0.0 };
            }
            consider(q);
        }
    }
    best.expect("vertices are always feasible").1
}

/// Dense-grid minimizer over the feasible set for K = 2 or 3: the lattice
/// of step `1 / n` plus the circular boundary sampled at the same arc step.
pub fn grid_sparsestmax(v: &[f64], r: f64, n: usize) -> Vec<f64> {
    let step = 1.0 / n as f64;
    let mut best = (f64::INFINITY, Vec::new());
    let mut visit = |q: Vec<f64>| {
        if center_dist(&q) >= r - 1e-12 {
            let d = dist2(&q, v);
            if d < best.0 {
                best = (d, q);
            }
        }
    };
    match v.len() {
        2 => (0..=n).for_each(|i| visit(vec![i as f64 * step, (n - i) as f64 * step])),
        3 => {
            for i in 0..=n {
                for j in 0..=n - i {
                    visit(vec![i as f64 * step, j as f64 * step, (n - i - j) as f64 * step]);
                }
            }
        }
        k => panic!("grid oracle supports K = 2, 3, got {k}"),
    }
    if r > 0.0 {
        let k = v.len() as f64;
        let u = 1.0 / k;
        if v.len() == 2 {
            let t = r / 2f64.sqrt();
            for s in [-t, t] {
                let q = vec![u + s, u - s];
                if q.iter().all(|&x| x >= 0.0) {
                    visit(q);
                }
            }
        } else {
            let e1 = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
            let e2 = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
            let steps = (2.0 * std::f64::consts::PI * r / step).ceil() as usize;
            for i in 0..steps {
                let a = i as f64 / steps as f64 * 2.0 * std::f64::consts::PI;
                let q: Vec<f64> = (0..3).map(|j| u + r * (a.cos() * e1[j] + a.sin() * e2[j])).collect();
                if q.iter().all(|&x| x >= 0.0) {
                    visit(q);
                }
            }
        }
    }
    best.1
}

/// Sort-free sparsemax: bisection on the threshold.
pub fn bisection_sparsemax(v: &[f64]) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|x| (x - t).max(0.0)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).max(0.0)).collect()
}

/// Gradients with norm below this are finite-difference round-off.
pub const ZERO_GRAD: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|)`, zero when both are below [`ZERO_GRAD`].
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = dist2(a, n).sqrt();
    let scale = dist2(a, &vec![0.0; a.len()]).sqrt().max(dist2(n, &vec![0.0; n.len()]).sqrt());
    if scale < ZERO_GRAD {
        0.0
    } else {
        diff / scale
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Sort-and-threshold sparsemax written out directly.
pub fn sort_sparsemax(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x > t {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}
