//! Normalizers mapping real logits onto the probability simplex.
//!
//! * [`softmax_norm`]: dense baseline.
//! * [`sparsemax`]: Euclidean projection onto the simplex.
//! * [`sparsestmax`]: Euclidean projection onto the simplex with the open
//!   ball of radius `r` around the barycenter `u = 1/K` removed. As `r` grows
//!   from `0` to the circumradius `r_c = sqrt((K-1)/K)` the output moves from
//!   sparsemax to a one-hot vector.
//!
//! All outputs are [`SimplexPoint`]s. Ties are broken toward the lowest index.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndgraph::{Graph, LocalJacobian, Tensor, Var};

/// Negative entries down to this magnitude are treated as rounding noise.
const CLAMP_TOL: f64 = 1e-12;

/// A probability vector: nonnegative entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    /// Validates `values` (entries `>= -1e-12`, sum within `1e-9` of one) and
    /// clamps the tiny negatives to zero.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty simplex point"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < -CLAMP_TOL) {
            return Err(Error::invalid(format!("{values:?} has a negative or non-finite entry")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("{values:?} sums to {sum}")));
        }
        for v in &mut values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(SimplexPoint(values))
    }

    /// The barycenter `1/K`.
    pub fn uniform(k: usize) -> Self {
        SimplexPoint(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        let mut v = vec![0.0; k];
        v[index] = 1.0;
        SimplexPoint(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Number of exactly nonzero entries.
    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }

    /// One entry exactly `1.0`, the rest exactly `0.0`.
    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|v| **v == 1.0).count() == 1 && self.nnz() == 1
    }

    /// Euclidean distance to the barycenter.
    pub fn distance_to_center(&self) -> f64 {
        let u = 1.0 / self.0.len() as f64;
        self.0.iter().map(|v| (v - u).powi(2)).sum::<f64>().sqrt()
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Circumradius `sqrt((K-1)/K)` of the standard `(K-1)`-simplex.
pub fn circumradius(k: usize) -> f64 {
    ((k as f64 - 1.0) / k as f64).sqrt()
}

/// Linear ramp of the exclusion radius from `0` to `r_max` over `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusSchedule {
    pub r_max: f64,
    pub total_steps: usize,
}

impl RadiusSchedule {
    /// Schedule ending at the circumradius of a `k`-simplex.
    pub fn for_simplex(k: usize, total_steps: usize) -> Self {
        RadiusSchedule {
            r_max: circumradius(k),
            total_steps,
        }
    }

    /// `r(t) = r_max * min(1, t / total_steps)`; a zero-length schedule is
    /// already at its end.
    pub fn radius(&self, t: usize) -> f64 {
        if self.total_steps == 0 || t >= self.total_steps {
            self.r_max
        } else {
            self.r_max * (t as f64 / self.total_steps as f64)
        }
    }

    /// Fraction of the schedule elapsed, in `[0, 1]`.
    pub fn fraction(&self, t: usize) -> f64 {
        if self.total_steps == 0 {
            1.0
        } else {
            (t as f64 / self.total_steps as f64).min(1.0)
        }
    }
}

/// Max-shifted softmax.
pub fn softmax_norm(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Sort-and-threshold projection; returns the point and its support mask.
fn sparsemax_inner(v: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cum = 0.0;
    let mut tau = sorted[0] - 1.0;
    for (j, s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (j + 1) as f64;
        if *s > t {
            tau = t;
        } else {
            break;
        }
    }
    let p: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    let support = p.iter().map(|x| *x > 0.0).collect();
    (p, support)
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("cannot normalize an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite logits {v:?}")));
    }
    Ok(())
}

pub fn softmax(v: &[f64]) -> Result<SimplexPoint> {
    check_finite(v)?;
    Ok(SimplexPoint(softmax_norm(v)))
}

pub fn sparsemax(v: &[f64]) -> Result<SimplexPoint> {
    check_finite(v)?;
    Ok(SimplexPoint(sparsemax_inner(v).0))
}

/// Local linearization of a simplex projection at the point it was evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum ProjectionJacobian {
    /// Sparsemax regime: `I_S - 1 1^T / |S|` on the support `S`.
    Sparsemax { support: Vec<bool> },
    /// Sphere regime on support `S`: `gain * (I_S - d d^T - 1 1^T / |S|)`
    /// where `d` is the unit centered direction of the logits on `S`.
    Radial {
        support: Vec<bool>,
        direction: Vec<f64>,
        gain: f64,
    },
    /// Locally constant output (a vertex).
    Zero { len: usize },
}

impl ProjectionJacobian {
    /// `J^T g` (the Jacobian is symmetric).
    pub fn vjp(&self, upstream: &[f64]) -> Vec<f64> {
        match self {
            ProjectionJacobian::Zero { len } => vec![0.0; *len],
            ProjectionJacobian::Sparsemax { support } => {
                let (mean, _) = support_mean(upstream, support);
                upstream
                    .iter()
                    .zip(support)
                    .map(|(g, &s)| if s { g - mean } else { 0.0 })
                    .collect()
            }
            ProjectionJacobian::Radial {
                support,
                direction,
                gain,
            } => {
                let (mean, _) = support_mean(upstream, support);
                let dot: f64 = upstream
                    .iter()
                    .zip(direction)
                    .zip(support)
                    .filter(|(_, &s)| s)
                    .map(|((g, d), _)| g * d)
                    .sum();
                upstream
                    .iter()
                    .zip(direction)
                    .zip(support)
                    .map(|((g, d), &s)| if s { gain * (g - d * dot - mean) } else { 0.0 })
                    .collect()
            }
        }
    }

    /// Dense `K x K` matrix, row-major.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let k = match self {
            ProjectionJacobian::Zero { len } => *len,
            ProjectionJacobian::Sparsemax { support } | ProjectionJacobian::Radial { support, .. } => support.len(),
        };
        (0..k)
            .map(|i| {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                self.vjp(&e)
            })
            .collect()
    }
}

impl LocalJacobian for ProjectionJacobian {
    fn vjp(&self, upstream: &[f64]) -> Vec<f64> {
        ProjectionJacobian::vjp(self, upstream)
    }
}

fn support_mean(v: &[f64], support: &[bool]) -> (f64, usize) {
    let (s, n) = v
        .iter()
        .zip(support)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (x, _)| (s + x, n + 1));
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// Sparsestmax with its Jacobian on the final support.
///
/// Procedure: take `p = sparsemax(v)`; if `p` already lies outside the
/// open ball it is optimal. Otherwise the optimum lies on the sphere, so the
/// centered logits are pushed radially out to radius `r` inside the current
/// face; coordinates that turn negative are dropped, and the step is
/// repeated on the reduced face with the center and radius of the sphere's
/// cross-section there. A fully tied face escapes toward its lowest index.
pub fn sparsestmax_with_jacobian(v: &[f64], r: f64) -> Result<(SimplexPoint, ProjectionJacobian)> {
    check_finite(v)?;
    let k = v.len();
    let rc = circumradius(k);
    if !(0.0..=rc * (1.0 + 1e-12)).contains(&r) {
        return Err(Error::invalid(format!("radius {r} outside [0, r_c = {rc}] for K = {k}")));
    }
    let (p, support) = sparsemax_inner(v);
    if k == 1 {
        return Ok((SimplexPoint(p), ProjectionJacobian::Zero { len: 1 }));
    }
    if r >= rc * (1.0 - 1e-12) {
        // Only the vertices survive; the nearest one is the argmax.
        return Ok((SimplexPoint::one_hot(k, argmax(v)), ProjectionJacobian::Zero { len: k }));
    }
    let u = 1.0 / k as f64;
    let dist = p.iter().map(|x| (x - u).powi(2)).sum::<f64>().sqrt();
    if r == 0.0 || dist >= r {
        return Ok((SimplexPoint(p), ProjectionJacobian::Sparsemax { support }));
    }

    let mut active: Vec<bool> = vec![true; k];
    loop {
        let idx: Vec<usize> = (0..k).filter(|&i| active[i]).collect();
        let m = idx.len();
        if m == 1 {
            return Ok((SimplexPoint::one_hot(k, idx[0]), ProjectionJacobian::Zero { len: k }));
        }
        let mf = m as f64;
        let offset2 = 1.0 / mf - 1.0 / k as f64;
        let rs2 = r * r - offset2;
        if rs2 <= 0.0 {
            // The whole face already clears the ball; project within it.
            let sub: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            let (ps, ss) = sparsemax_inner(&sub);
            let mut q = vec![0.0; k];
            let mut sup = vec![false; k];
            for (j, &i) in idx.iter().enumerate() {
                q[i] = ps[j];
                sup[i] = ss[j];
            }
            return Ok((SimplexPoint(q), ProjectionJacobian::Sparsemax { support: sup }));
        }
        let rs = rs2.sqrt();
        let mean = idx.iter().map(|&i| v[i]).sum::<f64>() / mf;
        let centered: Vec<f64> = (0..k).map(|i| if active[i] { v[i] - mean } else { 0.0 }).collect();
        let norm = centered.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (direction, gain) = if norm > 1e-300 {
            (centered.iter().map(|c| c / norm).collect::<Vec<f64>>(), rs / norm)
        } else {
            // Fully tied face: escape toward its lowest index.
            let lead = idx[0];
            let mut d: Vec<f64> = (0..k)
                .map(|i| {
                    if !active[i] {
                        0.0
                    } else if i == lead {
                        1.0 - 1.0 / mf
                    } else {
                        -1.0 / mf
                    }
                })
                .collect();
            let dn = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.iter_mut().for_each(|x| *x /= dn);
            (d, 0.0)
        };
        let q: Vec<f64> = (0..k)
            .map(|i| if active[i] { 1.0 / mf + rs * direction[i] } else { 0.0 })
            .collect();
        if q.iter().all(|x| *x >= -CLAMP_TOL) {
            let q: Vec<f64> = q.into_iter().map(|x| x.max(0.0)).collect();
            let jac = ProjectionJacobian::Radial {
                support: active,
                direction,
                gain,
            };
            return Ok((SimplexPoint(q), jac));
        }
        for i in 0..k {
            if active[i] && q[i] <= 0.0 {
                active[i] = false;
            }
        }
    }
}

pub fn sparsestmax(v: &[f64], r: f64) -> Result<SimplexPoint> {
    sparsestmax_with_jacobian(v, r).map(|(p, _)| p)
}

/// Gradient of `<upstream, sparsestmax(v, r)>` with respect to `v`, holding
/// the final support fixed.
pub fn sparsestmax_grad(v: &[f64], r: f64, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != v.len() {
        return Err(Error::shape(
            "sparsestmax_grad",
            "upstream",
            format!("{} vs {}", upstream.len(), v.len()),
        ));
    }
    let (_, jac) = sparsestmax_with_jacobian(v, r)?;
    Ok(jac.vjp(upstream))
}

/// Ordering penalty on one path's raw node logits.
///
/// Telescoping form: `lambda * sum_j (b_j - b_{j-1}) = lambda * (b_last - b_0)`.
/// Hinge form: `lambda * sum_j max(0, b_j - b_{j-1})`, which only charges
/// increases along the path. Returns the value and its gradient.
pub fn ordering_penalty(beta_path: &[f64], lambda: f64, hinge: bool) -> (f64, Vec<f64>) {
    let m = beta_path.len();
    let mut grad = vec![0.0; m];
    if m < 2 {
        return (0.0, grad);
    }
    if !hinge {
        grad[0] = -lambda;
        grad[m - 1] += lambda;
        return (lambda * (beta_path[m - 1] - beta_path[0]), grad);
    }
    let mut value = 0.0;
    for j in 1..m {
        let d = beta_path[j] - beta_path[j - 1];
        if d > 0.0 {
            value += lambda * d;
            grad[j] += lambda;
            grad[j - 1] -= lambda;
        }
    }
    (value, grad)
}

/// A Gumbel-softmax draw.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample {
    pub soft: SimplexPoint,
    pub hard: usize,
    /// The standard Gumbel noise that was added to the logits.
    pub noise: Vec<f64>,
}

/// Standard Gumbel noise `-ln(-ln U)`.
pub fn gumbel_noise<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `soft = softmax((logits + g) / tau)`, `hard = argmax(soft)`.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> Result<GumbelSample> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("Gumbel temperature must be positive, got {temperature}")));
    }
    check_finite(logits)?;
    let noise = gumbel_noise(logits.len(), rng);
    let scaled: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| (l + g) / temperature).collect();
    let soft = softmax_norm(&scaled);
    let hard = argmax(&soft);
    Ok(GumbelSample {
        soft: SimplexPoint(soft),
        hard,
        noise,
    })
}

/// Which normalizer turns architecture logits into mixture weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalizer {
    Softmax,
    Sparsestmax,
}

impl Normalizer {
    pub fn apply(self, v: &[f64], r: f64) -> Result<SimplexPoint> {
        match self {
            Normalizer::Softmax => softmax(v),
            Normalizer::Sparsestmax => sparsestmax(v, r),
        }
    }

    /// Records the normalization of a rank-1 graph variable.
    pub fn apply_var(self, g: &mut Graph, v: Var, r: f64) -> Result<Var> {
        match self {
            Normalizer::Softmax => g.softmax(v),
            Normalizer::Sparsestmax => {
                let (p, jac) = sparsestmax_with_jacobian(g.value(v).data(), r)?;
                g.vector_fn(v, p.into_vec(), Box::new(jac))
            }
        }
    }
}

/// Soft Gumbel path in the graph: `softmax((logits + noise) / tau)`.
pub fn gumbel_soft_var(g: &mut Graph, logits: Var, noise: &[f64], temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("Gumbel temperature must be positive, got {temperature}")));
    }
    let n = g.constant(Tensor::from_vec(noise.to_vec()));
    let shifted = g.add(logits, n)?;
    let scaled = g.scale(shifted, 1.0 / temperature);
    g.softmax(scaled)
}

/// Records [`ordering_penalty`] on a rank-1 logit variable.
pub fn ordering_penalty_var(g: &mut Graph, beta_path: Var, lambda: f64, hinge: bool) -> Result<Var> {
    let m = g.value(beta_path).len();
    if m < 2 {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(zero);
    }
    if !hinge {
        let last = g.index(beta_path, m - 1)?;
        let first = g.index(beta_path, 0)?;
        let d = g.sub(last, first)?;
        return Ok(g.scale(d, lambda));
    }
    let tail = g.narrow(beta_path, 0, 1, m - 1)?;
    let head = g.narrow(beta_path, 0, 0, m - 1)?;
    let d = g.sub(tail, head)?;
    let pos = g.relu(d);
    let s = g.sum(pos);
    Ok(g.scale(s, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap().values(), &[0.5, 0.5]);
        let a = softmax(&[0.3, -1.2, 2.0]).unwrap();
        let b = softmax(&[100.3, 98.8, 102.0]).unwrap();
        assert!(close(a.values(), b.values(), 1e-12));
        let c = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!(close(c.values(), &[0.25, 0.75], 1e-15));
        assert!(softmax(&[-800.0, 0.0]).unwrap().values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sparsemax_examples() {
        let p = sparsemax(&[0.3, 0.3, 0.4]).unwrap();
        assert!(close(p.values(), &[0.3, 0.3, 0.4], 1e-15));
        assert_eq!(sparsemax(&[1.5, 0.2, 0.3]).unwrap().values(), &[1.0, 0.0, 0.0]);
        let a = sparsemax(&[0.1, 0.5, 0.2, -0.4]).unwrap();
        let b = sparsemax(&[7.1, 7.5, 7.2, 6.6]).unwrap();
        assert!(close(a.values(), b.values(), 1e-12));
    }

    #[test]
    fn sparsestmax_at_zero_radius_is_sparsemax() {
        let v = [0.2, -0.1, 0.4, 0.05];
        assert_eq!(sparsestmax(&v, 0.0).unwrap(), sparsemax(&v).unwrap());
    }

    #[test]
    fn sparsestmax_tied_pair_at_circumradius() {
        let rc = circumradius(2);
        assert_eq!(sparsestmax(&[0.5, 0.5], rc).unwrap().values(), &[1.0, 0.0]);
    }

    #[test]
    fn sparsestmax_three_way_at_circumradius() {
        let rc = circumradius(3);
        assert_eq!(sparsestmax(&[0.6, 0.3, 0.1], rc).unwrap().values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sparsestmax_rejects_bad_radius() {
        assert!(sparsestmax(&[0.1, 0.2], -0.1).is_err());
        assert!(sparsestmax(&[0.1, 0.2], 0.8).is_err());
        assert!(sparsestmax(&[f64::NAN, 0.2], 0.1).is_err());
    }

    #[test]
    fn fully_tied_input_escapes_toward_lowest_index() {
        let p = sparsestmax(&[0.0, 0.0, 0.0], 0.2).unwrap();
        assert!(p.values()[0] > p.values()[1]);
        assert_eq!(p.values()[1], p.values()[2]);
        assert!((p.distance_to_center() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn radial_case_lands_on_sphere() {
        let v = [0.30, 0.36, 0.34];
        let r = 0.3;
        let p = sparsestmax(&v, r).unwrap();
        assert!((p.distance_to_center() - r).abs() < 1e-12);
        assert_eq!(p.argmax(), 1);
    }

    #[test]
    fn jacobian_rows_sum_to_zero_and_kill_constant_direction() {
        let v = [0.2, 0.3, 0.25];
        let (_, jac) = sparsestmax_with_jacobian(&v, 0.0).unwrap();
        for row in jac.to_matrix() {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        let g = sparsestmax_grad(&v, 0.0, &[1.0, 1.0, 1.0]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn sparsestmax_grad_matches_finite_differences_k4() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = 0.3 * circumradius(4);
        let mut checked = 0;
        while checked < 20 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let up: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-6;
            let (_, jac0) = sparsestmax_with_jacobian(&v, r).unwrap();
            let mut num = vec![0.0; 4];
            let mut stable = true;
            for i in 0..4 {
                let mut vp = v.clone();
                vp[i] += h;
                let mut vm = v.clone();
                vm[i] -= h;
                let (pp, jp) = sparsestmax_with_jacobian(&vp, r).unwrap();
                let (pm, jm) = sparsestmax_with_jacobian(&vm, r).unwrap();
                stable &= std::mem::discriminant(&jp) == std::mem::discriminant(&jac0)
                    && std::mem::discriminant(&jm) == std::mem::discriminant(&jac0);
                let fp: f64 = pp.values().iter().zip(&up).map(|(a, b)| a * b).sum();
                let fm: f64 = pm.values().iter().zip(&up).map(|(a, b)| a * b).sum();
                num[i] = (fp - fm) / (2.0 * h);
            }
            if !stable {
                continue;
            }
            let ana = sparsestmax_grad(&v, r, &up).unwrap();
            let diff: f64 = ana.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = ana.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            assert!(diff / scale <= 1e-4 || diff <= 1e-9, "{ana:?} vs {num:?}");
            checked += 1;
        }
    }

    #[test]
    fn ordering_penalty_examples() {
        let (v, g) = ordering_penalty(&[0.2, 0.9, 0.5], 0.1, false);
        assert!((v - 0.1 * (0.5 - 0.2)).abs() < 1e-15);
        assert_eq!(g, vec![-0.1, 0.0, 0.1]);
        let (v, g) = ordering_penalty(&[0.9, 0.5, 0.5, 0.1], 0.3, true);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
        let (v, _) = ordering_penalty(&[0.1, 0.5, 0.2], 0.1, true);
        assert!((v - 0.04).abs() < 1e-15);
        assert_eq!(ordering_penalty(&[3.0], 1.0, false).0, 0.0);
    }

    #[test]
    fn ordering_penalty_var_matches_plain() {
        for hinge in [false, true] {
            let beta = [0.1, 0.5, 0.2, 0.6];
            let mut g = Graph::new();
            let b = g.leaf(Tensor::from_vec(beta.to_vec()));
            let pen = ordering_penalty_var(&mut g, b, 0.1, hinge).unwrap();
            let val = g.value(pen).item().unwrap();
            let grads = g.backward(pen).unwrap();
            let (pv, pg) = ordering_penalty(&beta, 0.1, hinge);
            assert!((val - pv).abs() < 1e-15);
            assert!(close(grads.get(b).data(), &pg, 1e-15));
        }
    }

    #[test]
    fn gumbel_limits_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ones = 0;
        for _ in 0..1000 {
            let s = gumbel_softmax_sample(&[0.0, 10.0], 1e-6, &mut rng).unwrap();
            if s.hard == 1 {
                ones += 1;
                assert!(s.soft.values()[1] > 0.999_999);
            }
        }
        assert!(ones >= 999);

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..16)
                .map(|_| gumbel_softmax_sample(&[0.1, 0.2, 0.3], 0.7, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert!(gumbel_softmax_sample(&[0.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn gumbel_hard_index_is_uniform_for_equal_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let k = 5;
        let n = 100_000;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[gumbel_softmax_sample(&[0.0; 5], 1.0, &mut rng).unwrap().hard] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() <= 0.02 * 0.2, "{freq}");
        }
    }

    #[test]
    fn radius_schedule_ramps_linearly() {
        let s = RadiusSchedule::for_simplex(3, 10);
        assert_eq!(s.radius(0), 0.0);
        assert_eq!(s.radius(10), circumradius(3));
        assert_eq!(s.radius(25), circumradius(3));
        assert!((0..10).all(|t| s.radius(t) <= s.radius(t + 1)));
    }

    #[test]
    fn simplex_point_validation() {
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![1.1, -0.1]).is_err());
        let p = SimplexPoint::new(vec![1.0 + 1e-13, -1e-13]).unwrap();
        assert_eq!(p.values()[1], 0.0);
        assert!(SimplexPoint::one_hot(3, 2).is_one_hot());
        assert!(!SimplexPoint::uniform(3).is_one_hot());
    }
}
