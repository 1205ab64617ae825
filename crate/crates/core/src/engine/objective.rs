use crate::derive::{fixed_flops_per_pixel, op_flops_coeffs};
use crate::error::{Error, Result};
use crate::ndgraph::{Graph, Tensor, Var};
use crate::projections::ordering_penalty_var;
use crate::searchspace::{TreeSupernet, NUM_OPS};

/// Mean absolute error between student and teacher outputs.
pub fn content_loss(g: &mut Graph, student: Var, teacher: Var) -> Result<Var> {
    if g.shape(student) != g.shape(teacher) {
        return Err(Error::shape(
            "content_loss",
            "operands",
            format!("{:?} vs {:?}", g.shape(student), g.shape(teacher)),
        ));
    }
    let d = g.sub(student, teacher)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// Expected FLOPs of the supernet at LR resolution `h x w` under normalized
/// node weights `beta`, cell weights `alpha` and per-kernel ratio
/// probabilities `gamma_probs`:
///
/// `sum_j beta_j * cost(blocks 0..=j) + stem + tail`, where a cell costs
/// `sum_o alpha_o * flops(o at E[width])`.
///
/// Every per-op count is affine in the width, so under one-hot inputs this
/// equals the discrete count exactly.
pub fn efficiency_cost(
    g: &mut Graph,
    net: &TreeSupernet,
    alpha: &[Var],
    beta: Var,
    gamma_probs: &[[Var; NUM_OPS]],
    h: usize,
    w: usize,
) -> Result<Var> {
    let ncells = net.cells.len();
    if alpha.len() != ncells || gamma_probs.len() != ncells || g.value(beta).len() != net.num_nodes() {
        return Err(Error::shape("efficiency_cost", "architecture", "weights do not match the supernet"));
    }
    let hw = (h * w) as f64;
    let bw = net.dims.base_width;
    let (stem, tail, skip) = fixed_flops_per_pixel(bw, net.dims.scale);
    let widths = Tensor::from_vec(net.cells[0].ops[0].widths.iter().map(|&c| c as f64).collect());
    let widths = g.constant(widths);

    let cpb = net.dims.cells_per_block;
    let mut cumulative: Option<Var> = None;
    let mut total: Option<Var> = None;
    for blk in 0..net.num_nodes() {
        let mut block = g.constant(Tensor::scalar(skip as f64 * hw));
        for ci in blk * cpb..(blk + 1) * cpb {
            for (o, kernel) in net.cells[ci].ops.iter().enumerate() {
                let (a, b) = op_flops_coeffs(kernel.op.kind, bw);
                let probs = gamma_probs[ci][o];
                let ew = g.mul(probs, widths)?;
                let ew = g.sum(ew);
                let cost = g.scale(ew, a as f64 * hw);
                let offset = g.constant(Tensor::scalar(b as f64 * hw));
                let cost = g.add(cost, offset)?;
                let ao = g.index(alpha[ci], o)?;
                let term = g.mul(ao, cost)?;
                block = g.add(block, term)?;
            }
        }
        let cum = match cumulative {
            Some(c) => g.add(c, block)?,
            None => block,
        };
        cumulative = Some(cum);
        let bj = g.index(beta, blk)?;
        let term = g.mul(bj, cum)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let fixed = g.constant(Tensor::scalar((stem + tail) as f64 * hw));
    g.add(total.expect("at least one node"), fixed)
}

/// Ordering penalty summed over every path (each prefix of the node logits).
pub fn path_ordering_penalty(g: &mut Graph, beta_logits: Var, lambda: f64, hinge: bool) -> Result<Var> {
    let m = g.value(beta_logits).len();
    let mut total = g.constant(Tensor::scalar(0.0));
    for len in 2..=m {
        let path = g.narrow(beta_logits, 0, 0, len)?;
        let p = ordering_penalty_var(g, path, lambda, hinge)?;
        total = g.add(total, p)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive::{count_flops, CellChoice, DerivedArch};
    use crate::searchspace::{build_supernet, ratio_widths, OpKind, SupernetDims, NUM_RATIOS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(g: &mut Graph, k: usize, i: usize) -> Var {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        g.constant(Tensor::from_vec(v))
    }

    #[test]
    fn content_loss_values() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[1, 3, 2, 2], 0.25));
        let b = g.constant(Tensor::full(&[1, 3, 2, 2], 0.75));
        let l = content_loss(&mut g, a, a).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        let l = content_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).item(), Some(0.5));
        let c = g.constant(Tensor::zeros(&[1, 3, 2, 1]));
        assert!(content_loss(&mut g, a, c).is_err());
    }

    #[test]
    fn one_hot_cost_equals_discrete_count() {
        let dims = SupernetDims::default();
        let net = build_supernet(dims, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let widths = ratio_widths(dims.base_width).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let terminal = rng.gen_range(0..dims.blocks);
            let picks: Vec<(usize, usize)> = (0..net.cells.len())
                .map(|_| (rng.gen_range(0..NUM_OPS), rng.gen_range(0..NUM_RATIOS)))
                .collect();
            let mut g = Graph::new();
            let beta = one_hot(&mut g, dims.blocks, terminal);
            let alpha: Vec<Var> = picks.iter().map(|&(o, _)| one_hot(&mut g, NUM_OPS, o)).collect();
            let gamma: Vec<[Var; NUM_OPS]> = picks
                .iter()
                .map(|&(_, r)| std::array::from_fn(|_| one_hot(&mut g, NUM_RATIOS, r)))
                .collect();
            let h = efficiency_cost(&mut g, &net, &alpha, beta, &gamma, 32, 24).unwrap();
            let keep = (terminal + 1) * dims.cells_per_block;
            let arch = DerivedArch {
                base_width: dims.base_width,
                scale: dims.scale,
                cells_per_block: dims.cells_per_block,
                supernet_blocks: dims.blocks,
                terminal,
                cells: picks[..keep]
                    .iter()
                    .map(|&(o, r)| CellChoice {
                        op: OpKind::ALL[o],
                        ratio: r,
                        width: widths[r],
                    })
                    .collect(),
            };
            assert_eq!(g.value(h).item().unwrap(), count_flops(&arch, 32, 24) as f64);
        }
    }

    #[test]
    fn shallower_beta_costs_less_and_area_scales() {
        let net = build_supernet(SupernetDims::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let cost = |b: Vec<f64>, side: usize| {
            let mut g = Graph::new();
            let beta = g.constant(Tensor::from_vec(b));
            let alpha: Vec<Var> = (0..9).map(|_| g.constant(Tensor::full(&[4], 0.25))).collect();
            let gamma: Vec<[Var; 4]> = (0..9)
                .map(|_| std::array::from_fn(|_| g.constant(Tensor::full(&[5], 0.2))))
                .collect();
            let h = efficiency_cost(&mut g, &net, &alpha, beta, &gamma, side, side).unwrap();
            g.value(h).item().unwrap()
        };
        assert!(cost(vec![0.5, 0.3, 0.2], 16) < cost(vec![0.2, 0.3, 0.5], 16));
        let ratio = cost(vec![0.2, 0.3, 0.5], 32) / cost(vec![0.2, 0.3, 0.5], 16);
        assert!((ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn path_penalty_sums_prefixes() {
        let mut g = Graph::new();
        let b = g.leaf(Tensor::from_vec(vec![0.1, 0.4, 0.3]));
        let p = path_ordering_penalty(&mut g, b, 0.1, false).unwrap();
        // (0.4 - 0.1) + (0.3 - 0.1)
        assert!((g.value(p).item().unwrap() - 0.05).abs() < 1e-15);
        let grads = g.backward(p).unwrap();
        let gb = grads.get(b);
        assert!((gb.data()[0] + 0.2).abs() < 1e-15);
        assert!((gb.data()[1] - 0.1).abs() < 1e-15);
        assert!((gb.data()[2] - 0.1).abs() < 1e-15);
    }
}
