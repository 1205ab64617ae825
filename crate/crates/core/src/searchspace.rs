//! The searchable network: a stem conv, a chain of residual-in-residual
//! blocks of supercells, and a fixed pixel-shuffle tail.
//!
//! Every block output is a node of the tree; any prefix of blocks is a
//! candidate path. Each supercell mixes four candidate ops, and each op owns a
//! superkernel whose internal width is one of five expansion ratios.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndgraph::{Binder, Graph, ParamId, ParamStore, Tensor, Var};

/// Expansion ratios, narrowest first.
pub const RATIOS: [f64; 5] = [1.0 / 3.0, 0.5, 0.8, 5.0 / 6.0, 1.0];
pub const NUM_RATIOS: usize = RATIOS.len();
pub const NUM_OPS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv1x1,
    Conv3x3,
    /// Two 3x3 convs with an identity skip.
    ResidualBlock,
    /// 1x1, depthwise 3x3, 1x1.
    DepthwiseBlock,
}

impl OpKind {
    pub const ALL: [OpKind; NUM_OPS] = [
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::ResidualBlock,
        OpKind::DepthwiseBlock,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::ResidualBlock => "resblock",
            OpKind::DepthwiseBlock => "dwblock",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// A candidate op instantiated at a base width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CandidateOp {
    pub kind: OpKind,
    pub base_width: usize,
}

/// Sliced widths `round(phi * base_width)` for every ratio.
pub fn ratio_widths(base_width: usize) -> Result<[usize; NUM_RATIOS]> {
    let mut out = [0; NUM_RATIOS];
    for (o, phi) in out.iter_mut().zip(RATIOS) {
        *o = (phi * base_width as f64).round() as usize;
        if *o == 0 {
            return Err(Error::invalid(format!(
                "base width {base_width} leaves ratio {phi:.3} with no channels"
            )));
        }
    }
    Ok(out)
}

/// Backbone dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupernetDims {
    pub blocks: usize,
    pub cells_per_block: usize,
    pub base_width: usize,
    pub scale: usize,
    pub leaky_slope: f64,
}

impl Default for SupernetDims {
    fn default() -> Self {
        SupernetDims {
            blocks: 3,
            cells_per_block: 3,
            base_width: 16,
            scale: 2,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParam {
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// One candidate op's full-width weights plus its ratio logits.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperKernel {
    pub op: CandidateOp,
    pub convs: Vec<ConvParam>,
    pub gamma: ParamId,
    pub widths: [usize; NUM_RATIOS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperCell {
    pub ops: [SuperKernel; NUM_OPS],
    pub alpha: ParamId,
}

/// Shared-weight supernet. Weights and architecture logits live in separate
/// stores so the two optimizers never touch each other's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSupernet {
    pub dims: SupernetDims,
    pub weights: ParamStore,
    pub arch: ParamStore,
    pub stem: ConvParam,
    pub tail: ConvParam,
    /// Block-major: cell `c` of block `b` is at `b * cells_per_block + c`.
    pub cells: Vec<SuperCell>,
    pub beta: ParamId,
}

/// Ratio selection for one superkernel. `gate`, when present, is a scalar
/// multiplied onto the branch output (a straight-through Gumbel selector).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelChoice {
    pub ratio: usize,
    pub gate: Option<Var>,
}

/// Normalized architecture weights for one forward pass.
#[derive(Clone, Debug)]
pub struct ArchChoice {
    /// Rank-1, one entry per node.
    pub beta: Var,
    /// Rank-1 of length 4 per cell.
    pub alpha: Vec<Var>,
    pub kernels: Vec<[KernelChoice; NUM_OPS]>,
}

/// Work actually performed by a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub blocks: usize,
    pub branches: usize,
}

fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("nonzero extents")
}

fn add_conv<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    cout: usize,
    cin_per_group: usize,
    k: usize,
    rng: &mut R,
) -> ConvParam {
    let kernel = store.insert(
        format!("{name}.w"),
        he_uniform(&[cout, cin_per_group, k, k], cin_per_group * k * k, rng),
    );
    let bias = store.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    ConvParam { kernel, bias }
}

/// Builds a supernet with He-uniform weights, zero biases and zero
/// (uniform after normalization) architecture logits.
pub fn build_supernet<R: Rng + ?Sized>(dims: SupernetDims, rng: &mut R) -> Result<TreeSupernet> {
    if dims.blocks == 0 || dims.cells_per_block == 0 || dims.scale == 0 {
        return Err(Error::invalid(format!("degenerate backbone {dims:?}")));
    }
    let w = dims.base_width;
    let widths = ratio_widths(w)?;
    let mut weights = ParamStore::new();
    let mut arch = ParamStore::new();
    let stem = add_conv(&mut weights, "stem", w, 3, 3, rng);
    let mut cells = Vec::with_capacity(dims.blocks * dims.cells_per_block);
    for b in 0..dims.blocks {
        for c in 0..dims.cells_per_block {
            let prefix = format!("b{b}.c{c}");
            let mut ops = Vec::with_capacity(NUM_OPS);
            for kind in OpKind::ALL {
                let name = format!("{prefix}.{}", kind.name());
                let convs = match kind {
                    OpKind::Conv1x1 => vec![add_conv(&mut weights, &name, w, w, 1, rng)],
                    OpKind::Conv3x3 => vec![add_conv(&mut weights, &name, w, w, 3, rng)],
                    OpKind::ResidualBlock => vec![
                        add_conv(&mut weights, &format!("{name}.0"), w, w, 3, rng),
                        add_conv(&mut weights, &format!("{name}.1"), w, w, 3, rng),
                    ],
                    OpKind::DepthwiseBlock => vec![
                        add_conv(&mut weights, &format!("{name}.pw0"), w, w, 1, rng),
                        add_conv(&mut weights, &format!("{name}.dw"), w, 1, 3, rng),
                        add_conv(&mut weights, &format!("{name}.pw1"), w, w, 1, rng),
                    ],
                };
                let gamma = arch.insert(format!("{name}.gamma"), Tensor::zeros(&[NUM_RATIOS]));
                ops.push(SuperKernel {
                    op: CandidateOp { kind, base_width: w },
                    convs,
                    gamma,
                    widths,
                });
            }
            let alpha = arch.insert(format!("{prefix}.alpha"), Tensor::zeros(&[NUM_OPS]));
            let ops: [SuperKernel; NUM_OPS] = ops.try_into().expect("four ops");
            cells.push(SuperCell { ops, alpha });
        }
    }
    let tail = add_conv(&mut weights, "tail", 3 * dims.scale * dims.scale, w, 3, rng);
    let beta = arch.insert("beta", Tensor::zeros(&[dims.blocks]));
    Ok(TreeSupernet {
        dims,
        weights,
        arch,
        stem,
        tail,
        cells,
        beta,
    })
}

/// Path descriptors in the RiR encoding: path `j` is `j + 1` zeros.
pub fn enumerate_paths(net: &TreeSupernet) -> Vec<Vec<u8>> {
    (0..net.dims.blocks).map(|j| vec![0; j + 1]).collect()
}

impl TreeSupernet {
    pub fn num_nodes(&self) -> usize {
        self.dims.blocks
    }

    pub fn cell(&self, block: usize, cell: usize) -> &SuperCell {
        &self.cells[block * self.dims.cells_per_block + cell]
    }

    /// All ratio-logit parameters, cell-major then op order.
    pub fn gamma_ids(&self) -> Vec<ParamId> {
        self.cells.iter().flat_map(|c| c.ops.iter().map(|k| k.gamma)).collect()
    }

    pub fn alpha_ids(&self) -> Vec<ParamId> {
        self.cells.iter().map(|c| c.alpha).collect()
    }

    /// Redraws every weight (not the architecture logits).
    pub fn reinit_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let fresh = build_supernet(self.dims, rng)?;
        self.weights = fresh.weights;
        Ok(())
    }

    fn conv(&self, g: &mut Graph, b: &mut Binder, p: ConvParam, x: Var) -> Result<Var> {
        let k = b.var(g, p.kernel);
        let bias = b.var(g, p.bias);
        let ks = g.shape(k)[2];
        g.conv2d(x, k, Some(bias), ks / 2, 1)
    }

    /// Conv keeping the first `c` output channels (and optionally only the
    /// first `cin` input channels) of the full kernel.
    #[allow(clippy::too_many_arguments)]
    fn sliced_conv(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        p: ConvParam,
        x: Var,
        cout: Option<usize>,
        cin: Option<usize>,
        groups: usize,
    ) -> Result<Var> {
        let mut k = b.var(g, p.kernel);
        let mut bias = b.var(g, p.bias);
        if let Some(c) = cout.filter(|&c| c < g.shape(k)[0]) {
            k = g.narrow(k, 0, 0, c)?;
            bias = g.narrow(bias, 0, 0, c)?;
        }
        if let Some(c) = cin.filter(|&c| c < g.shape(k)[1]) {
            k = g.narrow(k, 1, 0, c)?;
        }
        let ks = g.shape(k)[2];
        g.conv2d(x, k, Some(bias), ks / 2, groups)
    }

    /// One candidate op at the width of `ratio`. Maps `[N, w, h, w]` to the
    /// same shape; unused trailing kernel channels get no gradient.
    pub fn superkernel_forward(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        kernel: &SuperKernel,
        x: Var,
        ratio: usize,
    ) -> Result<Var> {
        if ratio >= NUM_RATIOS {
            return Err(Error::invalid(format!("ratio index {ratio} out of range")));
        }
        let w = self.dims.base_width;
        let c = kernel.widths[ratio];
        let slope = self.dims.leaky_slope;
        let cv = &kernel.convs;
        match kernel.op.kind {
            OpKind::Conv1x1 | OpKind::Conv3x3 => {
                let y = self.sliced_conv(g, b, cv[0], x, Some(c), None, 1)?;
                let y = g.leaky_relu(y, slope);
                g.pad_axis(y, 1, w)
            }
            OpKind::ResidualBlock => {
                let h = self.sliced_conv(g, b, cv[0], x, Some(c), None, 1)?;
                let h = g.leaky_relu(h, slope);
                let y = self.sliced_conv(g, b, cv[1], h, None, Some(c), 1)?;
                g.add(x, y)
            }
            OpKind::DepthwiseBlock => {
                let h = self.sliced_conv(g, b, cv[0], x, Some(c), None, 1)?;
                let h = g.leaky_relu(h, slope);
                let h = self.sliced_conv(g, b, cv[1], h, Some(c), None, c)?;
                let h = g.leaky_relu(h, slope);
                self.sliced_conv(g, b, cv[2], h, None, Some(c), 1)
            }
        }
    }

    /// `sum_o alpha_o * op_o(x)`, skipping ops whose weight is exactly zero.
    pub fn supercell_forward(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        cell: &SuperCell,
        x: Var,
        alpha: Var,
        kernels: &[KernelChoice; NUM_OPS],
        stats: &mut ExecStats,
    ) -> Result<Var> {
        let weights = g.value(alpha).data().to_vec();
        if weights.len() != NUM_OPS {
            return Err(Error::shape("supercell_forward", "alpha", format!("length {}", weights.len())));
        }
        let mut acc: Option<Var> = None;
        for (o, kernel) in cell.ops.iter().enumerate() {
            if weights[o] == 0.0 {
                continue;
            }
            let mut y = self.superkernel_forward(g, b, kernel, x, kernels[o].ratio)?;
            if let Some(gate) = kernels[o].gate {
                y = g.mul(gate, y)?;
            }
            let wo = g.index(alpha, o)?;
            let term = g.mul(wo, y)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
            stats.branches += 1;
        }
        match acc {
            Some(a) => Ok(a),
            None => {
                let zeros = Tensor::zeros(g.shape(x));
                Ok(g.constant(zeros))
            }
        }
    }

    /// Full supernet output for an LR batch `[N, 3, h, w]`.
    ///
    /// Fuse-then-tail: `tail(sum_j beta_j f_j)`. With `per_node_tail` the tail
    /// runs on every weighted node instead: `sum_j beta_j tail(f_j)`. Blocks
    /// past the last nonzero node weight are not executed.
    pub fn tree_forward(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        x: Var,
        choice: &ArchChoice,
        per_node_tail: bool,
        stats: &mut ExecStats,
    ) -> Result<Var> {
        let ncells = self.cells.len();
        if choice.alpha.len() != ncells || choice.kernels.len() != ncells {
            return Err(Error::shape(
                "tree_forward",
                "cells",
                format!("{} alphas / {} kernel choices for {ncells} cells", choice.alpha.len(), choice.kernels.len()),
            ));
        }
        let beta = g.value(choice.beta).data().to_vec();
        if beta.len() != self.num_nodes() {
            return Err(Error::shape("tree_forward", "beta", format!("length {}", beta.len())));
        }
        let last = beta
            .iter()
            .rposition(|v| *v != 0.0)
            .ok_or_else(|| Error::invalid("node weights are all zero"))?;

        let mut h = self.conv(g, b, self.stem, x)?;
        let mut acc: Option<Var> = None;
        let cpb = self.dims.cells_per_block;
        for (blk, &bw) in beta.iter().enumerate().take(last + 1) {
            let mut y = h;
            for ci in blk * cpb..(blk + 1) * cpb {
                y = self.supercell_forward(g, b, &self.cells[ci], y, choice.alpha[ci], &choice.kernels[ci], stats)?;
            }
            h = g.add(h, y)?;
            stats.blocks += 1;
            if bw == 0.0 {
                continue;
            }
            let node = if per_node_tail { self.tail_forward(g, b, h)? } else { h };
            let wj = g.index(choice.beta, blk)?;
            let term = g.mul(wj, node)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        let fused = acc.expect("at least one nonzero node");
        if per_node_tail {
            Ok(fused)
        } else {
            self.tail_forward(g, b, fused)
        }
    }

    fn tail_forward(&self, g: &mut Graph, b: &mut Binder, h: Var) -> Result<Var> {
        let t = self.conv(g, b, self.tail, h)?;
        g.pixel_shuffle(t, self.dims.scale)
    }

    /// Fixed one-hot choice: `alpha` one-hot at `ops[i]`, `beta` one-hot at
    /// `terminal`, no gates.
    pub fn one_hot_choice(&self, g: &mut Graph, terminal: usize, ops: &[usize], ratios: &[[usize; NUM_OPS]]) -> ArchChoice {
        let one_hot = |k: usize, i: usize| {
            let mut v = vec![0.0; k];
            v[i] = 1.0;
            Tensor::from_vec(v)
        };
        let beta = g.constant(one_hot(self.num_nodes(), terminal));
        let alpha = ops.iter().map(|&o| g.constant(one_hot(NUM_OPS, o))).collect();
        let kernels = ratios
            .iter()
            .map(|r| r.map(|ratio| KernelChoice { ratio, gate: None }))
            .collect();
        ArchChoice { beta, alpha, kernels }
    }
}
