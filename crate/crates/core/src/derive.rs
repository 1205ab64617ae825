//! Discrete architectures read off a searched supernet, with exact
//! parameter and FLOPs counts.
//!
//! FLOPs convention: 2 per multiply-accumulate, 1 per elementwise output
//! (activations, residual adds). Bias adds ride along with the MACs; the
//! search-time mixture multiplies and channel padding are free.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ndgraph::{Binder, Graph, Var};
use crate::projections::{argmax, Normalizer};
use crate::searchspace::{ratio_widths, ExecStats, OpKind, TreeSupernet, NUM_OPS, NUM_RATIOS};

/// Chosen op and width of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellChoice {
    pub op: OpKind,
    pub ratio: usize,
    pub width: usize,
}

/// A concrete network: the first `terminal + 1` blocks, one op per cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivedArch {
    pub base_width: usize,
    pub scale: usize,
    pub cells_per_block: usize,
    /// Blocks in the supernet the arch was cut from.
    pub supernet_blocks: usize,
    pub terminal: usize,
    /// Block-major, `(terminal + 1) * cells_per_block` entries.
    pub cells: Vec<CellChoice>,
}

impl DerivedArch {
    pub fn blocks(&self) -> usize {
        self.terminal + 1
    }

    /// RiR path encoding, one `0` per kept block.
    pub fn path(&self) -> Vec<u8> {
        vec![0; self.blocks()]
    }

    /// The path as `[0,0,0]`.
    pub fn path_string(&self) -> String {
        let parts: Vec<String> = self.path().iter().map(u8::to_string).collect();
        format!("[{}]", parts.join(","))
    }

    pub fn validate(&self) -> Result<()> {
        let widths = ratio_widths(self.base_width)?;
        if self.terminal >= self.supernet_blocks {
            return Err(Error::invalid(format!(
                "terminal node {} beyond {} blocks",
                self.terminal, self.supernet_blocks
            )));
        }
        if self.cells.len() != self.blocks() * self.cells_per_block {
            return Err(Error::invalid(format!(
                "{} cells for {} blocks of {}",
                self.cells.len(),
                self.blocks(),
                self.cells_per_block
            )));
        }
        for c in &self.cells {
            if c.ratio >= NUM_RATIOS || widths[c.ratio] != c.width {
                return Err(Error::invalid(format!("width {} does not match ratio {}", c.width, c.ratio)));
            }
        }
        Ok(())
    }
}

/// Per-pixel FLOPs of an op at internal width `c` is `a * c + b`.
pub fn op_flops_coeffs(kind: OpKind, w: usize) -> (u64, u64) {
    let w = w as u64;
    match kind {
        OpKind::Conv1x1 => (2 * w + 1, 0),
        OpKind::Conv3x3 => (18 * w + 1, 0),
        OpKind::ResidualBlock => (36 * w + 1, w),
        OpKind::DepthwiseBlock => (4 * w + 20, 0),
    }
}

/// Learnable scalars of an op at internal width `c`.
pub fn op_params(kind: OpKind, w: usize, c: usize) -> u64 {
    let (w, c) = (w as u64, c as u64);
    match kind {
        OpKind::Conv1x1 => w * c + c,
        OpKind::Conv3x3 => 9 * w * c + c,
        OpKind::ResidualBlock => 9 * w * c + c + 9 * c * w + w,
        OpKind::DepthwiseBlock => (w * c + c) + (9 * c + c) + (c * w + w),
    }
}

/// Per-pixel FLOPs of the stem and tail, and the per-pixel cost of a block skip.
pub fn fixed_flops_per_pixel(base_width: usize, scale: usize) -> (u64, u64, u64) {
    let w = base_width as u64;
    let out = 3 * (scale * scale) as u64;
    (18 * 3 * w, 18 * w * out, w)
}

/// FLOPs at LR input resolution `h x w`.
pub fn count_flops(arch: &DerivedArch, h: usize, w: usize) -> u64 {
    let hw = (h * w) as u64;
    let (stem, tail, skip) = fixed_flops_per_pixel(arch.base_width, arch.scale);
    let cells: u64 = arch
        .cells
        .iter()
        .map(|c| {
            let (a, b) = op_flops_coeffs(c.op, arch.base_width);
            a * c.width as u64 + b
        })
        .sum();
    (stem + tail + skip * arch.blocks() as u64 + cells) * hw
}

/// Kernels plus biases, stem and tail included.
pub fn count_params(arch: &DerivedArch) -> u64 {
    let w = arch.base_width as u64;
    let out = 3 * (arch.scale * arch.scale) as u64;
    let stem = 27 * w + w;
    let tail = 9 * w * out + out;
    let cells: u64 = arch.cells.iter().map(|c| op_params(c.op, arch.base_width, c.width)).sum();
    stem + tail + cells
}

/// Reads the discrete architecture off the supernet's logits: argmax of the
/// normalized cell and node weights (at radius `r`) and of each chosen op's
/// ratio logits. Ties go to the lowest index; blocks past the terminal node
/// are dropped.
pub fn derive_architecture(net: &TreeSupernet, normalizer: Normalizer, r: f64) -> Result<DerivedArch> {
    let beta = normalizer.apply(net.arch.get(net.beta).data(), r)?;
    let terminal = beta.argmax();
    let widths = ratio_widths(net.dims.base_width)?;
    let keep = (terminal + 1) * net.dims.cells_per_block;
    let mut cells = Vec::with_capacity(keep);
    for cell in &net.cells[..keep] {
        let alpha = normalizer.apply(net.arch.get(cell.alpha).data(), r)?;
        let o = alpha.argmax();
        let ratio = argmax(net.arch.get(cell.ops[o].gamma).data());
        cells.push(CellChoice {
            op: OpKind::ALL[o],
            ratio,
            width: widths[ratio],
        });
    }
    Ok(DerivedArch {
        base_width: net.dims.base_width,
        scale: net.dims.scale,
        cells_per_block: net.dims.cells_per_block,
        supernet_blocks: net.dims.blocks,
        terminal,
        cells,
    })
}

/// Runs `arch` with the supernet's shared weights. This is the supernet
/// forward under exactly one-hot weights, so the two agree bit for bit.
pub fn derived_forward(
    net: &TreeSupernet,
    arch: &DerivedArch,
    g: &mut Graph,
    b: &mut Binder,
    x: Var,
    stats: &mut ExecStats,
) -> Result<Var> {
    arch.validate()?;
    if arch.base_width != net.dims.base_width
        || arch.scale != net.dims.scale
        || arch.cells_per_block != net.dims.cells_per_block
        || arch.supernet_blocks != net.dims.blocks
    {
        return Err(Error::invalid("architecture does not fit this supernet"));
    }
    let total = net.cells.len();
    let mut ops = vec![0; total];
    let mut ratios = vec![[NUM_RATIOS - 1; NUM_OPS]; total];
    for (i, c) in arch.cells.iter().enumerate() {
        ops[i] = c.op.index();
        ratios[i][c.op.index()] = c.ratio;
    }
    let choice = net.one_hot_choice(g, arch.terminal, &ops, &ratios);
    net.tree_forward(g, b, x, &choice, false, stats)
}

impl fmt::Display for DerivedArch {
    /// One line per block, each cell as `(op, width)`. Parsing maps a width
    /// back to the lowest ratio producing it.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "path {}", self.path_string())?;
        writeln!(f, "base_width {}", self.base_width)?;
        writeln!(f, "scale {}", self.scale)?;
        writeln!(f, "cells_per_block {}", self.cells_per_block)?;
        writeln!(f, "supernet_blocks {}", self.supernet_blocks)?;
        for (b, chunk) in self.cells.chunks(self.cells_per_block).enumerate() {
            write!(f, "block {b}:")?;
            for c in chunk {
                write!(f, " ({}, {})", c.op.name(), c.width)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl FromStr for DerivedArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format {
            what: "architecture".into(),
            offset: line,
            msg: msg.into(),
        };
        let mut fields = [None::<usize>; 4];
        let mut path_len = None;
        let mut rows: Vec<Vec<(OpKind, usize)>> = Vec::new();
        let mut offset = 0;
        for line in s.lines() {
            let here = offset;
            offset += line.len() + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(' ').ok_or_else(|| bad(here, "expected `key value`"))?;
            let rest = rest.trim();
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(here, "expected an integer"));
            match key {
                "path" => {
                    let inner = rest
                        .strip_prefix('[')
                        .and_then(|r| r.strip_suffix(']'))
                        .ok_or_else(|| bad(here, "path must be bracketed"))?;
                    if inner.split(',').any(|b| b.trim() != "0") {
                        return Err(bad(here, "path may only contain RiR blocks"));
                    }
                    path_len = Some(inner.split(',').count());
                }
                "base_width" => fields[0] = Some(num(rest)?),
                "scale" => fields[1] = Some(num(rest)?),
                "cells_per_block" => fields[2] = Some(num(rest)?),
                "supernet_blocks" => fields[3] = Some(num(rest)?),
                "block" => {
                    let (idx, cells) = rest.split_once(':').ok_or_else(|| bad(here, "missing `:`"))?;
                    if num(idx.trim())? != rows.len() {
                        return Err(bad(here, "blocks out of order"));
                    }
                    let mut row = Vec::new();
                    for part in cells.split(')') {
                        let part = part.trim();
                        if part.is_empty() {
                            continue;
                        }
                        let inner = part.strip_prefix('(').ok_or_else(|| bad(here, "expected `(op, width)`"))?;
                        let (op, width) = inner.split_once(',').ok_or_else(|| bad(here, "expected `(op, width)`"))?;
                        let op = OpKind::from_name(op.trim()).ok_or_else(|| bad(here, "unknown op"))?;
                        row.push((op, num(width.trim())?));
                    }
                    rows.push(row);
                }
                _ => return Err(bad(here, "unknown key")),
            }
        }
        let [Some(base_width), Some(scale), Some(cells_per_block), Some(supernet_blocks)] = fields else {
            return Err(bad(offset, "missing header field"));
        };
        let blocks = path_len.ok_or_else(|| bad(offset, "missing path"))?;
        if rows.len() != blocks {
            return Err(bad(offset, "path length disagrees with block rows"));
        }
        let widths = ratio_widths(base_width)?;
        let mut cells = Vec::new();
        for row in rows {
            if row.len() != cells_per_block {
                return Err(bad(offset, "wrong number of cells in a block"));
            }
            for (op, width) in row {
                let ratio = widths
                    .iter()
                    .position(|w| *w == width)
                    .ok_or_else(|| bad(offset, "width is not an expansion ratio of the base width"))?;
                cells.push(CellChoice { op, ratio, width });
            }
        }
        let arch = DerivedArch {
            base_width,
            scale,
            cells_per_block,
            supernet_blocks,
            terminal: blocks - 1,
            cells,
        };
        arch.validate()?;
        Ok(arch)
    }
}
