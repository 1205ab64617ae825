//! Three-phase optimization: sandwich pretraining of the shared weights,
//! alternating weight/architecture search, and final training of the
//! derived network.
//!
//! The whole run is a [`RunState`] advanced epoch by epoch, so it can be
//! checkpointed between any two epochs and resumed bit-identically.

mod config;
mod objective;
mod teacher;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{normalizer_name, SearchConfig, TrainMode};
pub use objective::{content_loss, efficiency_cost, path_ordering_penalty};
pub use teacher::TeacherModel;

use crate::dataio::{gen_synthetic, make_pairs, psnr, split, ImagePair};
use crate::derive::{derive_architecture, derived_forward, DerivedArch};
use crate::error::{Error, Result};
use crate::ndgraph::{Adam, Binder, Graph, Tensor, Var};
use crate::projections::{argmax, gumbel_soft_var, gumbel_softmax_sample, gumbel_noise, Normalizer, RadiusSchedule};
use crate::searchspace::{build_supernet, ArchChoice, ExecStats, KernelChoice, TreeSupernet, NUM_OPS, NUM_RATIOS};

/// Stream ids carving independent generators out of the master seed.
const SPLIT_STREAM: u64 = 0x5917;
const TRAIN_STREAM: u64 = 0x7a11;
const SCRATCH_STREAM: u64 = 0x5c7a;

/// One LR input with its teacher target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub lr: Tensor,
    pub target: Tensor,
}

/// Training images (split into weight and architecture halves) plus a
/// held-out validation set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    /// Indices into `train` used for weight steps.
    pub chi1: Vec<usize>,
    /// Indices into `train` used for architecture steps.
    pub chi2: Vec<usize>,
    pub val: Vec<Sample>,
}

impl Dataset {
    /// `num_images + val_images` synthetic textures; the last `val_images`
    /// are held out.
    pub fn synthesize(cfg: &SearchConfig) -> Result<Self> {
        let hr = gen_synthetic(cfg.seed, cfg.num_images + cfg.val_images, cfg.hr_size, cfg.hr_size)?;
        Self::from_pairs(cfg, make_pairs(hr, cfg.scale)?)
    }

    pub fn from_pairs(cfg: &SearchConfig, pairs: Vec<ImagePair>) -> Result<Self> {
        if pairs.len() < cfg.num_images + cfg.val_images {
            return Err(Error::invalid(format!(
                "dataset has {} images, config needs {}",
                pairs.len(),
                cfg.num_images + cfg.val_images
            )));
        }
        let teacher = TeacherModel::new(cfg.seed, cfg.scale);
        let mut samples = pairs
            .into_iter()
            .take(cfg.num_images + cfg.val_images)
            .map(|p| {
                Ok(Sample {
                    id: p.id,
                    target: teacher.apply(&p.lr)?,
                    lr: p.lr,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let val = samples.split_off(cfg.num_images);
        let ids: Vec<usize> = (0..samples.len()).collect();
        let (chi1, chi2) = split(&ids, cfg.seed ^ SPLIT_STREAM);
        Ok(Dataset {
            train: samples,
            chi1,
            chi2,
            val,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Search,
    Final,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Search => "search",
            Phase::Final => "final",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretrain" => Some(Phase::Pretrain),
            "search" => Some(Phase::Search),
            "final" => Some(Phase::Final),
            _ => None,
        }
    }
}

/// One row of the per-epoch metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// Zero-based epoch within `phase`.
    pub epoch: usize,
    pub phase: Phase,
    pub loss_content: f64,
    /// Expected GFLOPs at the configured resolution.
    pub loss_efficiency: f64,
    pub loss_order: f64,
    /// Exclusion radius as a fraction of the circumradius.
    pub r_value: f64,
    pub psnr_val: f64,
    pub nnz_alpha: usize,
    pub nnz_beta: usize,
    pub wall_seconds: f64,
}

/// Whether a phase ran to completion or stopped at an epoch limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Complete,
    Interrupted,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub cfg: SearchConfig,
    pub phase: Phase,
    /// Epochs finished in `phase`.
    pub epoch: usize,
    pub net: TreeSupernet,
    pub adam_w: Adam,
    pub adam_arch: Adam,
    pub rng: ChaCha8Rng,
    /// Architecture steps taken; the radius schedule position.
    pub arch_step: usize,
    pub metrics: Vec<MetricsRow>,
    /// Set once the search phase completes.
    pub final_search_loss: Option<f64>,
    pub derived: Option<DerivedArch>,
}

type EpochHook<'a> = &'a mut dyn FnMut(&RunState) -> Result<()>;

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

fn add_grads(acc: &mut [Option<Tensor>], new: Vec<Option<Tensor>>) {
    for (a, n) in acc.iter_mut().zip(new) {
        match (a.as_mut(), n) {
            (Some(a), Some(n)) => a.data_mut().iter_mut().zip(n.data()).for_each(|(x, y)| *x += y),
            (None, Some(n)) => *a = Some(n),
            _ => {}
        }
    }
}

fn finite(phase: Phase, epoch: usize, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Diverged {
            phase: phase.name(),
            epoch,
            loss,
        })
    }
}

impl RunState {
    /// Fresh run: seeded supernet, zeroed optimizers, pretrain epoch 0.
    pub fn new(cfg: SearchConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(TRAIN_STREAM);
        let net = build_supernet(cfg.dims(), &mut rng)?;
        let adam_w = Adam::new(&net.weights, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let adam_arch = Adam::new(&net.arch, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(RunState {
            cfg,
            phase: Phase::Pretrain,
            epoch: 0,
            net,
            adam_w,
            adam_arch,
            rng,
            arch_step: 0,
            metrics: Vec::new(),
            final_search_loss: None,
            derived: None,
        })
    }

    fn phase_epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::Pretrain => self.cfg.t1,
            Phase::Search => self.cfg.t2,
            Phase::Final => self.cfg.t3,
        }
    }

    pub fn phase_complete(&self) -> bool {
        self.epoch >= self.phase_epochs(self.phase)
    }

    /// Step-decayed weight learning rate for `epoch` of a `total`-epoch phase.
    pub fn lr_w(&self, epoch: usize, total: usize) -> f64 {
        let passed = (1..=3).filter(|k| 4 * epoch >= k * total).count();
        self.cfg.lr_w * self.cfg.lr_w_decay.powi(passed as i32)
    }

    /// Gumbel temperature, exponential from start to end over the search.
    pub fn temperature(&self, epoch: usize) -> f64 {
        let (a, b) = (self.cfg.gumbel_tau_start, self.cfg.gumbel_tau_end);
        if self.cfg.t2 <= 1 {
            return a;
        }
        a * (b / a).powf(epoch as f64 / (self.cfg.t2 - 1) as f64)
    }

    pub fn total_arch_steps(&self, data: &Dataset) -> usize {
        self.cfg.t2 * data.chi2.len().div_ceil(self.cfg.batch_size)
    }

    /// Radii for the cell and node normalizations at schedule position `step`.
    fn radii(&self, step: usize, total: usize) -> (f64, f64) {
        let ra = RadiusSchedule::for_simplex(NUM_OPS, total).radius(step);
        let rb = RadiusSchedule::for_simplex(self.net.num_nodes(), total).radius(step);
        (ra, rb)
    }

    fn fraction(step: usize, total: usize) -> f64 {
        RadiusSchedule {
            r_max: 1.0,
            total_steps: total,
        }
        .radius(step)
    }

    /// Normalized cell and node weights as plain vectors.
    pub fn normalized(&self, ra: f64, rb: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let n = self.cfg.normalizer;
        let alpha = self
            .net
            .alpha_ids()
            .into_iter()
            .map(|id| n.apply(self.net.arch.get(id).data(), ra).map(|p| p.into_vec()))
            .collect::<Result<Vec<_>>>()?;
        let beta = n.apply(self.net.arch.get(self.net.beta).data(), rb)?.into_vec();
        Ok((alpha, beta))
    }

    fn constant_choice(&self, g: &mut Graph, ra: f64, rb: f64, ratios: &[[usize; NUM_OPS]]) -> Result<ArchChoice> {
        let (alpha, beta) = self.normalized(ra, rb)?;
        Ok(ArchChoice {
            beta: g.constant(Tensor::from_vec(beta)),
            alpha: alpha.into_iter().map(|a| g.constant(Tensor::from_vec(a))).collect(),
            kernels: ratios
                .iter()
                .map(|r| r.map(|ratio| KernelChoice { ratio, gate: None }))
                .collect(),
        })
    }

    /// Argmax ratio per superkernel.
    pub fn argmax_ratios(&self) -> Vec<[usize; NUM_OPS]> {
        self.net
            .cells
            .iter()
            .map(|c| std::array::from_fn(|o| argmax(self.net.arch.get(c.ops[o].gamma).data())))
            .collect()
    }

    fn uniform_ratios(&self, ratio: usize) -> Vec<[usize; NUM_OPS]> {
        vec![[ratio; NUM_OPS]; self.net.cells.len()]
    }

    /// Stacks samples into `[N, 3, h, w]` inputs and `[N, 3, nh, nw]` targets,
    /// cropping aligned patches when the patch is smaller than the image.
    fn assemble(&mut self, samples: &[&Sample], crop: bool) -> Result<(Tensor, Tensor)> {
        let n = self.cfg.scale;
        let (lh, lw) = (samples[0].lr.dim(1), samples[0].lr.dim(2));
        let p = if crop { (self.cfg.patch_size / n).min(lh).min(lw) } else { lh.min(lw) };
        let (ph, pw) = if crop { (p, p) } else { (lh, lw) };
        let mut xs = Vec::with_capacity(samples.len() * 3 * ph * pw);
        let mut ts = Vec::with_capacity(samples.len() * 3 * ph * pw * n * n);
        for s in samples {
            let (oy, ox) = if crop && (ph < lh || pw < lw) {
                (self.rng.gen_range(0..=lh - ph), self.rng.gen_range(0..=lw - pw))
            } else {
                (0, 0)
            };
            for c in 0..3 {
                for y in 0..ph {
                    let row = (c * lh + oy + y) * lw + ox;
                    xs.extend_from_slice(&s.lr.data()[row..row + pw]);
                }
            }
            let (th, tw) = (lh * n, lw * n);
            for c in 0..3 {
                for y in 0..ph * n {
                    let row = (c * th + oy * n + y) * tw + ox * n;
                    ts.extend_from_slice(&s.target.data()[row..row + pw * n]);
                }
            }
        }
        let b = samples.len();
        Ok((Tensor::new(&[b, 3, ph, pw], xs)?, Tensor::new(&[b, 3, ph * n, pw * n], ts)?))
    }

    /// Mean content loss over `data` in order, and per-image PSNR of the
    /// clamped prediction against the teacher.
    fn evaluate<F>(&mut self, data: &[Sample], mut forward: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(&Self, &mut Graph, &mut Binder, Var) -> Result<Var>,
    {
        let mut total = 0.0;
        let mut psnrs = Vec::with_capacity(data.len());
        let refs: Vec<&Sample> = data.iter().collect();
        for chunk in refs.chunks(self.cfg.batch_size) {
            let (x, t) = self.assemble(chunk, false)?;
            let mut g = Graph::new();
            let mut b = Binder::frozen(&self.net.weights);
            let xv = g.constant(x);
            let tv = g.constant(t);
            let y = forward(self, &mut g, &mut b, xv)?;
            let loss = content_loss(&mut g, y, tv)?;
            total += g.value(loss).item().expect("scalar") * chunk.len() as f64;
            let out = g.value(y);
            let per = out.len() / chunk.len();
            let shape = &out.shape()[1..];
            for (i, s) in chunk.iter().enumerate() {
                let pred = Tensor::new(shape, out.data()[i * per..(i + 1) * per].iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
                psnrs.push(psnr(&pred, &s.target, 1.0)?);
            }
        }
        Ok((total / data.len() as f64, psnrs))
    }

    /// Supernet evaluation with normalized weights at radii `(ra, rb)` and
    /// argmax ratios.
    pub fn eval_supernet(&mut self, data: &[Sample], ra: f64, rb: f64) -> Result<(f64, Vec<f64>)> {
        let ratios = self.argmax_ratios();
        let per_node = self.cfg.per_node_tail;
        self.evaluate(data, |s, g, b, x| {
            let ch = s.constant_choice(g, ra, rb, &ratios)?;
            s.net.tree_forward(g, b, x, &ch, per_node, &mut ExecStats::default())
        })
    }

    pub fn eval_derived(&mut self, arch: &DerivedArch, data: &[Sample]) -> Result<(f64, Vec<f64>)> {
        let arch = arch.clone();
        self.evaluate(data, |s, g, b, x| derived_forward(&s.net, &arch, g, b, x, &mut ExecStats::default()))
    }

    fn nnz(&self, ra: f64, rb: f64) -> Result<(usize, usize)> {
        let (alpha, beta) = self.normalized(ra, rb)?;
        let count = |v: &[f64]| v.iter().filter(|x| **x != 0.0).count();
        Ok((alpha.iter().map(|a| count(a)).sum(), count(&beta)))
    }

    fn push_metrics(&mut self, mut row: MetricsRow, started: Instant) {
        row.wall_seconds = if self.cfg.record_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.metrics.push(row);
    }

    fn mean_psnr(p: &[f64]) -> f64 {
        p.iter().sum::<f64>() / p.len().max(1) as f64
    }

    /// Runs the remaining pretraining epochs (at most `limit`). Per batch the
    /// weights see four passes, at maximum, minimum and two random widths,
    /// whose gradients are summed into one step. Architecture logits stay
    /// frozen and the radius is zero.
    pub fn pretrain(&mut self, data: &Dataset, limit: Option<usize>, hook: EpochHook) -> Result<Progress> {
        if self.phase != Phase::Pretrain {
            return Err(Error::invalid(format!("pretrain requested during {}", self.phase.name())));
        }
        let mut ran = 0;
        while self.epoch < self.cfg.t1 {
            if limit.is_some_and(|l| ran >= l) {
                return Ok(Progress::Interrupted);
            }
            let started = Instant::now();
            let epoch = self.epoch;
            let lr = self.lr_w(epoch, self.cfg.t1);
            let mut order = data.chi1.clone();
            order.shuffle(&mut self.rng);
            let mut sum = 0.0;
            let mut count = 0.0;
            for batch in batches(&order, self.cfg.batch_size) {
                let samples: Vec<&Sample> = batch.iter().map(|&i| &data.train[i]).collect();
                let (x, t) = self.assemble(&samples, true)?;
                let ncells = self.net.cells.len();
                let random: Vec<Vec<[usize; NUM_OPS]>> = (0..2)
                    .map(|_| {
                        (0..ncells)
                            .map(|_| std::array::from_fn(|_| self.rng.gen_range(0..NUM_RATIOS)))
                            .collect()
                    })
                    .collect();
                let sandwich = [
                    self.uniform_ratios(NUM_RATIOS - 1),
                    self.uniform_ratios(0),
                    random[0].clone(),
                    random[1].clone(),
                ];
                let mut acc: Vec<Option<Tensor>> = vec![None; self.net.weights.len()];
                for ratios in &sandwich {
                    let mut g = Graph::new();
                    let mut b = Binder::trainable(&self.net.weights);
                    let ch = self.constant_choice(&mut g, 0.0, 0.0, ratios)?;
                    let xv = g.constant(x.clone());
                    let tv = g.constant(t.clone());
                    let y = self
                        .net
                        .tree_forward(&mut g, &mut b, xv, &ch, self.cfg.per_node_tail, &mut ExecStats::default())?;
                    let loss = content_loss(&mut g, y, tv)?;
                    let lv = finite(Phase::Pretrain, epoch, g.value(loss).item().expect("scalar"))?;
                    sum += lv * samples.len() as f64;
                    count += samples.len() as f64;
                    let grads = g.backward(loss)?;
                    add_grads(&mut acc, b.grads(&grads));
                }
                self.adam_w.step(&mut self.net.weights, &acc, lr)?;
            }
            let (_, psnrs) = self.eval_supernet(&data.val, 0.0, 0.0)?;
            let (nnz_alpha, nnz_beta) = self.nnz(0.0, 0.0)?;
            let row = MetricsRow {
                epoch,
                phase: Phase::Pretrain,
                loss_content: sum / count,
                loss_efficiency: 0.0,
                loss_order: 0.0,
                r_value: 0.0,
                psnr_val: Self::mean_psnr(&psnrs),
                nnz_alpha,
                nnz_beta,
                wall_seconds: 0.0,
            };
            self.push_metrics(row, started);
            self.epoch += 1;
            ran += 1;
            hook(self)?;
        }
        Ok(Progress::Complete)
    }

    fn enter_search(&mut self) -> Result<()> {
        match self.phase {
            Phase::Pretrain if self.phase_complete() => {
                self.phase = Phase::Search;
                self.epoch = 0;
                self.arch_step = 0;
                self.adam_w = Adam::new(&self.net.weights, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps);
                self.adam_arch = Adam::new(&self.net.arch, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps);
                Ok(())
            }
            Phase::Search => Ok(()),
            p => Err(Error::invalid(format!(
                "search needs a finished pretrain phase, run is in {} epoch {}",
                p.name(),
                self.epoch
            ))),
        }
    }

    /// Runs the remaining search epochs (at most `limit`). Each epoch makes
    /// one weight pass over the first half with sampled widths, then one
    /// architecture pass over the second half; the radius advances once per
    /// architecture step. On completion the final search loss and the
    /// derived architecture are recorded.
    pub fn search(&mut self, data: &Dataset, limit: Option<usize>, hook: EpochHook) -> Result<Progress> {
        self.enter_search()?;
        let total = self.total_arch_steps(data);
        let mut ran = 0;
        while self.epoch < self.cfg.t2 {
            if limit.is_some_and(|l| ran >= l) {
                return Ok(Progress::Interrupted);
            }
            let started = Instant::now();
            let epoch = self.epoch;
            let tau = self.temperature(epoch);
            let content = self.weight_pass(data, epoch, tau, total)?;
            let (eff, order) = self.arch_pass(data, epoch, tau, total)?;
            let (ra, rb) = self.radii(self.arch_step, total);
            let (_, psnrs) = self.eval_supernet(&data.val, ra, rb)?;
            let (nnz_alpha, nnz_beta) = self.nnz(ra, rb)?;
            let row = MetricsRow {
                epoch,
                phase: Phase::Search,
                loss_content: content,
                loss_efficiency: eff,
                loss_order: order,
                r_value: Self::fraction(self.arch_step, total),
                psnr_val: Self::mean_psnr(&psnrs),
                nnz_alpha,
                nnz_beta,
                wall_seconds: 0.0,
            };
            self.push_metrics(row, started);
            self.epoch += 1;
            ran += 1;
            if self.epoch == self.cfg.t2 {
                self.finish_search(data)?;
            }
            hook(self)?;
        }
        if self.final_search_loss.is_none() {
            self.finish_search(data)?;
        }
        Ok(Progress::Complete)
    }

    fn weight_pass(&mut self, data: &Dataset, epoch: usize, tau: f64, total: usize) -> Result<f64> {
        let lr = self.lr_w(epoch, self.cfg.t2);
        let mut order = data.chi1.clone();
        order.shuffle(&mut self.rng);
        let (ra, rb) = self.radii(self.arch_step, total);
        let gammas: Vec<[Vec<f64>; NUM_OPS]> = self
            .net
            .cells
            .iter()
            .map(|c| std::array::from_fn(|o| self.net.arch.get(c.ops[o].gamma).data().to_vec()))
            .collect();
        let (mut sum, mut count) = (0.0, 0.0);
        for batch in batches(&order, self.cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &data.train[i]).collect();
            let (x, t) = self.assemble(&samples, true)?;
            let mut ratios = Vec::with_capacity(gammas.len());
            for cell in &gammas {
                let mut r = [0; NUM_OPS];
                for (o, gm) in cell.iter().enumerate() {
                    r[o] = gumbel_softmax_sample(gm, tau, &mut self.rng)?.hard;
                }
                ratios.push(r);
            }
            let mut g = Graph::new();
            let mut b = Binder::trainable(&self.net.weights);
            let ch = self.constant_choice(&mut g, ra, rb, &ratios)?;
            let xv = g.constant(x);
            let tv = g.constant(t);
            let y = self
                .net
                .tree_forward(&mut g, &mut b, xv, &ch, self.cfg.per_node_tail, &mut ExecStats::default())?;
            let loss = content_loss(&mut g, y, tv)?;
            let lv = finite(Phase::Search, epoch, g.value(loss).item().expect("scalar"))?;
            sum += lv * samples.len() as f64;
            count += samples.len() as f64;
            let grads = g.backward(loss)?;
            let pg = b.grads(&grads);
            drop(b);
            self.adam_w.step(&mut self.net.weights, &pg, lr)?;
        }
        Ok(sum / count)
    }

    /// One architecture pass; returns the last step's expected GFLOPs and
    /// ordering penalty.
    fn arch_pass(&mut self, data: &Dataset, epoch: usize, tau: f64, total: usize) -> Result<(f64, f64)> {
        let mut order = data.chi2.clone();
        order.shuffle(&mut self.rng);
        let normalizer = self.cfg.normalizer;
        let res = self.cfg.flops_resolution;
        let (mut eff, mut pen) = (0.0, 0.0);
        for batch in batches(&order, self.cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &data.train[i]).collect();
            let (x, t) = self.assemble(&samples, true)?;
            let (ra, rb) = self.radii(self.arch_step, total);
            let mut g = Graph::new();
            let mut ab = Binder::trainable(&self.net.arch);
            let beta_raw = ab.var(&mut g, self.net.beta);
            let beta = normalizer.apply_var(&mut g, beta_raw, rb)?;
            let mut alpha = Vec::with_capacity(self.net.cells.len());
            let mut kernels = Vec::with_capacity(self.net.cells.len());
            let mut soft = Vec::with_capacity(self.net.cells.len());
            for cell in &self.net.cells {
                let raw = ab.var(&mut g, cell.alpha);
                alpha.push(normalizer.apply_var(&mut g, raw, ra)?);
                let mut kc = [KernelChoice { ratio: 0, gate: None }; NUM_OPS];
                let mut sv = Vec::with_capacity(NUM_OPS);
                for (o, k) in cell.ops.iter().enumerate() {
                    let gamma = ab.var(&mut g, k.gamma);
                    let noise = gumbel_noise(NUM_RATIOS, &mut self.rng);
                    let s = gumbel_soft_var(&mut g, gamma, &noise, tau)?;
                    let hard = argmax(g.value(s).data());
                    kc[o] = KernelChoice {
                        ratio: hard,
                        gate: Some(g.straight_through(s, hard)?),
                    };
                    sv.push(s);
                }
                kernels.push(kc);
                soft.push(<[Var; NUM_OPS]>::try_from(sv).expect("four ops"));
            }
            let choice = ArchChoice {
                beta,
                alpha: alpha.clone(),
                kernels,
            };
            let mut wb = Binder::frozen(&self.net.weights);
            let xv = g.constant(x);
            let tv = g.constant(t);
            let y = self
                .net
                .tree_forward(&mut g, &mut wb, xv, &choice, self.cfg.per_node_tail, &mut ExecStats::default())?;
            let mut loss = content_loss(&mut g, y, tv)?;

            // The FLOPs term is built twice so its pull on the cell/node
            // weights and on the ratio logits can be weighted separately.
            let soft_detached: Vec<[Var; NUM_OPS]> = soft.iter().map(|s| s.map(|v| g.detach(v))).collect();
            let h1 = efficiency_cost(&mut g, &self.net, &alpha, beta, &soft_detached, res, res)?;
            let alpha_detached: Vec<Var> = alpha.iter().map(|&a| g.detach(a)).collect();
            let beta_detached = g.detach(beta);
            let h2 = efficiency_cost(&mut g, &self.net, &alpha_detached, beta_detached, &soft, res, res)?;
            eff = g.value(h1).item().expect("scalar") * 1e-9;
            let w1 = g.scale(h1, self.cfg.lambda_flops * self.cfg.omega1 * 1e-9);
            let w2 = g.scale(h2, self.cfg.lambda_flops * self.cfg.omega2 * 1e-9);
            loss = g.add(loss, w1)?;
            loss = g.add(loss, w2)?;
            let order_pen = path_ordering_penalty(&mut g, beta_raw, self.cfg.lambda_order, self.cfg.hinge_order)?;
            pen = g.value(order_pen).item().expect("scalar");
            loss = g.add(loss, order_pen)?;
            finite(Phase::Search, epoch, g.value(loss).item().expect("scalar"))?;
            let grads = g.backward(loss)?;
            let pg = ab.grads(&grads);
            drop(ab);
            drop(wb);
            self.adam_arch.step(&mut self.net.arch, &pg, self.cfg.lr_arch)?;
            self.arch_step += 1;
        }
        Ok((eff, pen))
    }

    fn finish_search(&mut self, data: &Dataset) -> Result<()> {
        let total = self.total_arch_steps(data);
        let (ra, rb) = self.radii(total, total);
        let (loss, _) = self.eval_supernet(&data.train, ra, rb)?;
        self.final_search_loss = Some(loss);
        // At full radius every normalization is one-hot at the logit argmax.
        self.derived = Some(derive_architecture(&self.net, self.cfg.normalizer, rb.min(ra))?);
        Ok(())
    }

    fn enter_final(&mut self) -> Result<()> {
        match self.phase {
            Phase::Search if self.phase_complete() && self.derived.is_some() => {}
            Phase::Final => return Ok(()),
            p => {
                return Err(Error::invalid(format!(
                    "final training needs a finished search, run is in {} epoch {}",
                    p.name(),
                    self.epoch
                )))
            }
        }
        if !self.cfg.discretize {
            let (ra, rb) = self.radii(1, 1);
            let (alpha, beta) = self.normalized(ra, rb)?;
            let one_hot = |v: &[f64]| v.iter().filter(|x| **x == 1.0).count() == 1 && v.iter().filter(|x| **x != 0.0).count() == 1;
            if !one_hot(&beta) || !alpha.iter().all(|a| one_hot(a)) {
                return Err(Error::invalid(
                    "architecture weights are not one-hot and discretization is disabled",
                ));
            }
        }
        if self.cfg.train_mode == TrainMode::FromScratch {
            let mut init = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            init.set_stream(SCRATCH_STREAM);
            self.net.reinit_weights(&mut init)?;
        }
        self.adam_w = Adam::new(&self.net.weights, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps);
        self.phase = Phase::Final;
        self.epoch = 0;
        Ok(())
    }

    /// Trains the derived architecture for the remaining final epochs (at
    /// most `limit`) on all training images.
    pub fn train_final(&mut self, data: &Dataset, limit: Option<usize>, hook: EpochHook) -> Result<Progress> {
        self.enter_final()?;
        let arch = self.derived.clone().expect("derived before final training");
        let mut ran = 0;
        while self.epoch < self.cfg.t3 {
            if limit.is_some_and(|l| ran >= l) {
                return Ok(Progress::Interrupted);
            }
            let started = Instant::now();
            let epoch = self.epoch;
            let lr = self.lr_w(epoch, self.cfg.t3);
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut self.rng);
            let (mut sum, mut count) = (0.0, 0.0);
            for batch in batches(&order, self.cfg.batch_size) {
                let samples: Vec<&Sample> = batch.iter().map(|&i| &data.train[i]).collect();
                let (x, t) = self.assemble(&samples, true)?;
                let mut g = Graph::new();
                let mut b = Binder::trainable(&self.net.weights);
                let xv = g.constant(x);
                let tv = g.constant(t);
                let y = derived_forward(&self.net, &arch, &mut g, &mut b, xv, &mut ExecStats::default())?;
                let loss = content_loss(&mut g, y, tv)?;
                let lv = finite(Phase::Final, epoch, g.value(loss).item().expect("scalar"))?;
                sum += lv * samples.len() as f64;
                count += samples.len() as f64;
                let grads = g.backward(loss)?;
                let pg = b.grads(&grads);
                drop(b);
                self.adam_w.step(&mut self.net.weights, &pg, lr)?;
            }
            let (_, psnrs) = self.eval_derived(&arch, &data.val)?;
            let (ra, rb) = self.radii(1, 1);
            let (nnz_alpha, nnz_beta) = self.nnz(ra, rb)?;
            let row = MetricsRow {
                epoch,
                phase: Phase::Final,
                loss_content: sum / count,
                loss_efficiency: crate::derive::count_flops(&arch, self.cfg.flops_resolution, self.cfg.flops_resolution)
                    as f64
                    * 1e-9,
                loss_order: 0.0,
                r_value: 1.0,
                psnr_val: Self::mean_psnr(&psnrs),
                nnz_alpha,
                nnz_beta,
                wall_seconds: 0.0,
            };
            self.push_metrics(row, started);
            self.epoch += 1;
            ran += 1;
            hook(self)?;
        }
        Ok(Progress::Complete)
    }

    /// Content loss of the derived network over all training images, in the
    /// same order and batching as the final search loss.
    pub fn final_eval_loss(&mut self, data: &Dataset) -> Result<f64> {
        let arch = self
            .derived
            .clone()
            .ok_or_else(|| Error::invalid("no derived architecture yet"))?;
        Ok(self.eval_derived(&arch, &data.train)?.0)
    }

    /// Pretrain, search and final training back to back.
    pub fn run_all(&mut self, data: &Dataset, hook: EpochHook) -> Result<()> {
        if self.phase == Phase::Pretrain {
            self.pretrain(data, None, hook)?;
        }
        if self.phase != Phase::Final {
            self.search(data, None, hook)?;
        }
        self.train_final(data, None, hook)?;
        Ok(())
    }
}

/// Convenience wrapper: normalizer for a config and a CLI override.
pub fn normalizer_for(softmax_baseline: bool, cfg: &SearchConfig) -> Normalizer {
    if softmax_baseline {
        Normalizer::Softmax
    } else {
        cfg.normalizer
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SearchConfig {
        SearchConfig {
            blocks: 2,
            cells_per_block: 1,
            base_width: 6,
            num_images: 6,
            val_images: 2,
            hr_size: 16,
            patch_size: 8,
            batch_size: 3,
            t1: 1,
            t2: 2,
            t3: 1,
            ..SearchConfig::default()
        }
    }

    fn none() -> impl FnMut(&RunState) -> Result<()> {
        |_| Ok(())
    }

    #[test]
    fn dataset_split_and_targets() {
        let cfg = tiny();
        let d = Dataset::synthesize(&cfg).unwrap();
        assert_eq!(d.train.len(), 6);
        assert_eq!(d.val.len(), 2);
        assert_eq!(d.chi1.len(), 3);
        let mut all: Vec<usize> = d.chi1.iter().chain(&d.chi2).copied().collect();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert_eq!(d.train[0].target.shape(), &[3, 16, 16]);
        assert_eq!(d, Dataset::synthesize(&cfg).unwrap());
    }

    #[test]
    fn schedules() {
        let s = RunState::new(tiny()).unwrap();
        assert_eq!(s.lr_w(0, 8), s.cfg.lr_w);
        assert_eq!(s.lr_w(2, 8), s.cfg.lr_w * 0.5);
        assert_eq!(s.lr_w(7, 8), s.cfg.lr_w * 0.125);
        assert_eq!(s.temperature(0), s.cfg.gumbel_tau_start);
        assert!((s.temperature(1) - s.cfg.gumbel_tau_end).abs() < 1e-12);
    }

    #[test]
    fn phases_in_order() {
        let cfg = tiny();
        let d = Dataset::synthesize(&cfg).unwrap();
        let mut s = RunState::new(cfg).unwrap();
        assert!(s.search(&d, None, &mut none()).is_err());
        assert!(s.train_final(&d, None, &mut none()).is_err());
        s.run_all(&d, &mut none()).unwrap();
        assert_eq!(s.phase, Phase::Final);
        assert_eq!(s.metrics.len(), 4);
        assert!(s.derived.is_some());
        assert!(s.metrics.iter().all(|m| m.loss_content.is_finite() && m.wall_seconds == 0.0));
        assert_eq!(s.metrics[2].r_value, 1.0);
    }

    #[test]
    fn interrupted_run_resumes_identically() {
        let cfg = tiny();
        let d = Dataset::synthesize(&cfg).unwrap();
        let mut a = RunState::new(cfg.clone()).unwrap();
        a.run_all(&d, &mut none()).unwrap();
        let mut b = RunState::new(cfg).unwrap();
        b.pretrain(&d, None, &mut none()).unwrap();
        assert_eq!(b.search(&d, Some(1), &mut none()).unwrap(), Progress::Interrupted);
        let mut c = b.clone();
        c.search(&d, None, &mut none()).unwrap();
        c.train_final(&d, None, &mut none()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn zero_final_epochs_keep_search_loss() {
        let cfg = SearchConfig { t3: 0, ..tiny() };
        let d = Dataset::synthesize(&cfg).unwrap();
        let mut s = RunState::new(cfg).unwrap();
        s.run_all(&d, &mut none()).unwrap();
        assert_eq!(s.final_eval_loss(&d).unwrap(), s.final_search_loss.unwrap());
    }

    #[test]
    fn nan_loss_reports_divergence() {
        let cfg = tiny();
        let d = Dataset::synthesize(&cfg).unwrap();
        let mut s = RunState::new(cfg).unwrap();
        let id = s.net.stem.kernel;
        s.net.weights.get_mut(id).data_mut()[0] = f64::NAN;
        match s.pretrain(&d, None, &mut none()) {
            Err(Error::Diverged { phase, .. }) => assert_eq!(phase, "pretrain"),
            other => panic!("{other:?}"),
        }
    }
}
