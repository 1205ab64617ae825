use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::projections::Normalizer;
use crate::searchspace::{ratio_widths, SupernetDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Inherit the supernet weights of the surviving branches.
    FromSearch,
    /// Re-initialize all weights before final training.
    FromScratch,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::FromSearch => "from_search",
            TrainMode::FromScratch => "from_scratch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "from_search" => Some(TrainMode::FromSearch),
            "from_scratch" => Some(TrainMode::FromScratch),
            _ => None,
        }
    }
}

pub fn normalizer_name(n: Normalizer) -> &'static str {
    match n {
        Normalizer::Softmax => "softmax",
        Normalizer::Sparsestmax => "sparsestmax",
    }
}

fn parse_normalizer(s: &str) -> Option<Normalizer> {
    match s {
        "softmax" => Some(Normalizer::Softmax),
        "sparsestmax" => Some(Normalizer::Sparsestmax),
        _ => None,
    }
}

/// Every knob of a run. Serialized as a flat `key = value` file in which
/// every key is required and unknown keys are errors.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub seed: u64,
    pub blocks: usize,
    pub cells_per_block: usize,
    pub base_width: usize,
    pub scale: usize,
    /// Training images (split into the weight and architecture halves).
    pub num_images: usize,
    /// Held-out images for the validation PSNR.
    pub val_images: usize,
    pub hr_size: usize,
    /// HR side of the random training crops.
    pub patch_size: usize,
    pub batch_size: usize,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub lr_w: f64,
    /// Factor applied to `lr_w` at 25%, 50% and 75% of each phase.
    pub lr_w_decay: f64,
    pub lr_arch: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of the FLOPs term, per GFLOP.
    pub lambda_flops: f64,
    pub lambda_order: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub gumbel_tau_start: f64,
    pub gumbel_tau_end: f64,
    /// LR side at which the FLOPs term is evaluated.
    pub flops_resolution: usize,
    pub normalizer: Normalizer,
    pub hinge_order: bool,
    pub per_node_tail: bool,
    pub train_mode: TrainMode,
    pub discretize: bool,
    pub leaky_slope: f64,
    /// When false the metrics `wall_seconds` column is written as 0.
    pub record_wall_time: bool,
    /// Directory written by `gendata`; empty means synthesize in memory.
    pub data_dir: String,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            seed: 1,
            blocks: 3,
            cells_per_block: 3,
            base_width: 16,
            scale: 2,
            num_images: 128,
            val_images: 32,
            hr_size: 32,
            patch_size: 32,
            batch_size: 8,
            t1: 20,
            t2: 50,
            t3: 100,
            lr_w: 2e-3,
            lr_w_decay: 0.5,
            lr_arch: 3e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda_flops: 1e-2,
            lambda_order: 0.0,
            omega1: 1.0,
            omega2: 1.0,
            gumbel_tau_start: 5.0,
            gumbel_tau_end: 0.1,
            flops_resolution: 256,
            normalizer: Normalizer::Sparsestmax,
            hinge_order: false,
            per_node_tail: false,
            train_mode: TrainMode::FromSearch,
            discretize: true,
            leaky_slope: 0.2,
            record_wall_time: false,
            data_dir: String::new(),
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
}

/// Key, type and one-line description, in file order.
const KEYS: &[(&str, Kind, &str)] = &[
    ("seed", Kind::Int, "master seed for data, init and sampling"),
    ("blocks", Kind::Int, "residual-in-residual blocks in the supernet"),
    ("cells_per_block", Kind::Int, "searchable cells per block"),
    ("base_width", Kind::Int, "feature channels between cells"),
    ("scale", Kind::Int, "upscaling factor"),
    ("num_images", Kind::Int, "training images"),
    ("val_images", Kind::Int, "held-out validation images"),
    ("hr_size", Kind::Int, "side of the square HR images"),
    ("patch_size", Kind::Int, "side of the HR training crops"),
    ("batch_size", Kind::Int, "images per step"),
    ("t1", Kind::Int, "pretrain epochs"),
    ("t2", Kind::Int, "search epochs"),
    ("t3", Kind::Int, "final training epochs"),
    ("lr_w", Kind::Float, "weight learning rate"),
    ("lr_w_decay", Kind::Float, "lr_w factor at 25/50/75% of each phase"),
    ("lr_arch", Kind::Float, "architecture learning rate"),
    ("adam_beta1", Kind::Float, "Adam first-moment decay"),
    ("adam_beta2", Kind::Float, "Adam second-moment decay"),
    ("adam_eps", Kind::Float, "Adam epsilon"),
    ("lambda_flops", Kind::Float, "FLOPs penalty per GFLOP"),
    ("lambda_order", Kind::Float, "ordering penalty strength in [0, 1]"),
    ("omega1", Kind::Float, "FLOPs penalty weight on cell and node logits"),
    ("omega2", Kind::Float, "FLOPs penalty weight on ratio logits"),
    ("gumbel_tau_start", Kind::Float, "Gumbel temperature at the first search epoch"),
    ("gumbel_tau_end", Kind::Float, "Gumbel temperature at the last search epoch"),
    ("flops_resolution", Kind::Int, "LR side at which the FLOPs penalty is measured"),
    ("normalizer", Kind::Str, "sparsestmax | softmax"),
    ("hinge_order", Kind::Bool, "use the hinge form of the ordering penalty"),
    ("per_node_tail", Kind::Bool, "apply the tail to every node before fusing"),
    ("train_mode", Kind::Str, "from_search | from_scratch"),
    ("discretize", Kind::Bool, "argmax-discretize non-one-hot weights before final training"),
    ("leaky_slope", Kind::Float, "negative slope of the activations"),
    ("record_wall_time", Kind::Bool, "write elapsed seconds to the metrics"),
    ("data_dir", Kind::Str, "dataset directory from gendata; empty to synthesize"),
];

fn float_text(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

impl SearchConfig {
    pub fn dims(&self) -> SupernetDims {
        SupernetDims {
            blocks: self.blocks,
            cells_per_block: self.cells_per_block,
            base_width: self.base_width,
            scale: self.scale,
            leaky_slope: self.leaky_slope,
        }
    }

    fn value_text(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "blocks" => self.blocks.to_string(),
            "cells_per_block" => self.cells_per_block.to_string(),
            "base_width" => self.base_width.to_string(),
            "scale" => self.scale.to_string(),
            "num_images" => self.num_images.to_string(),
            "val_images" => self.val_images.to_string(),
            "hr_size" => self.hr_size.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "t1" => self.t1.to_string(),
            "t2" => self.t2.to_string(),
            "t3" => self.t3.to_string(),
            "lr_w" => float_text(self.lr_w),
            "lr_w_decay" => float_text(self.lr_w_decay),
            "lr_arch" => float_text(self.lr_arch),
            "adam_beta1" => float_text(self.adam_beta1),
            "adam_beta2" => float_text(self.adam_beta2),
            "adam_eps" => float_text(self.adam_eps),
            "lambda_flops" => float_text(self.lambda_flops),
            "lambda_order" => float_text(self.lambda_order),
            "omega1" => float_text(self.omega1),
            "omega2" => float_text(self.omega2),
            "gumbel_tau_start" => float_text(self.gumbel_tau_start),
            "gumbel_tau_end" => float_text(self.gumbel_tau_end),
            "flops_resolution" => self.flops_resolution.to_string(),
            "normalizer" => format!("{:?}", normalizer_name(self.normalizer)),
            "hinge_order" => self.hinge_order.to_string(),
            "per_node_tail" => self.per_node_tail.to_string(),
            "train_mode" => format!("{:?}", self.train_mode.name()),
            "discretize" => self.discretize.to_string(),
            "leaky_slope" => float_text(self.leaky_slope),
            "record_wall_time" => self.record_wall_time.to_string(),
            "data_dir" => format!("{:?}", self.data_dir),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for (key, _, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{key} = {}", self.value_text(key));
        }
        s
    }

    /// FNV-1a of the canonical text.
    pub fn hash(&self) -> u64 {
        self.to_toml()
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }

    /// Parses a complete config, reporting every missing, unknown, mistyped
    /// or out-of-range key at once.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let mut errors = Vec::new();
        for key in table.keys() {
            if !KEYS.iter().any(|(k, _, _)| k == key) {
                errors.push(format!("unknown key `{key}`"));
            }
        }
        let mut cfg = SearchConfig::default();
        for (key, kind, _) in KEYS {
            let Some(v) = table.get(*key) else {
                errors.push(format!("missing key `{key}`"));
                continue;
            };
            let ok = match kind {
                Kind::Int => match v.as_integer() {
                    Some(i) if i >= 0 => cfg.set_int(key, i as u64),
                    _ => false,
                },
                Kind::Float => match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
                    Some(f) => cfg.set_float(key, f),
                    None => false,
                },
                Kind::Bool => match v.as_bool() {
                    Some(b) => cfg.set_bool(key, b),
                    None => false,
                },
                Kind::Str => match v.as_str() {
                    Some(s) => cfg.set_str(key, s),
                    None => false,
                },
            };
            if !ok {
                let want = match kind {
                    Kind::Int => "a nonnegative integer",
                    Kind::Float => "a number",
                    Kind::Bool => "true or false",
                    Kind::Str if *key == "normalizer" => "\"sparsestmax\" or \"softmax\"",
                    Kind::Str if *key == "train_mode" => "\"from_search\" or \"from_scratch\"",
                    Kind::Str => "a string",
                };
                errors.push(format!("`{key}` must be {want}, got {v}"));
            }
        }
        if errors.is_empty() {
            if let Err(Error::Config(e)) = cfg.validate() {
                errors = e;
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    fn set_int(&mut self, key: &str, v: u64) -> bool {
        let u = v as usize;
        match key {
            "seed" => self.seed = v,
            "blocks" => self.blocks = u,
            "cells_per_block" => self.cells_per_block = u,
            "base_width" => self.base_width = u,
            "scale" => self.scale = u,
            "num_images" => self.num_images = u,
            "val_images" => self.val_images = u,
            "hr_size" => self.hr_size = u,
            "patch_size" => self.patch_size = u,
            "batch_size" => self.batch_size = u,
            "t1" => self.t1 = u,
            "t2" => self.t2 = u,
            "t3" => self.t3 = u,
            "flops_resolution" => self.flops_resolution = u,
            _ => return false,
        }
        true
    }

    fn set_float(&mut self, key: &str, v: f64) -> bool {
        let slot = match key {
            "lr_w" => &mut self.lr_w,
            "lr_w_decay" => &mut self.lr_w_decay,
            "lr_arch" => &mut self.lr_arch,
            "adam_beta1" => &mut self.adam_beta1,
            "adam_beta2" => &mut self.adam_beta2,
            "adam_eps" => &mut self.adam_eps,
            "lambda_flops" => &mut self.lambda_flops,
            "lambda_order" => &mut self.lambda_order,
            "omega1" => &mut self.omega1,
            "omega2" => &mut self.omega2,
            "gumbel_tau_start" => &mut self.gumbel_tau_start,
            "gumbel_tau_end" => &mut self.gumbel_tau_end,
            "leaky_slope" => &mut self.leaky_slope,
            _ => return false,
        };
        *slot = v;
        true
    }

    fn set_bool(&mut self, key: &str, v: bool) -> bool {
        match key {
            "hinge_order" => self.hinge_order = v,
            "per_node_tail" => self.per_node_tail = v,
            "discretize" => self.discretize = v,
            "record_wall_time" => self.record_wall_time = v,
            _ => return false,
        }
        true
    }

    fn set_str(&mut self, key: &str, v: &str) -> bool {
        match key {
            "normalizer" => match parse_normalizer(v) {
                Some(n) => self.normalizer = n,
                None => return false,
            },
            "train_mode" => match TrainMode::parse(v) {
                Some(m) => self.train_mode = m,
                None => return false,
            },
            "data_dir" => self.data_dir = v.to_string(),
            _ => return false,
        }
        true
    }

    /// Range checks; all violations are reported together.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        let mut positive = |name: &str, v: usize| {
            if v == 0 {
                e.push(format!("`{name}` must be positive"));
            }
        };
        positive("blocks", self.blocks);
        positive("cells_per_block", self.cells_per_block);
        positive("scale", self.scale);
        positive("batch_size", self.batch_size);
        positive("flops_resolution", self.flops_resolution);
        positive("val_images", self.val_images);
        if self.num_images < 2 {
            e.push("`num_images` must be at least 2 so both halves are nonempty".into());
        }
        if let Err(err) = ratio_widths(self.base_width) {
            e.push(format!("`base_width`: {err}"));
        }
        if self.scale > 0 && (self.hr_size < 16 || !self.hr_size.is_multiple_of(self.scale)) {
            e.push(format!("`hr_size` must be >= 16 and divisible by scale, got {}", self.hr_size));
        }
        if self.scale > 0 && (self.patch_size == 0 || self.patch_size > self.hr_size || !self.patch_size.is_multiple_of(self.scale)) {
            e.push(format!(
                "`patch_size` must be a positive multiple of scale no larger than hr_size, got {}",
                self.patch_size
            ));
        }
        for (name, v) in [
            ("lr_w", self.lr_w),
            ("lr_arch", self.lr_arch),
            ("adam_eps", self.adam_eps),
            ("gumbel_tau_start", self.gumbel_tau_start),
            ("gumbel_tau_end", self.gumbel_tau_end),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                e.push(format!("`{name}` must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("lambda_flops", self.lambda_flops),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("leaky_slope", self.leaky_slope),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                e.push(format!("`{name}` must be nonnegative and finite, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_order) {
            e.push(format!("`lambda_order` must lie in [0, 1], got {}", self.lambda_order));
        }
        if !(self.lr_w_decay > 0.0 && self.lr_w_decay <= 1.0) {
            e.push(format!("`lr_w_decay` must lie in (0, 1], got {}", self.lr_w_decay));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                e.push(format!("`{name}` must lie in [0, 1), got {v}"));
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }
}
