//! Run directories, checkpoints, metrics files and the command
//! implementations behind the `trinas` binary.
//!
//! A run directory holds `config.toml`, `metrics.csv`, `manifest.toml`, one
//! checkpoint per phase (`pretrain.ckpt`, `search.ckpt`, `final.ckpt`) and,
//! after a search, `arch.txt`.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{gen_synthetic, make_pairs, manifest, psnr, read_pgm, write_pgm, ImagePair};
use crate::derive::{count_flops, count_params, CellChoice, DerivedArch};
use crate::engine::{Dataset, MetricsRow, Phase, Progress, RunState, SearchConfig, TrainMode};
use crate::error::{Error, Result};
use crate::ndgraph::{Adam, Tensor};
use crate::projections::Normalizer;
use crate::searchspace::{ratio_widths, OpKind};

pub const MAGIC: &[u8; 4] = b"TNAS";
pub const VERSION: u32 = 1;

pub const METRICS_HEADER: &str =
    "epoch,phase,loss_content,loss_efficiency,loss_order,r_value,psnr_val,nnz_alpha,nnz_beta,wall_seconds";

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.display().to_string())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        // `{}` on f64 prints the shortest text that parses back to the same bits.
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.phase.name(),
            r.loss_content,
            r.loss_efficiency,
            r.loss_order,
            r.r_value,
            r.psnr_val,
            r.nnz_alpha,
            r.nnz_beta,
            r.wall_seconds
        )
        .expect("string write");
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format {
            what: "metrics".into(),
            offset: 0,
            msg: "unexpected header".into(),
        });
    }
    let mut offset = METRICS_HEADER.len() + 1;
    let mut rows = Vec::new();
    for line in lines {
        let bad = |msg: &str| Error::Format {
            what: "metrics".into(),
            offset,
            msg: msg.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad("expected 10 fields"));
        }
        let float = |i: usize| f[i].parse::<f64>().map_err(|_| bad("bad number"));
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad("bad integer"));
        rows.push(MetricsRow {
            epoch: int(0)?,
            phase: Phase::parse(f[1]).ok_or_else(|| bad("bad phase"))?,
            loss_content: float(2)?,
            loss_efficiency: float(3)?,
            loss_order: float(4)?,
            r_value: float(5)?,
            psnr_val: float(6)?,
            nnz_alpha: int(7)?,
            nnz_beta: int(8)?,
            wall_seconds: float(9)?,
        });
        offset += line.len() + 1;
    }
    Ok(rows)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

fn derived_line(a: &DerivedArch) -> String {
    let cells: Vec<String> = a.cells.iter().map(|c| format!("{}:{}", c.op.name(), c.ratio)).collect();
    format!("{} {}", a.terminal, cells.join(" "))
}

fn parse_derived(cfg: &SearchConfig, s: &str) -> Result<DerivedArch> {
    let mut it = s.split_whitespace();
    let terminal = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ckpt_err("bad derived terminal"))?;
    let widths = ratio_widths(cfg.base_width)?;
    let cells = it
        .map(|c| {
            let (op, ratio) = c.split_once(':').ok_or_else(|| ckpt_err("bad derived cell"))?;
            let op = OpKind::from_name(op).ok_or_else(|| ckpt_err(format!("unknown op {op}")))?;
            let ratio: usize = ratio
                .parse()
                .ok()
                .filter(|&r| r < widths.len())
                .ok_or_else(|| ckpt_err("bad derived ratio"))?;
            Ok(CellChoice {
                op,
                ratio,
                width: widths[ratio],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let arch = DerivedArch {
        base_width: cfg.base_width,
        scale: cfg.scale,
        cells_per_block: cfg.cells_per_block,
        supernet_blocks: cfg.blocks,
        terminal,
        cells,
    };
    arch.validate()?;
    Ok(arch)
}

/// Serializes the full run state: a text header of `key value` lines ending
/// in `END`, then the named binary sections it lists as `section name offset
/// length` (offsets relative to the first byte after the header).
pub fn encode_checkpoint(state: &RunState) -> Vec<u8> {
    let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();
    sections.push(("config", state.cfg.to_toml().into_bytes()));
    sections.push(("metrics", metrics_csv(&state.metrics).into_bytes()));
    let tensors = |ts: &[Tensor]| {
        let mut buf = Vec::with_capacity(ts.iter().map(Tensor::encoded_len).sum());
        for t in ts {
            t.write_le(&mut buf).expect("write to vec");
        }
        buf
    };
    sections.push(("weights", tensors(state.net.weights.values())));
    sections.push(("arch", tensors(state.net.arch.values())));
    sections.push(("adam_w.first", tensors(&state.adam_w.first)));
    sections.push(("adam_w.second", tensors(&state.adam_w.second)));
    sections.push(("adam_arch.first", tensors(&state.adam_arch.first)));
    sections.push(("adam_arch.second", tensors(&state.adam_arch.second)));

    let mut h = String::new();
    writeln!(h, "version {VERSION}").unwrap();
    writeln!(h, "phase {}", state.phase.name()).unwrap();
    writeln!(h, "epoch {}", state.epoch).unwrap();
    writeln!(h, "arch_step {}", state.arch_step).unwrap();
    writeln!(h, "adam_w.step {}", state.adam_w.step).unwrap();
    writeln!(h, "adam_arch.step {}", state.adam_arch.step).unwrap();
    writeln!(h, "rng.seed {}", hex(&state.rng.get_seed())).unwrap();
    writeln!(h, "rng.stream {}", state.rng.get_stream()).unwrap();
    writeln!(h, "rng.word_pos {}", state.rng.get_word_pos()).unwrap();
    match state.final_search_loss {
        Some(l) => writeln!(h, "final_search_loss {:016x}", l.to_bits()).unwrap(),
        None => writeln!(h, "final_search_loss none").unwrap(),
    }
    match &state.derived {
        Some(a) => writeln!(h, "derived {}", derived_line(a)).unwrap(),
        None => writeln!(h, "derived none").unwrap(),
    }
    let mut offset = 0;
    for (name, bytes) in &sections {
        writeln!(h, "section {name} {offset} {}", bytes.len()).unwrap();
        offset += bytes.len();
    }
    h.push_str("END\n");

    let mut out = Vec::with_capacity(MAGIC.len() + h.len() + offset);
    out.extend_from_slice(MAGIC);
    out.push(b'\n');
    out.extend_from_slice(h.as_bytes());
    for (_, bytes) in sections {
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RunState> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC || bytes[4] != b'\n' {
        return Err(ckpt_err("not a checkpoint (bad magic)"));
    }
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nEND\n")
        .ok_or_else(|| ckpt_err("header has no END line"))?;
    let header = std::str::from_utf8(&bytes[5..end + 1]).map_err(|_| ckpt_err("header is not text"))?;
    let blobs = &bytes[end + 5..];

    let mut fields = std::collections::HashMap::new();
    let mut sections = std::collections::HashMap::new();
    for line in header.lines() {
        let (k, v) = line.split_once(' ').ok_or_else(|| ckpt_err(format!("bad header line {line:?}")))?;
        if k == "section" {
            let p: Vec<&str> = v.split(' ').collect();
            let nums: Option<Vec<usize>> = p.get(1..3).map(|s| s.iter().filter_map(|x| x.parse().ok()).collect());
            match nums.as_deref() {
                Some(&[off, len]) if off + len <= blobs.len() => {
                    sections.insert(p[0].to_string(), &blobs[off..off + len]);
                }
                _ => return Err(ckpt_err(format!("bad section line {line:?}"))),
            }
        } else {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let field = |k: &str| fields.get(k).map(String::as_str).ok_or_else(|| ckpt_err(format!("missing {k}")));
    let num = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|_| ckpt_err(format!("bad {k}"))) };
    let section = |k: &str| sections.get(k).copied().ok_or_else(|| ckpt_err(format!("missing section {k}")));

    let version = num("version")?;
    if version != VERSION as u64 {
        return Err(ckpt_err(format!("version {version} is not supported (expected {VERSION})")));
    }
    let text = |k: &str| -> Result<&str> {
        std::str::from_utf8(section(k)?).map_err(|_| ckpt_err(format!("section {k} is not text")))
    };
    let cfg = SearchConfig::parse(text("config")?)?;
    let mut state = RunState::new(cfg)?;
    state.phase = Phase::parse(field("phase")?).ok_or_else(|| ckpt_err("bad phase"))?;
    state.epoch = num("epoch")? as usize;
    state.arch_step = num("arch_step")? as usize;
    state.metrics = parse_metrics_csv(text("metrics")?)?;

    let tensors = |k: &str, n: usize| -> Result<Vec<Tensor>> {
        let mut cur = Cursor::new(section(k)?);
        let ts = (0..n).map(|_| Tensor::read_le(&mut cur)).collect::<Result<Vec<_>>>()?;
        if (cur.position() as usize) != cur.get_ref().len() {
            return Err(ckpt_err(format!("section {k} has trailing bytes")));
        }
        Ok(ts)
    };
    let nw = state.net.weights.len();
    let na = state.net.arch.len();
    state.net.weights.load_values(tensors("weights", nw)?)?;
    state.net.arch.load_values(tensors("arch", na)?)?;
    let adam = |prefix: &str, n: usize, template: &Adam| -> Result<Adam> {
        let first = tensors(&format!("{prefix}.first"), n)?;
        let second = tensors(&format!("{prefix}.second"), n)?;
        for (t, m) in template.first.iter().zip(first.iter().chain(&second)) {
            if t.shape() != m.shape() {
                return Err(ckpt_err(format!("{prefix} moment shape mismatch")));
            }
        }
        Ok(Adam {
            step: num(&format!("{prefix}.step"))?,
            first,
            second,
            ..template.clone()
        })
    };
    state.adam_w = adam("adam_w", nw, &state.adam_w)?;
    state.adam_arch = adam("adam_arch", na, &state.adam_arch)?;

    let seed: [u8; 32] = unhex(field("rng.seed")?)
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| ckpt_err("bad rng.seed"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(num("rng.stream")?);
    rng.set_word_pos(field("rng.word_pos")?.parse().map_err(|_| ckpt_err("bad rng.word_pos"))?);
    state.rng = rng;

    state.final_search_loss = match field("final_search_loss")? {
        "none" => None,
        v => Some(f64::from_bits(
            u64::from_str_radix(v, 16).map_err(|_| ckpt_err("bad final_search_loss"))?,
        )),
    };
    state.derived = match field("derived")? {
        "none" => None,
        v => Some(parse_derived(&state.cfg, v)?),
    };
    Ok(state)
}

pub fn save_checkpoint(path: &Path, state: &RunState) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state))
}

pub fn load_checkpoint(path: &Path) -> Result<RunState> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda_order: Option<f64>,
    pub lambda_flops: Option<f64>,
    pub train_mode: Option<TrainMode>,
    pub softmax_baseline: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SearchConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.lambda_order {
            cfg.lambda_order = l;
        }
        if let Some(l) = self.lambda_flops {
            cfg.lambda_flops = l;
        }
        if let Some(m) = self.train_mode {
            cfg.train_mode = m;
        }
        if self.softmax_baseline {
            cfg.normalizer = Normalizer::Softmax;
        }
        cfg.validate()
    }
}

/// Options shared by the training commands.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub overrides: Overrides,
    /// Stop after this many epochs of the command's phase.
    pub stop_after: Option<usize>,
    /// Architecture file for from-scratch training without a search.
    pub arch: Option<PathBuf>,
}

pub fn load_config(path: Option<&Path>) -> Result<SearchConfig> {
    match path {
        Some(p) => SearchConfig::parse(&fs::read_to_string(p)?),
        None => Ok(SearchConfig::default()),
    }
}

/// Training images named by the config: the PGM files under
/// `data_dir/hr` in name order, or synthetic textures when `data_dir` is empty.
pub fn load_dataset(cfg: &SearchConfig) -> Result<Dataset> {
    if cfg.data_dir.is_empty() {
        return Dataset::synthesize(cfg);
    }
    let dir = Path::new(&cfg.data_dir).join("hr");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    files.sort();
    let hr = files.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?;
    Dataset::from_pairs(cfg, make_pairs(hr, cfg.scale)?)
}

fn phase_file(phase: Phase) -> &'static str {
    match phase {
        Phase::Pretrain => "pretrain.ckpt",
        Phase::Search => "search.ckpt",
        Phase::Final => "final.ckpt",
    }
}

fn write_manifest(out: &Path, command: &str, state: &RunState, progress: Progress) -> Result<()> {
    let text = format!(
        "command = \"{command}\"\nseed = {}\nconfig_hash = \"{:016x}\"\nconfig = \"config.toml\"\nphase = \"{}\"\nepoch = {}\ncomplete = {}\ncheckpoint = \"{}\"\n",
        state.cfg.seed,
        state.cfg.hash(),
        state.phase.name(),
        state.epoch,
        progress == Progress::Complete,
        phase_file(state.phase),
    );
    write_atomic(&out.join("config.toml"), state.cfg.to_toml().as_bytes())?;
    write_atomic(&out.join("manifest.toml"), text.as_bytes())
}

fn persist(out: &Path, state: &RunState) -> Result<()> {
    save_checkpoint(&out.join(phase_file(state.phase)), state)?;
    write_atomic(&out.join("metrics.csv"), metrics_csv(&state.metrics).as_bytes())
}

/// Loads the state a command continues from: `--resume` if given, else the
/// upstream checkpoint in the run directory.
fn upstream(opts: &RunOptions, default: &str, what: &str) -> Result<RunState> {
    let path = opts.resume.clone().unwrap_or_else(|| opts.out.join(default));
    if !path.exists() {
        return Err(ckpt_err(format!("{what} needs {} (not found)", path.display())));
    }
    let mut state = load_checkpoint(&path)?;
    opts.overrides.apply(&mut state.cfg)?;
    Ok(state)
}

fn drive(
    opts: &RunOptions,
    command: &str,
    mut state: RunState,
    run: impl FnOnce(&mut RunState, &Dataset, Option<usize>, &mut dyn FnMut(&RunState) -> Result<()>) -> Result<Progress>,
) -> Result<(RunState, Progress)> {
    let _lock = RunLock::acquire(&opts.out)?;
    let data = load_dataset(&state.cfg)?;
    let out = opts.out.clone();
    let progress = run(&mut state, &data, opts.stop_after, &mut |s| persist(&out, s))?;
    persist(&opts.out, &state)?;
    write_manifest(&opts.out, command, &state, progress)?;
    if let Some(a) = &state.derived {
        write_atomic(&opts.out.join("arch.txt"), a.to_string().as_bytes())?;
    }
    Ok((state, progress))
}

pub fn cmd_pretrain(opts: &RunOptions) -> Result<(RunState, Progress)> {
    let state = match &opts.resume {
        Some(_) => upstream(opts, "pretrain.ckpt", "pretrain")?,
        None => {
            let mut cfg = load_config(opts.config.as_deref())?;
            opts.overrides.apply(&mut cfg)?;
            RunState::new(cfg)?
        }
    };
    drive(opts, "pretrain", state, |s, d, l, h| s.pretrain(d, l, h))
}

pub fn cmd_search(opts: &RunOptions) -> Result<(RunState, Progress)> {
    let state = upstream(opts, "pretrain.ckpt", "search")?;
    drive(opts, "search", state, |s, d, l, h| s.search(d, l, h))
}

pub fn cmd_train(opts: &RunOptions) -> Result<(RunState, Progress)> {
    let state = match &opts.arch {
        Some(path) => {
            let mut cfg = load_config(opts.config.as_deref())?;
            opts.overrides.apply(&mut cfg)?;
            if cfg.train_mode != TrainMode::FromScratch {
                return Err(Error::invalid("--arch without a search checkpoint requires from_scratch training"));
            }
            let arch: DerivedArch = fs::read_to_string(path)?.parse()?;
            let mut s = RunState::new(cfg)?;
            s.phase = Phase::Search;
            s.epoch = s.cfg.t2;
            s.derived = Some(arch);
            s
        }
        None => upstream(opts, "search.ckpt", "train")?,
    };
    drive(opts, "train", state, |s, d, l, h| s.train_final(d, l, h))
}

/// The derived architecture of a finished search.
pub fn cmd_derive(opts: &RunOptions) -> Result<DerivedArch> {
    let state = upstream(opts, "search.ckpt", "derive")?;
    let arch = state
        .derived
        .ok_or_else(|| Error::invalid("checkpoint has no derived architecture; finish the search first"))?;
    fs::create_dir_all(&opts.out)?;
    write_atomic(&opts.out.join("arch.txt"), arch.to_string().as_bytes())?;
    Ok(arch)
}

/// PSNR of two image files in dB.
pub fn cmd_eval_files(pred: &Path, target: &Path) -> Result<f64> {
    psnr(&read_pgm(pred)?, &read_pgm(target)?, 1.0)
}

/// Mean validation PSNR of the derived network in a checkpoint.
pub fn cmd_eval(opts: &RunOptions) -> Result<f64> {
    let mut state = upstream(opts, "final.ckpt", "eval")?;
    let arch = state
        .derived
        .clone()
        .ok_or_else(|| Error::invalid("checkpoint has no derived architecture"))?;
    let data = load_dataset(&state.cfg)?;
    let (_, psnrs) = state.eval_derived(&arch, &data.val)?;
    Ok(psnrs.iter().sum::<f64>() / psnrs.len() as f64)
}

/// FLOPs at `h x w` LR input and parameter count.
pub fn cmd_flops(arch: &DerivedArch, h: usize, w: usize) -> (u64, u64) {
    (count_flops(arch, h, w), count_params(arch))
}

/// Writes `count` synthetic HR images, their LR versions and a manifest.
pub fn cmd_gendata(out: &Path, seed: u64, count: usize, size: usize, scale: usize) -> Result<Vec<ImagePair>> {
    let _lock = RunLock::acquire(out)?;
    let pairs = make_pairs(gen_synthetic(seed, count, size, size)?, scale)?;
    for sub in ["hr", "lr"] {
        fs::create_dir_all(out.join(sub))?;
    }
    for p in &pairs {
        write_pgm(&out.join("hr").join(format!("{:05}.pgm", p.id)), &p.hr)?;
        write_pgm(&out.join("lr").join(format!("{:05}.pgm", p.id)), &p.lr)?;
    }
    write_atomic(&out.join("manifest.txt"), manifest(seed, &pairs).as_bytes())?;
    Ok(pairs)
}

/// One-line report for a failed command: `error[kind]: message`.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error[{}]: {msg}", e.kind())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SearchConfig {
        SearchConfig {
            blocks: 2,
            cells_per_block: 1,
            base_width: 6,
            num_images: 4,
            val_images: 2,
            hr_size: 16,
            patch_size: 8,
            batch_size: 2,
            t1: 1,
            t2: 1,
            t3: 1,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny();
        let data = Dataset::synthesize(&cfg).unwrap();
        let mut s = RunState::new(cfg).unwrap();
        s.run_all(&data, &mut |_| Ok(())).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn checkpoint_rejects_other_versions_and_garbage() {
        let s = RunState::new(tiny()).unwrap();
        let bytes = encode_checkpoint(&s);
        let text = String::from_utf8_lossy(&bytes).replacen("version 1", "version 9", 1);
        let err = decode_checkpoint(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        assert!(decode_checkpoint(b"PNG\n").is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let row = MetricsRow {
            epoch: 3,
            phase: Phase::Search,
            loss_content: 0.1 + 0.2,
            loss_efficiency: 1e-300,
            loss_order: -0.0,
            r_value: 1.0 / 3.0,
            psnr_val: 27.123456789012345,
            nnz_alpha: 9,
            nnz_beta: 2,
            wall_seconds: 0.0,
        };
        let text = metrics_csv(std::slice::from_ref(&row));
        assert!(text.starts_with("epoch,phase,loss_content"));
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back, vec![row]);
        assert_eq!(back[0].loss_content.to_bits(), (0.1f64 + 0.2).to_bits());
        assert!(parse_metrics_csv("a,b\n").is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(a);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = Error::Config(vec!["missing key t1".into(), "unknown key foo".into()]);
        let line = error_line(&e);
        assert!(line.starts_with("error[config]: "));
        assert!(!line.contains('\n'));
    }
}
