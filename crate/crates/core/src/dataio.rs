//! Synthetic images, LR synthesis, PSNR, dataset splitting and PGM files.
//!
//! Images are `[3, H, W]` tensors with values in `[0, 1]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndgraph::Tensor;

/// A high-resolution image with its box-downsampled input.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: usize,
    pub hr: Tensor,
    pub lr: Tensor,
}

/// Per-image generator: stream `index` of the ChaCha stream family `seed`.
fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Separable box blur with clamped borders, in place on one plane.
fn box_blur(plane: &mut [f64], h: usize, w: usize, radius: usize) {
    let r = radius as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -r..=r {
                let sx = (x as isize + d).clamp(0, w as isize - 1) as usize;
                acc += plane[y * w + sx];
            }
            tmp[y * w + x] = acc / (2 * radius + 1) as f64;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -r..=r {
                let sy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                acc += tmp[sy * w + x];
            }
            plane[y * w + x] = acc / (2 * radius + 1) as f64;
        }
    }
}

fn stretch(plane: &mut [f64]) {
    let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    plane.iter_mut().for_each(|v| *v = (*v - lo) / span);
}

/// One procedural intensity pattern in `[0, 1]`.
fn pattern<R: Rng>(kind: usize, h: usize, w: usize, rng: &mut R) -> Vec<f64> {
    let mut plane = vec![0.0; h * w];
    match kind {
        0 => {
            // Smoothed Gaussian field.
            let normal = rand::distributions::Uniform::new(-1.0, 1.0);
            plane.iter_mut().for_each(|v| *v = (0..4).map(|_| rng.sample(normal)).sum::<f64>());
            let radius = rng.gen_range(1..=3);
            box_blur(&mut plane, h, w, radius);
            box_blur(&mut plane, h, w, radius);
        }
        1 => {
            // Checkerboard of random period and phase.
            let period = rng.gen_range(2..=8);
            let (oy, ox) = (rng.gen_range(0..period), rng.gen_range(0..period));
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = (((y + oy) / period + (x + ox) / period) % 2) as f64;
                }
            }
        }
        2 => {
            // Linear gradient at a random angle.
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = c * x as f64 + s * y as f64;
                }
            }
        }
        _ => {
            // Superposed sinusoids.
            let waves: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(2..=4))
                .map(|_| {
                    (
                        rng.gen_range(0.05..0.5),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.3..1.0),
                    )
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = waves
                        .iter()
                        .map(|(f, th, ph, a)| a * (f * (th.cos() * x as f64 + th.sin() * y as f64) + ph).sin())
                        .sum();
                }
            }
        }
    }
    stretch(&mut plane);
    plane
}

/// `count` textures of size `h x w`, each a pure function of `(seed, index)`.
pub fn gen_synthetic(seed: u64, count: usize, h: usize, w: usize) -> Result<Vec<Tensor>> {
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!("synthetic images need at least 16x16, got {h}x{w}")));
    }
    (0..count).map(|i| gen_one(seed, i, h, w)).collect()
}

fn gen_one(seed: u64, index: usize, h: usize, w: usize) -> Result<Tensor> {
    let mut rng = image_rng(seed, index);
    let base = pattern(rng.gen_range(0..4), h, w, &mut rng);
    let detail = pattern(rng.gen_range(0..4), h, w, &mut rng);
    let mix: f64 = rng.gen_range(0.0..0.4);
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        let (lo, hi): (f64, f64) = (rng.gen_range(0.0..0.3), rng.gen_range(0.7..1.0));
        let flip = rng.gen_bool(0.3);
        data.extend(base.iter().zip(&detail).map(|(b, d)| {
            let v = (1.0 - mix) * b + mix * d;
            let v = if flip { 1.0 - v } else { v };
            (lo + (hi - lo) * v).clamp(0.0, 1.0)
        }));
    }
    Tensor::new(&[3, h, w], data)
}

fn chw(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, "rank", format!("expected [C, H, W], got {:?}", t.shape()))),
    }
}

/// `n x n` box-mean downsampling of a `[C, H, W]` image.
pub fn downsample(hr: &Tensor, n: usize) -> Result<Tensor> {
    let (c, h, w) = chw(hr, "downsample")?;
    if n == 0 || h % n != 0 || w % n != 0 {
        return Err(Error::shape("downsample", "extent", format!("{h}x{w} not divisible by {n}")));
    }
    let (lh, lw) = (h / n, w / n);
    let src = hr.data();
    let mut out = vec![0.0; c * lh * lw];
    let inv = 1.0 / (n * n) as f64;
    for ci in 0..c {
        for y in 0..lh {
            for x in 0..lw {
                let mut acc = 0.0;
                for dy in 0..n {
                    for dx in 0..n {
                        acc += src[(ci * h + y * n + dy) * w + x * n + dx];
                    }
                }
                out[(ci * lh + y) * lw + x] = acc * inv;
            }
        }
    }
    Tensor::new(&[c, lh, lw], out)
}

/// Pairs each HR image with its downsampled input; ids are positions.
pub fn make_pairs(hr: Vec<Tensor>, n: usize) -> Result<Vec<ImagePair>> {
    hr.into_iter()
        .enumerate()
        .map(|(id, hr)| {
            let lr = downsample(&hr, n)?;
            Ok(ImagePair { id, hr, lr })
        })
        .collect()
}

/// `10 log10(peak^2 / MSE)`, capped at 100 dB.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", "operands", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse < 1e-10 {
        return Ok(100.0);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(100.0))
}

/// Seeded shuffle split; the first half gets the extra item of an odd count.
pub fn split<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = items.len().div_ceil(2);
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    (pick(&order[..cut]), pick(&order[cut..]))
}

/// Catmull-Rom weight (`a = -0.5`).
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Taps and weights for every output coordinate along one axis.
fn cubic_taps(len: usize, n: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..len * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / n as f64 - 0.5;
            let i0 = src.floor();
            let t = src - i0;
            let mut idx = [0; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let i = i0 as isize + k as isize - 1;
                idx[k] = i.clamp(0, len as isize - 1) as usize;
                wts[k] = cubic(t - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Bicubic upsampling of a `[C, H, W]` or `[N, C, H, W]` tensor by `n`, with
/// half-pixel centres and clamp-to-edge borders.
pub fn bicubic_upsample(img: &Tensor, n: usize) -> Result<Tensor> {
    let shape = img.shape();
    if shape.len() < 3 || n == 0 {
        return Err(Error::shape("bicubic_upsample", "rank", format!("{shape:?} by {n}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = img.len() / (h * w);
    let (oh, ow) = (h * n, w * n);
    let xt = cubic_taps(w, n);
    let yt = cubic_taps(h, n);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut rows = vec![0.0; h * ow];
    for p in 0..planes {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (x, (idx, wts)) in xt.iter().enumerate() {
                rows[y * ow + x] = (0..4).map(|k| wts[k] * src[y * w + idx[k]]).sum();
            }
        }
        for (idx, wts) in &yt {
            for x in 0..ow {
                out.push((0..4).map(|k| wts[k] * rows[idx[k] * ow + x]).sum());
            }
        }
    }
    let mut oshape = shape.to_vec();
    let r = oshape.len();
    oshape[r - 2] = oh;
    oshape[r - 1] = ow;
    Tensor::new(&oshape, out)
}

/// Encodes `[C, H, W]` as `C` concatenated 8-bit P5 images. Multi-plane
/// files carry `# planes C` in the first header.
pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = chw(img, "write_pgm")?;
    let mut out = Vec::with_capacity(c * (h * w + 20));
    for ci in 0..c {
        let mut header = String::from("P5\n");
        if ci == 0 && c > 1 {
            let _ = writeln!(header, "# planes {c}");
        }
        let _ = write!(header, "{w} {h}\n255\n");
        out.extend_from_slice(header.as_bytes());
        out.extend(
            img.data()[ci * h * w..(ci + 1) * h * w]
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            what: "pgm".into(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Skips whitespace and comments; returns any comment text seen.
    fn skip_space(&mut self) -> String {
        let mut comments = String::new();
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    let start = self.pos;
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                    comments.push_str(&String::from_utf8_lossy(&self.bytes[start..self.pos]));
                    comments.push('\n');
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        comments
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("number out of range"))
    }

    /// Reads one P5 image; returns `(h, w, pixels, comments)`.
    fn image(&mut self) -> Result<(usize, usize, Vec<f64>, String)> {
        if self.bytes.len() < self.pos + 2 || &self.bytes[self.pos..self.pos + 2] != b"P5" {
            return Err(self.err("expected magic P5"));
        }
        self.pos += 2;
        let mut comments = self.skip_space();
        let w = self.number()?;
        comments += &self.skip_space();
        let h = self.number()?;
        comments += &self.skip_space();
        let maxval = self.number()?;
        if maxval != 255 {
            return Err(self.err(format!("unsupported maxval {maxval}")));
        }
        if w == 0 || h == 0 {
            return Err(self.err("zero image extent"));
        }
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(self.err("expected whitespace after maxval"));
        }
        self.pos += 1;
        let n = h * w;
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated payload: need {n} bytes, have {}", self.bytes.len() - self.pos)));
        }
        let px = self.bytes[self.pos..self.pos + n].iter().map(|&b| b as f64 / 255.0).collect();
        self.pos += n;
        Ok((h, w, px, comments))
    }
}

/// Decodes the format written by [`encode_pgm`] (plain P5 reads as one plane).
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = PgmCursor { bytes, pos: 0 };
    let (h, w, mut data, comments) = cur.image()?;
    let planes = comments
        .lines()
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("planes ").map(str::trim))
        .map(|p| p.parse::<usize>().map_err(|_| cur.err("bad plane count")))
        .transpose()?
        .unwrap_or(1);
    for _ in 1..planes {
        cur.skip_space();
        let (ph, pw, px, _) = cur.image()?;
        if (ph, pw) != (h, w) {
            return Err(cur.err("plane extents differ"));
        }
        data.extend(px);
    }
    Tensor::new(&[planes, h, w], data)
}

pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(img)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?).map_err(|e| match e {
        Error::Format { offset, msg, .. } => Error::Format {
            what: path.display().to_string(),
            offset,
            msg,
        },
        other => other,
    })
}

/// Text listing of a generated dataset: one `id seed height width` row each.
pub fn manifest(seed: u64, pairs: &[ImagePair]) -> String {
    let mut s = String::from("# id seed hr_height hr_width lr_height lr_width\n");
    for p in pairs {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            p.id,
            seed,
            p.hr.dim(1),
            p.hr.dim(2),
            p.lr.dim(1),
            p.lr.dim(2)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let a = gen_synthetic(3, 4, 16, 20).unwrap();
        let b = gen_synthetic(3, 4, 16, 20).unwrap();
        assert_eq!(a, b);
        assert!(gen_synthetic(3, 0, 16, 16).unwrap().is_empty());
        assert!(gen_synthetic(3, 1, 8, 16).is_err());
        // Index i does not depend on how many images were requested.
        assert_eq!(gen_synthetic(3, 1, 16, 20).unwrap()[0], a[0]);
    }

    #[test]
    fn histogram_covers_both_tails() {
        let imgs = gen_synthetic(11, 64, 16, 16).unwrap();
        let mut lo = 0;
        let mut hi = 0;
        for v in imgs.iter().flat_map(|t| t.data().iter()) {
            assert!((0.0..=1.0).contains(v));
            lo += (*v < 0.1) as usize;
            hi += (*v > 0.9) as usize;
        }
        assert!(lo > 0 && hi > 0, "{lo} {hi}");
    }

    #[test]
    fn box_downsample() {
        let c = Tensor::full(&[3, 4, 4], 0.3);
        assert_eq!(downsample(&c, 2).unwrap(), Tensor::full(&[3, 2, 2], 0.3));
        let blk = Tensor::new(&[1, 2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(downsample(&blk, 2).unwrap().data(), &[0.5]);
        assert!(downsample(&Tensor::zeros(&[1, 3, 4]), 2).is_err());
    }

    #[test]
    fn box_downsample_preserves_mean() {
        // Dyadic values keep every sum exact.
        let data: Vec<f64> = (0..3 * 8 * 8).map(|i| ((i * 37) % 64) as f64 / 64.0).collect();
        let hr = Tensor::new(&[3, 8, 8], data).unwrap();
        let lr = downsample(&hr, 2).unwrap();
        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
        assert_eq!(mean(&lr), mean(&hr));
    }

    #[test]
    fn psnr_values() {
        let a = Tensor::full(&[1, 2, 2], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        let z = Tensor::zeros(&[1, 2, 2]);
        let o = Tensor::full(&[1, 2, 2], 1.0);
        assert_eq!(psnr(&z, &o, 1.0).unwrap(), 0.0);
        let t = Tensor::full(&[1, 2, 2], 0.1);
        assert!((psnr(&z, &t, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&z, &Tensor::zeros(&[1, 1, 4]), 1.0).is_err());
    }

    #[test]
    fn split_rules() {
        let items: Vec<usize> = (0..10).collect();
        let (a, b) = split(&items, 1);
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut all: Vec<usize> = a.iter().chain(&b).cloned().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split(&items, 1), (a, b));
        let (a, b) = split(&(0..11).collect::<Vec<_>>(), 2);
        assert_eq!((a.len(), b.len()), (6, 5));
    }

    #[test]
    fn catmull_rom_impulse_response() {
        let row = Tensor::new(&[1, 1, 5], vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let up = bicubic_upsample(&row, 2).unwrap();
        assert_eq!(up.shape(), &[1, 2, 10]);
        let expect = [
            0.0, -0.0234375, -0.0703125, 0.2265625, 0.8671875, 0.8671875, 0.2265625, -0.0703125, -0.0234375, 0.0,
        ];
        assert_eq!(&up.data()[..10], &expect);
        assert_eq!(&up.data()[10..], &expect);
    }

    #[test]
    fn bicubic_keeps_constants_and_interior_ramps() {
        let c = bicubic_upsample(&Tensor::full(&[2, 3, 3], 0.25), 2).unwrap();
        assert!(c.data().iter().all(|v| (*v - 0.25).abs() < 1e-15));
        let ramp = Tensor::new(&[1, 1, 8], (0..8).map(|i| i as f64).collect()).unwrap();
        let up = bicubic_upsample(&ramp, 2).unwrap();
        for x in 4..12 {
            let src = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((up.data()[x] - src).abs() < 1e-12);
        }
    }

    #[test]
    fn pgm_round_trip_and_errors() {
        let img = gen_synthetic(5, 1, 16, 18).unwrap().remove(0);
        let back = decode_pgm(&encode_pgm(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!(((a * 255.0).round()) / 255.0, *b);
        }
        let black = encode_pgm(&Tensor::zeros(&[1, 1, 1])).unwrap();
        assert_eq!(black, b"P5\n1 1\n255\n\0");
        assert_eq!(decode_pgm(&black).unwrap().data(), &[0.0]);
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\0"), Err(Error::Format { offset: 0, .. })));
        let err = decode_pgm(b"P5\n2 2\n255\n\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 11, .. }), "{err}");
    }

    #[test]
    fn pgm_file_io() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let img = Tensor::new(&[3, 1, 2], vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
        write_pgm(&p, &img).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back.shape(), &[3, 1, 2]);
        fs::write(&p, b"P5\n1 1\n").unwrap();
        let msg = read_pgm(&p).unwrap_err().to_string();
        assert!(msg.contains("x.pgm"), "{msg}");
    }
}
