//! Dataset loaders, PGM/PPM codecs, bicubic resampling, synthetic data and
//! checkpoints.
//!
//! Pixels are `f32` in `[0, 1]`; conversion to 8-bit happens only here and
//! at PSNR time.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAXN0001";

/// Images `[N, C, H, W]` with one label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
}

impl LabeledImageSet {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: &str) -> Result<Self> {
        let (n, _, _, _) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::shape_mismatch(&[labels.len()], &[n]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(LabeledImageSet {
            images,
            labels,
            classes,
            split: split.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Tensor<f32> {
        let [c, h, w] = self.image_shape();
        self.images.item(i).reshape(&[c, h, w]).expect("image reshape")
    }

    /// Images at `indices`, stacked, with their labels.
    pub fn subset(&self, indices: &[usize], split: &str) -> Result<LabeledImageSet> {
        let items: Vec<Tensor<f32>> = indices.iter().map(|&i| self.images.item(i)).collect();
        let images = if items.is_empty() {
            let [c, h, w] = self.image_shape();
            Tensor::zeros(&[0, c, h, w])?
        } else {
            Tensor::stack(&items)?.reshape(&{
                let [c, h, w] = self.image_shape();
                [indices.len(), c, h, w]
            })?
        };
        LabeledImageSet::new(
            images,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
            split,
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Parses the CIFAR-10 binary layout: per record one label byte and three
/// 1024-byte channel planes.
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<LabeledImageSet> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::format(
            path,
            format!("length {} is not a positive multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(path, format!("record {i}: label {} > 9", rec[0])));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    LabeledImageSet::new(Tensor::from_vec(&[n, 3, 32, 32], data)?, labels, 10, "cifar10")
}

pub fn load_cifar10_binary(path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let path = path.as_ref();
    parse_cifar10(&fs::read(path)?, path)
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{file_name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Encodes a `[1, H, W]` (P5) or `[3, H, W]` (P6) image, maxval 255.
pub fn encode_pnm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected [1, H, W] or [3, H, W]".into(),
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = format!("{}\n{w} {h}\n255\n", if c == 1 { "P5" } else { "P6" }).into_bytes();
    let d = img.data();
    for p in 0..h * w {
        for ch in 0..c {
            out.push(to_byte(d[ch * h * w + p]));
        }
    }
    Ok(out)
}

/// Decodes binary PGM/PPM with maxval 255 into `[C, H, W]` in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(path, "bad magic; expected P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported; expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "malformed header"));
    }
    pos += 1;
    let body = &bytes[pos..];
    if body.len() != channels * h * w {
        return Err(Error::format(
            path,
            format!("expected {} pixel bytes, found {}", channels * h * w, body.len()),
        ));
    }
    let mut data = vec![0.0f32; channels * h * w];
    for p in 0..h * w {
        for ch in 0..channels {
            data[ch * h * w + p] = body[p * channels + ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[channels, h, w], data)
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_pnm(&fs::read(path)?, path)
}

pub fn save_pnm(img: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pnm(img)?)
}

/// Every `.pgm`/`.ppm` in `dir`, in file-name order, as one unlabeled set.
/// All images must share a shape.
pub fn load_pnm_dir(dir: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no .pgm or .ppm images"));
    }
    let images = paths.iter().map(load_pnm).collect::<Result<Vec<_>>>()?;
    for (p, img) in paths.iter().zip(&images) {
        if img.shape() != images[0].shape() {
            return Err(Error::format(
                p,
                format!("shape {:?} differs from {:?}", img.shape(), images[0].shape()),
            ));
        }
    }
    let n = images.len();
    LabeledImageSet::new(Tensor::stack(&images)?, vec![0; n], 1, "images")
}

/// Catmull-Rom cubic (a = −0.5).
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample (first source index, weights) for resampling `n_in` to
/// `n_out`. Downscaling widens the kernel by the inverse scale.
fn resample_taps(n_in: usize, n_out: usize) -> Vec<(isize, Vec<f64>)> {
    let scale = n_out as f64 / n_in as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let first = (center - support).floor() as isize;
            let last = (center + support).ceil() as isize;
            let mut w: Vec<f64> = (first..=last).map(|j| cubic((j as f64 - center) * stretch)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (first, w)
        })
        .collect()
}

fn resize_axis(src: &[f32], planes: usize, len: usize, stride: usize, count: usize, n_out: usize, along_rows: bool) -> Vec<f32> {
    // along_rows: resample the H axis of [planes, len(H), count(W)].
    // otherwise: resample the W axis of [planes, count(H), len(W)].
    let taps = resample_taps(len, n_out);
    let clamp = |j: isize| j.clamp(0, len as isize - 1) as usize;
    let mut out = vec![0.0f32; planes * n_out * count];
    for p in 0..planes {
        let s = &src[p * len * count..(p + 1) * len * count];
        let o = &mut out[p * n_out * count..(p + 1) * n_out * count];
        for (i, (first, w)) in taps.iter().enumerate() {
            for c in 0..count {
                let mut acc = 0.0f64;
                for (t, &wt) in w.iter().enumerate() {
                    let j = clamp(first + t as isize);
                    let v = if along_rows { s[j * stride + c] } else { s[c * stride + j] };
                    acc += wt * v as f64;
                }
                if along_rows {
                    o[i * count + c] = acc as f32;
                } else {
                    o[c * n_out + i] = acc as f32;
                }
            }
        }
    }
    out
}

/// Resamples `[C, H, W]` (or `[N, C, H, W]`) to `out_h × out_w` with an
/// edge-clamped Catmull-Rom kernel.
pub fn bicubic_resize_to(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if !(s.len() == 3 || s.len() == 4) || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("cannot resize to {out_h}x{out_w}"),
        });
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h == 0 || w == 0 {
        return Err(Error::InvalidGeometry("empty image".into()));
    }
    let planes: usize = s[..s.len() - 2].iter().product();
    let rows = resize_axis(img.data(), planes, h, w, w, out_h, true);
    let cols = resize_axis(&rows, planes, w, w, out_h, out_w, false);
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    Tensor::from_vec(&shape, cols)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

/// Integer-factor bicubic resize. Downscaling requires dimensions
/// divisible by `scale`.
pub fn bicubic_resize(img: &Tensor<f32>, scale: usize, direction: Direction) -> Result<Tensor<f32>> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    let s = img.shape();
    if s.len() < 3 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected [C, H, W] or [N, C, H, W]".into(),
        });
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    match direction {
        Direction::Up => bicubic_resize_to(img, h * scale, w * scale),
        Direction::Down => {
            if h % scale != 0 || w % scale != 0 || h < scale {
                return Err(Error::InvalidGeometry(format!("{h}x{w} is not divisible by {scale}")));
            }
            bicubic_resize_to(img, h / scale, w / scale)
        }
    }
}

/// Crops `[.., H, W]` to the largest size divisible by `scale`.
pub fn mod_crop(img: &Tensor<f32>, scale: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    let r = s.len();
    let (h, w) = (s[r - 2], s[r - 1]);
    let (nh, nw) = (h - h % scale, w - w % scale);
    crop(img, 0, 0, nh, nw)
}

/// Window `[top..top+h, left..left+w]` of every plane.
pub fn crop(img: &Tensor<f32>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    let r = s.len();
    let (ih, iw) = (s[r - 2], s[r - 1]);
    if top + h > ih || left + w > iw || h == 0 || w == 0 {
        return Err(Error::InvalidGeometry(format!(
            "crop {h}x{w} at ({top}, {left}) exceeds {ih}x{iw}"
        )));
    }
    let planes: usize = s[..r - 2].iter().product();
    let mut out = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        for y in top..top + h {
            let base = p * ih * iw + y * iw;
            out.extend_from_slice(&img.data()[base + left..base + left + w]);
        }
    }
    let mut shape = s.to_vec();
    shape[r - 2] = h;
    shape[r - 1] = w;
    Tensor::from_vec(&shape, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Two classes of noisy images around opposite mean patterns.
    TwoGaussians,
    /// Ten classes of bar gratings, one orientation per class.
    OrientedBars,
    /// Grayscale piecewise-constant images with straight edges; the label is
    /// the orientation bucket (of four) of the dominant edge.
    SrEdges,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two-gaussians" | "two-gaussians-images" => Ok(SynthKind::TwoGaussians),
            "oriented-bars" | "oriented-bars-10class" => Ok(SynthKind::OrientedBars),
            "sr-edges" => Ok(SynthKind::SrEdges),
            _ => Err(Error::InvalidArgument(format!(
                "unknown synthetic set `{s}`; expected two-gaussians, oriented-bars or sr-edges"
            ))),
        }
    }

    pub fn classes(self) -> usize {
        match self {
            SynthKind::TwoGaussians => 2,
            SynthKind::OrientedBars => 10,
            SynthKind::SrEdges => 4,
        }
    }

    /// Default `[C, H, W]`.
    pub fn default_shape(self) -> [usize; 3] {
        match self {
            SynthKind::TwoGaussians => [3, 16, 16],
            SynthKind::OrientedBars => [3, 32, 32],
            SynthKind::SrEdges => [1, 32, 32],
        }
    }
}

/// `n` images at the kind's default geometry.
pub fn synth_dataset(rng: &mut Rng, kind: SynthKind, n: usize) -> Result<LabeledImageSet> {
    let [c, h, w] = kind.default_shape();
    synth_dataset_sized(rng, kind, n, c, h, w)
}

/// Labels cycle through the classes (balanced to within one); every image
/// draws from its own stream so the set is independent of generation order.
pub fn synth_dataset_sized(rng: &mut Rng, kind: SynthKind, n: usize, c: usize, h: usize, w: usize) -> Result<LabeledImageSet> {
    if c == 0 || h < 4 || w < 4 {
        return Err(Error::InvalidGeometry(format!("synthetic images need at least 1x4x4, got {c}x{h}x{w}")));
    }
    let base = rng.split(0x5eed);
    // Shared class templates for the gaussian set.
    let mut trng = base.split(u64::MAX);
    let template: Vec<f32> = (0..c * h * w).map(|_| trng.normal() as f32).collect();
    let classes = kind.classes();
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let mut r = base.split(i as u64);
        let img = match kind {
            SynthKind::TwoGaussians => {
                let sign = if label == 0 { -1.0 } else { 1.0 };
                template
                    .iter()
                    .map(|&t| (0.5 + 0.12 * sign * t + 0.15 * r.normal() as f32).clamp(0.0, 1.0))
                    .collect()
            }
            SynthKind::OrientedBars => oriented_bars(&mut r, label, c, h, w),
            SynthKind::SrEdges => sr_edges(&mut r, label, c, h, w),
        };
        data.extend(img);
        labels.push(label);
    }
    LabeledImageSet::new(Tensor::from_vec(&[n, c, h, w], data)?, labels, classes, "synthetic")
}

fn oriented_bars(r: &mut Rng, label: usize, c: usize, h: usize, w: usize) -> Vec<f32> {
    let theta = std::f64::consts::PI * label as f64 / 10.0 + r.range(-0.05, 0.05);
    let (sn, cs) = theta.sin_cos();
    let period = r.range(5.0, 9.0);
    let phase = r.range(0.0, period);
    let duty = r.range(0.35, 0.6);
    let fg: Vec<f64> = (0..c).map(|_| r.range(0.55, 1.0)).collect();
    let bg: Vec<f64> = (0..c).map(|_| r.range(0.0, 0.4)).collect();
    let mut out = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            // Bars run along theta; distance is measured across them.
            let d = -(x as f64 - w as f64 / 2.0) * sn + (y as f64 - h as f64 / 2.0) * cs + phase;
            let on = d.rem_euclid(period) < duty * period;
            for ch in 0..c {
                let v = if on { fg[ch] } else { bg[ch] } + 0.05 * r.normal();
                out[ch * h * w + y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

fn sr_edges(r: &mut Rng, label: usize, c: usize, h: usize, w: usize) -> Vec<f32> {
    const SS: usize = 4;
    let edges: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|k| {
            let theta = if k == 0 {
                std::f64::consts::FRAC_PI_4 * (label as f64 + r.uniform())
            } else {
                r.range(0.0, std::f64::consts::PI)
            };
            let (sn, cs) = theta.sin_cos();
            let offset = r.range(-0.3, 0.3) * h.min(w) as f64;
            let contrast = if k == 0 { r.range(0.3, 0.6) } else { r.range(0.1, 0.3) };
            (cs, sn, offset, contrast * if r.bernoulli(0.5) { 1.0 } else { -1.0 })
        })
        .collect();
    let base: Vec<f64> = (0..c).map(|_| r.range(0.3, 0.7)).collect();
    let mut out = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            // Box-filtered supersampling keeps edges sharp but not aliased.
            let mut acc = 0.0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = x as f64 + (sx as f64 + 0.5) / SS as f64 - w as f64 / 2.0;
                    let py = y as f64 + (sy as f64 + 0.5) / SS as f64 - h as f64 / 2.0;
                    acc += edges
                        .iter()
                        .map(|&(cs, sn, off, k)| if px * cs + py * sn > off { k } else { 0.0 })
                        .sum::<f64>();
                }
            }
            let v = acc / (SS * SS) as f64;
            for ch in 0..c {
                out[ch * h * w + y * w + x] = (base[ch] + v).clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// Serializes every tensor of `store` in order.
pub fn encode_checkpoint(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend((store.len() as u32).to_le_bytes());
    for (name, t, _) in store.iter() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    struct Reader<'a> {
        b: &'a [u8],
        pos: usize,
    }
    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Option<&'a [u8]> {
            let s = self.b.get(self.pos..self.pos.checked_add(n)?)?;
            self.pos += n;
            Some(s)
        }
        fn u32(&mut self) -> Option<u32> {
            self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        }
    }
    let trunc = || Error::format(path, "truncated checkpoint");
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::format(path, "bad magic; expected RAXN0001"));
    }
    let count = r.u32().ok_or_else(trunc)?;
    let mut out: Vec<(String, Tensor<f32>)> = Vec::new();
    for _ in 0..count {
        let len = r.u32().ok_or_else(trunc)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(trunc)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(Error::format(path, format!("duplicate tensor `{name}`")));
        }
        let rank = r.u32().ok_or_else(trunc)? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize).ok_or_else(trunc))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(trunc)?).ok_or_else(trunc)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save_checkpoint(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(store))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path)?, path)
}

/// Replaces every tensor of `store` with the checkpoint's. Key sets must
/// match exactly and shapes must agree.
pub fn apply_checkpoint(store: &mut ParamStore<f32>, tensors: Vec<(String, Tensor<f32>)>) -> Result<()> {
    let missing: Vec<String> = store
        .names()
        .filter(|n| !tensors.iter().any(|(t, _)| t == n))
        .map(String::from)
        .collect();
    let unexpected: Vec<String> = tensors
        .iter()
        .filter(|(n, _)| !store.contains(n))
        .map(|(n, _)| n.clone())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(Error::CheckpointKeys { missing, unexpected });
    }
    for (name, t) in &tensors {
        let have = store.get(name)?.shape();
        if have != t.shape() {
            return Err(Error::shape_mismatch(have, t.shape()));
        }
    }
    for (name, t) in tensors {
        *store.get_mut(&name)? = t;
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, store: &mut ParamStore<f32>) -> Result<()> {
    apply_checkpoint(store, read_checkpoint(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_two_records() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 3;
        bytes[CIFAR_RECORD] = 7;
        bytes[1] = 255;
        bytes[CIFAR_RECORD + 3072] = 51;
        let set = parse_cifar10(&bytes, Path::new("x")).unwrap();
        assert_eq!(set.labels, [3, 7]);
        assert_eq!(set.images.data()[0], 1.0);
        assert_eq!(set.images.at(&[1, 2, 31, 31]), 0.2);
    }

    #[test]
    fn cifar_rejects_truncation_and_bad_labels() {
        assert!(matches!(parse_cifar10(&[0; 3072], Path::new("x")), Err(Error::Format { .. })));
        let mut bytes = vec![0u8; CIFAR_RECORD];
        bytes[0] = 10;
        assert!(matches!(parse_cifar10(&bytes, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_fixture() {
        let bytes = b"P5\n2 2\n255\n\x00\x55\xaa\xff";
        let t = decode_pnm(bytes, Path::new("x")).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        for (v, e) in t.data().iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((v - e).abs() <= 1.0 / 255.0);
        }
        assert_eq!(encode_pnm(&t).unwrap(), bytes);
    }

    #[test]
    fn pnm_header_comments_and_errors() {
        let t = decode_pnm(b"P6 # rgb\n1 1 255\n\x01\x02\x03", Path::new("x")).unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data()[2], 3.0 / 255.0);
        assert!(decode_pnm(b"P3\n1 1\n255\n0", Path::new("x")).is_err());
        assert!(decode_pnm(b"P5\n2 2\n255\n\x00", Path::new("x")).is_err());
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00", Path::new("x")).is_err());
    }

    #[test]
    fn cubic_kernel_shape() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert_eq!(cubic(0.5), 0.5625);
        assert_eq!(cubic(1.5), -0.0625);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = Rng::new(1);
        let mut img = Tensor::<f32>::zeros(&[2, 5, 7]).unwrap();
        img.data_mut().iter_mut().for_each(|v| *v = rng.uniform() as f32);
        let same = bicubic_resize(&img, 1, Direction::Up).unwrap();
        assert!(same.max_abs_diff(&img).unwrap() < 1e-6);

        let flat = Tensor::full(&[1, 8, 8], 0.3f32).unwrap();
        for t in [
            bicubic_resize(&flat, 2, Direction::Up).unwrap(),
            bicubic_resize(&flat, 2, Direction::Down).unwrap(),
        ] {
            assert!(t.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn down_requires_divisible() {
        let img = Tensor::<f32>::zeros(&[1, 5, 6]).unwrap();
        assert!(bicubic_resize(&img, 2, Direction::Down).is_err());
        assert_eq!(mod_crop(&img, 2).unwrap().shape(), &[1, 4, 6]);
    }

    #[test]
    fn synth_balanced_and_seeded() {
        let a = synth_dataset(&mut Rng::new(3), SynthKind::TwoGaussians, 200).unwrap();
        assert_eq!(a.class_counts(), [100, 100]);
        let b = synth_dataset(&mut Rng::new(3), SynthKind::TwoGaussians, 200).unwrap();
        assert_eq!(a, b);
        let bars = synth_dataset(&mut Rng::new(3), SynthKind::OrientedBars, 30).unwrap();
        assert_eq!(bars.class_counts(), [3; 10]);
        assert!(bars.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn checkpoint_bad_magic_and_trailing() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::from_vec(&[2], vec![1.0, -2.5]).unwrap(), true);
        let mut bytes = encode_checkpoint(&s);
        let back = decode_checkpoint(&bytes, Path::new("x")).unwrap();
        assert_eq!(back[0].1.data(), &[1.0, -2.5]);
        bytes.push(0);
        assert!(decode_checkpoint(&bytes, Path::new("x")).is_err());
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes, Path::new("x")).is_err());
    }
}
