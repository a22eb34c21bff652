//! Incremental barycentric color transfer.
//!
//! Images are treated as point clouds in RGB space on `[0,1]^3`. Batches
//! are sampled from each image, an exact plan is solved between them, and
//! the barycentric images accumulate as running sums: for each draw
//! `Y_src|A += G * X_tgt|B` and `Y_tgt|B += G' * X_src|A`, with the
//! per-pixel deposited mass tracked alongside. Only the `m x m` restricted
//! cost and plan are ever materialized, so memory stays `O(n + m^2)` no
//! matter how many pixels the images have.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::DiscreteDistribution;
use crate::cost::CostSpec;
use crate::error::{OtError, Result};
use crate::minibatch::{sample_pair_asym, BatchKernel, MinibatchConfig};

/// An image as an RGB point cloud with its geometry, channels in `[0,1]`,
/// pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelCloud {
    rgb: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

impl PixelCloud {
    pub fn new(rgb: Vec<f64>, width: u32, height: u32) -> Result<Self> {
        if rgb.len() != (width as usize * height as usize) * 3 {
            return Err(OtError::InvalidParameter(format!(
                "{}x{} image needs {} channel values, got {}",
                width,
                height,
                width as usize * height as usize * 3,
                rgb.len()
            )));
        }
        if rgb.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(OtError::InvalidParameter(
                "channels must lie in [0,1]".into(),
            ));
        }
        Ok(PixelCloud { rgb, width, height })
    }

    pub fn n(&self) -> usize {
        self.rgb.len() / 3
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.rgb[i * 3..i * 3 + 3]
    }

    pub fn rgb_flat(&self) -> &[f64] {
        &self.rgb
    }

    /// View the pixels as a uniform distribution in RGB space.
    pub fn as_distribution(&self) -> DiscreteDistribution {
        DiscreteDistribution::from_flat(self.rgb.clone(), 3).expect("valid cloud")
    }
}

/// Load an 8-bit RGB PNG or binary PPM (P6), mapping channels to `[0,1]`
/// by `v / 255`. The format is detected from the file content.
pub fn load_image(path: &Path) -> Result<PixelCloud> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 2];
    file.read_exact(&mut magic)?;
    drop(file);
    if &magic == b"P6" {
        load_ppm(path)
    } else if magic == [0x89, b'P'] {
        load_png(path)
    } else {
        Err(OtError::ImageFormat(format!(
            "{}: expected an 8-bit RGB PNG or a binary PPM (P6)",
            path.display()
        )))
    }
}

fn load_png(path: &Path) -> Result<PixelCloud> {
    let decoder = png::Decoder::new(BufReader::new(std::fs::File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| OtError::ImageFormat(format!("{}: {e}", path.display())))?;
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| OtError::ImageFormat(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; buf_size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| OtError::ImageFormat(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(OtError::ImageFormat(format!(
            "{}: only 8-bit RGB PNG is supported (got {:?}/{:?})",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let bytes = &buf[..info.buffer_size()];
    let rgb = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    PixelCloud::new(rgb, info.width, info.height)
}

fn load_ppm(path: &Path) -> Result<PixelCloud> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let bad = |msg: &str| OtError::ImageFormat(format!("{}: {msg}", path.display()));
    // header: "P6" <ws> width <ws> height <ws> maxval <single ws> raster
    let mut header_fields = Vec::new();
    let mut byte = [0u8; 1];
    let mut field = String::new();
    let mut in_comment = false;
    while header_fields.len() < 4 {
        if reader.read(&mut byte)? == 0 {
            return Err(bad("truncated header"));
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
        } else if c.is_ascii_whitespace() {
            if !field.is_empty() {
                header_fields.push(std::mem::take(&mut field));
            }
        } else {
            field.push(c);
        }
    }
    if header_fields[0] != "P6" {
        return Err(bad("not a P6 PPM"));
    }
    let width: u32 = header_fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = header_fields[2].parse().map_err(|_| bad("bad height"))?;
    if header_fields[3] != "255" {
        return Err(bad("only maxval 255 is supported"));
    }
    let mut bytes = vec![0u8; width as usize * height as usize * 3];
    reader.read_exact(&mut bytes).map_err(|_| bad("truncated raster"))?;
    let rgb = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    PixelCloud::new(rgb, width, height)
}

/// Save as PNG or binary PPM depending on the extension; channels are
/// quantized by `round(v * 255)` (half away from zero).
pub fn save_image(cloud: &PixelCloud, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = cloud.rgb_flat().iter().map(|&v| (v * 255.0).round() as u8).collect();
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let file = BufWriter::new(std::fs::File::create(path)?);
            let mut encoder = png::Encoder::new(file, cloud.width, cloud.height);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| OtError::ImageFormat(e.to_string()))?;
            writer
                .write_image_data(&bytes)
                .map_err(|e| OtError::ImageFormat(e.to_string()))?;
            Ok(())
        }
        Some("ppm") => {
            let mut file = BufWriter::new(std::fs::File::create(path)?);
            write!(file, "P6\n{} {}\n255\n", cloud.width, cloud.height)?;
            file.write_all(&bytes)?;
            Ok(())
        }
        other => Err(OtError::ImageFormat(format!(
            "unsupported output extension {other:?}; use .png or .ppm"
        ))),
    }
}

/// How accumulated sums become output colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Rescale the running sum globally by `n / k`. Pixels never sampled
    /// stay black; exact in expectation.
    GlobalScale,
    /// Divide each pixel by its accumulated mass, falling back to the
    /// original color for pixels never sampled. The recommended mode.
    PerPixelMass,
}

impl Normalization {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global-scale" | "global_scale" | "global" => Some(Normalization::GlobalScale),
            "per-pixel-mass" | "per_pixel_mass" | "per-pixel" => Some(Normalization::PerPixelMass),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Normalization::GlobalScale => "global-scale",
            Normalization::PerPixelMass => "per-pixel-mass",
        }
    }
}

/// Running sums for one side of the transfer.
#[derive(Debug, Clone)]
pub struct TransferAccumulator {
    /// Barycentric running sums, n x 3.
    pub y: Vec<f64>,
    /// Accumulated coupling mass per pixel.
    pub mass: Vec<f64>,
    pub draws: u64,
}

impl TransferAccumulator {
    fn new(n: usize) -> Self {
        TransferAccumulator { y: vec![0.0; n * 3], mass: vec![0.0; n], draws: 0 }
    }

    fn finalize(
        &self,
        original: &PixelCloud,
        normalization: Normalization,
        k: u64,
    ) -> PixelCloud {
        let n = original.n();
        let mut rgb = vec![0.0; n * 3];
        match normalization {
            Normalization::GlobalScale => {
                let scale = n as f64 / k as f64;
                for (out, y) in rgb.iter_mut().zip(&self.y) {
                    *out = (y * scale).clamp(0.0, 1.0);
                }
            }
            Normalization::PerPixelMass => {
                for i in 0..n {
                    if self.mass[i] > 0.0 {
                        for c in 0..3 {
                            rgb[i * 3 + c] = (self.y[i * 3 + c] / self.mass[i]).clamp(0.0, 1.0);
                        }
                    } else {
                        rgb[i * 3..i * 3 + 3].copy_from_slice(original.pixel(i));
                    }
                }
            }
        }
        PixelCloud { rgb, width: original.width, height: original.height }
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutput {
    pub src_mapped: PixelCloud,
    pub tgt_mapped: PixelCloud,
    /// Accumulated mass per source pixel (diagnostics side channel).
    pub src_mass: Vec<f64>,
    pub tgt_mass: Vec<f64>,
    pub src_uncovered: usize,
    pub tgt_uncovered: usize,
    pub draws: u64,
}

/// Run the incremental transfer in both directions. Batch plans default to
/// the exact solver (`LossKind::W` in the config); entropic plans can be
/// selected through the config's loss.
pub fn incremental_transfer(
    src: &PixelCloud,
    tgt: &PixelCloud,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
    normalization: Normalization,
) -> Result<TransferOutput> {
    let (n_s, n_t) = (src.n(), tgt.n());
    cfg.validate(n_s, n_t)?;
    let src_dist = src.as_distribution();
    let tgt_dist = tgt.as_distribution();
    let mut acc_s = TransferAccumulator::new(n_s);
    let mut acc_t = TransferAccumulator::new(n_t);

    const CHUNK: u64 = 16;
    let mut start = 0u64;
    while start < cfg.k {
        let end = (start + CHUNK).min(cfg.k);
        let solved: Vec<(crate::minibatch::BatchPair, crate::plan::TransportPlan)> = (start..end)
            .into_par_iter()
            .map_init(
                || BatchKernel::new(&src_dist, &tgt_dist, cost, cfg),
                |kernel, t| {
                    let pair = sample_pair_asym(cfg.seed, t, n_s, n_t, cfg.m);
                    let (_, plan) = kernel.loss_and_plan(&pair.source, &pair.target)?;
                    Ok((pair, plan))
                },
            )
            .collect::<Result<_>>()?;
        for (pair, plan) in &solved {
            scatter(&mut acc_s, &mut acc_t, src, tgt, pair, plan);
        }
        start = end;
    }
    acc_s.draws = cfg.k;
    acc_t.draws = cfg.k;

    let src_uncovered = acc_s.mass.iter().filter(|&&m| m == 0.0).count();
    let tgt_uncovered = acc_t.mass.iter().filter(|&&m| m == 0.0).count();
    Ok(TransferOutput {
        src_mapped: acc_s.finalize(src, normalization, cfg.k),
        tgt_mapped: acc_t.finalize(tgt, normalization, cfg.k),
        src_mass: acc_s.mass,
        tgt_mass: acc_t.mass,
        src_uncovered,
        tgt_uncovered,
        draws: cfg.k,
    })
}

fn scatter(
    acc_s: &mut TransferAccumulator,
    acc_t: &mut TransferAccumulator,
    src: &PixelCloud,
    tgt: &PixelCloud,
    pair: &crate::minibatch::BatchPair,
    plan: &crate::plan::TransportPlan,
) {
    let m = pair.source.len();
    if let Some(perm) = plan.permutation() {
        let w = 1.0 / m as f64;
        for (p, &q) in perm.iter().enumerate() {
            let i = pair.source[p];
            let j = pair.target[q];
            for c in 0..3 {
                acc_s.y[i * 3 + c] += w * tgt.pixel(j)[c];
                acc_t.y[j * 3 + c] += w * src.pixel(i)[c];
            }
            acc_s.mass[i] += w;
            acc_t.mass[j] += w;
        }
    } else {
        for p in 0..m {
            let i = pair.source[p];
            for q in 0..m {
                let g = plan.get(p, q);
                if g == 0.0 {
                    continue;
                }
                let j = pair.target[q];
                for c in 0..3 {
                    acc_s.y[i * 3 + c] += g * tgt.pixel(j)[c];
                    acc_t.y[j * 3 + c] += g * src.pixel(i)[c];
                }
                acc_s.mass[i] += g;
                acc_t.mass[j] += g;
            }
        }
    }
}

/// Dense barycentric map `n * plan * X` for reference comparisons at small
/// sizes.
pub fn dense_barycentric_map(
    src: &PixelCloud,
    tgt: &PixelCloud,
    cost: &CostSpec,
) -> Result<PixelCloud> {
    let a = src.as_distribution();
    let b = tgt.as_distribution();
    let (_, plan) = crate::exact::solve_exact_assignment(&a, &b, cost)?;
    let n = src.n();
    let mut rgb = vec![0.0; n * 3];
    for i in 0..n {
        for j in 0..n {
            let p = plan.get(i, j);
            if p != 0.0 {
                for c in 0..3 {
                    rgb[i * 3 + c] += n as f64 * p * tgt.pixel(j)[c];
                }
            }
        }
    }
    for v in rgb.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    PixelCloud::new(rgb, src.width, src.height)
}
