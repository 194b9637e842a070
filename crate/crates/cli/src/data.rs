//! CIFAR binary ingestion and the bundled synthetic dataset generator.

use anyhow::{bail, Context, Result};
use dham_net::train::LabeledDataset;
use dham_net::util::rng_from;
use rand::Rng;
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cifar10" => Ok(Self::C10),
            "cifar100" => Ok(Self::C100),
            other => bail!("unknown dataset format `{other}`"),
        }
    }

    fn record_len(&self) -> usize {
        match self {
            Self::C10 => 3073,  // label + 3×32×32
            Self::C100 => 3074, // coarse label + fine label + pixels
        }
    }

    fn classes(&self) -> usize {
        match self {
            Self::C10 => 10,
            Self::C100 => 100,
        }
    }
}

const PIXELS: usize = 3 * 32 * 32;

/// Load the standard CIFAR binary layout from a file, or from every `.bin`
/// in a directory (sorted by name).
pub fn load_cifar(path: &Path, variant: CifarVariant) -> Result<LabeledDataset> {
    let mut bytes = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .with_context(|| format!("cannot read dataset directory {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no .bin files in {}", path.display());
        }
        for f in files {
            bytes.extend(fs::read(&f).with_context(|| format!("cannot read {}", f.display()))?);
        }
    } else {
        bytes = fs::read(path)
            .with_context(|| format!("cannot read dataset file {}", path.display()))?;
    }

    let rec = variant.record_len();
    if bytes.is_empty() || bytes.len() % rec != 0 {
        bail!(
            "{}: truncated dataset: {} bytes is not a multiple of the {}-byte record",
            path.display(),
            bytes.len(),
            rec
        );
    }
    let n = bytes.len() / rec;
    let mut images = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let record = &bytes[i * rec..(i + 1) * rec];
        let label = match variant {
            CifarVariant::C10 => record[0],
            CifarVariant::C100 => record[1], // fine label
        };
        if (label as usize) >= variant.classes() {
            bail!(
                "{}: record {i}: label {label} out of range for {} classes",
                path.display(),
                variant.classes()
            );
        }
        labels.push(label as u16);
        images.extend_from_slice(&record[rec - PIXELS..]);
    }
    Ok(LabeledDataset::new(
        images,
        labels,
        (3, 32, 32),
        variant.classes(),
    )?)
}

/// Knobs for the synthetic class-blob generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
    /// Contrast of class prototypes around mid-gray, in pixel units.
    pub amplitude: f64,
    /// Per-pixel Gaussian noise sigma, in pixel units.
    pub noise: f64,
    /// 0 = all classes share one pattern, 1 = fully distinct prototypes.
    pub class_sep: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            train_per_class: 500,
            val_per_class: 100,
            seed: 0,
            amplitude: 55.0,
            noise: 48.0,
            class_sep: 0.45,
        }
    }
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    // Box-Muller
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// Low-resolution smooth patterns upsampled to 32×32; class prototypes mix a
/// shared pattern with a class-specific one so small `class_sep` makes
/// fine-grained discrimination genuinely hard.
fn prototypes(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    const GRID: usize = 8;
    const UP: usize = 4; // 8×4 = 32
    let mut shared = vec![0.0f64; 3 * GRID * GRID];
    let mut rng = rng_from(spec.seed, &[0x70726f746f, u64::MAX]);
    for v in &mut shared {
        *v = gaussian(&mut rng);
    }
    (0..spec.classes)
        .map(|class| {
            let mut rng = rng_from(spec.seed, &[0x70726f746f, class as u64]);
            let own: Vec<f64> = (0..3 * GRID * GRID).map(|_| gaussian(&mut rng)).collect();
            let mut full = vec![0.0f64; PIXELS];
            for ch in 0..3 {
                for y in 0..32 {
                    for x in 0..32 {
                        let low = (ch * GRID + y / UP) * GRID + x / UP;
                        let v = (1.0 - spec.class_sep) * shared[low] + spec.class_sep * own[low];
                        full[(ch * 32 + y) * 32 + x] = v;
                    }
                }
            }
            // normalize prototype to unit RMS so amplitude means the same
            // thing regardless of the mixing factor
            let rms = (full.iter().map(|v| v * v).sum::<f64>() / full.len() as f64).sqrt();
            for v in &mut full {
                *v /= rms.max(1e-9);
            }
            full
        })
        .collect()
}

fn render_split(
    spec: &SyntheticSpec,
    protos: &[Vec<f64>],
    per_class: usize,
    split_tag: u64,
) -> Vec<u8> {
    let mut records = Vec::with_capacity(per_class * spec.classes * 3074);
    for i in 0..per_class {
        for (class, proto) in protos.iter().enumerate() {
            let mut rng = rng_from(
                spec.seed,
                &[0x73616d706c65, split_tag, class as u64, i as u64],
            );
            // per-sample contrast jitter keeps single-threshold shortcuts out
            let scale = spec.amplitude * (0.75 + 0.5 * rng.random::<f64>());
            records.push(class as u8);
            for &pv in proto.iter() {
                let v = 128.0 + scale * pv + spec.noise * gaussian(&mut rng);
                records.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    records
}

/// Write train.bin and val.bin in the CIFAR-10 binary layout.
pub fn generate_synthetic(spec: &SyntheticSpec, outdir: &Path) -> Result<()> {
    if spec.classes < 2 || spec.classes > 10 {
        bail!("synthetic generator writes the 10-class binary format; classes must be 2..=10");
    }
    fs::create_dir_all(outdir).with_context(|| format!("cannot create {}", outdir.display()))?;
    let protos = prototypes(spec);
    for (name, per_class, tag) in [
        ("train.bin", spec.train_per_class, 0u64),
        ("val.bin", spec.val_per_class, 1u64),
    ] {
        if per_class == 0 {
            continue;
        }
        let bytes = render_split(spec, &protos, per_class, tag);
        let path = outdir.join(name);
        let mut f =
            fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        f.write_all(&bytes)?;
    }
    Ok(())
}
