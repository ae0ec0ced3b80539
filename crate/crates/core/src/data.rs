//! Synthetic multi-domain descriptor sets and their on-disk formats.
//!
//! Every local descriptor is `domain_shift + N(0, σ²)`. In a fake sample a
//! fixed-size minority of locals additionally carries a cue: the shared cue
//! vector or, for half of the samples, the domain's own attack vector.
//!
//! # `VVSAFEAT` layout (little-endian)
//!
//! ```text
//! magic    8 bytes "VVSAFEAT"
//! count    u32  number of samples
//! locals   u32  N
//! d_raw    u32
//! count × { class u8 (0 real, 1 fake), domain u8 (1-based), N·d_raw × f32 row-major }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::io::{check_magic, read_exact_or, read_u32, read_u8, to_u32, write_u32, FormatError};
use crate::label::ClassLabel;
use crate::numkernel::{derived_rng, Matrix};
use crate::scalar::dot;

pub const FEATURE_MAGIC: &[u8; 8] = b"VVSAFEAT";

/// One feature-set sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// N × d_raw
    pub raw_features: Matrix<f64>,
    pub class_label: ClassLabel,
    /// One-based domain label.
    pub domain: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub shift: Vec<f64>,
    pub specific_attack: Vec<f64>,
    pub noise_sigma: f64,
}

/// Fully resolved generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub locals: usize,
    pub d_raw: usize,
    /// Fraction of a fake sample's locals that carry a cue.
    pub rho_cue: f64,
    pub shared_cue: Vec<f64>,
    pub domains: Vec<DomainSpec>,
    pub samples_per_domain_per_class: usize,
    pub seed: u64,
}

/// Scalar knobs from which a [`SyntheticSpec`] is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub domains: usize,
    pub locals: usize,
    pub d_raw: usize,
    pub rho_cue: f64,
    pub noise_sigma: f64,
    pub samples_per_domain_per_class: usize,
    /// Norm of the shared cue vector.
    pub cue_scale: f64,
    /// Norm of each domain shift.
    pub shift_scale: f64,
    /// Norm of each domain-specific attack vector.
    pub specific_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            domains: 4,
            locals: 16,
            d_raw: 8,
            rho_cue: 0.2,
            noise_sigma: 0.5,
            samples_per_domain_per_class: 200,
            cue_scale: 1.5,
            shift_scale: 2.0,
            specific_scale: 1.5,
            seed: 0,
        }
    }
}

fn random_direction(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

impl SyntheticSpec {
    /// Draws cue, shift and attack vectors. Domain shifts are orthogonal to
    /// the shared cue.
    pub fn from_params(p: &SyntheticParams) -> Result<Self> {
        if p.d_raw < 2 {
            return Err(Error::InvalidArgument("d_raw must be at least 2".into()));
        }
        let mut rng = derived_rng(p.seed, 0);
        let cue_dir = random_direction(p.d_raw, &mut rng);
        let shared_cue: Vec<f64> = cue_dir.iter().map(|x| x * p.cue_scale).collect();
        let domains = (0..p.domains)
            .map(|_| {
                let mut shift = random_direction(p.d_raw, &mut rng);
                let along = dot(&shift, &cue_dir);
                shift.iter_mut().zip(&cue_dir).for_each(|(s, c)| *s -= along * c);
                let n = dot(&shift, &shift).sqrt();
                shift.iter_mut().for_each(|s| *s *= p.shift_scale / n);
                let specific_attack = random_direction(p.d_raw, &mut rng)
                    .into_iter()
                    .map(|x| x * p.specific_scale)
                    .collect();
                DomainSpec {
                    shift,
                    specific_attack,
                    noise_sigma: p.noise_sigma,
                }
            })
            .collect();
        let spec = Self {
            locals: p.locals,
            d_raw: p.d_raw,
            rho_cue: p.rho_cue,
            shared_cue,
            domains,
            samples_per_domain_per_class: p.samples_per_domain_per_class,
            seed: p.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.domains.is_empty() || self.domains.len() > u8::MAX as usize {
            return fail(format!("domain count must be in [1, 255], got {}", self.domains.len()));
        }
        if self.locals == 0 || self.d_raw == 0 {
            return fail("locals and d_raw must be positive".into());
        }
        if !(self.rho_cue > 0.0 && self.rho_cue <= 1.0) {
            return fail(format!("rho_cue must be in (0, 1], got {}", self.rho_cue));
        }
        let nonzero = |v: &[f64]| v.len() == self.d_raw && v.iter().all(|x| x.is_finite()) && v.iter().any(|&x| x != 0.0);
        if !nonzero(&self.shared_cue) {
            return fail("shared cue vector must be non-zero with d_raw entries".into());
        }
        for (s, d) in self.domains.iter().enumerate() {
            if !(d.noise_sigma > 0.0) || !d.noise_sigma.is_finite() {
                return fail(format!("domain {} noise_sigma must be positive", s + 1));
            }
            if !nonzero(&d.specific_attack) || d.shift.len() != self.d_raw {
                return fail(format!("domain {} vectors must have d_raw entries and a non-zero attack", s + 1));
            }
        }
        Ok(())
    }

    /// Number of cue-carrying locals in a fake sample, ⌈ρ·N⌉.
    pub fn cue_locals(&self) -> usize {
        ((self.rho_cue * self.locals as f64).ceil() as usize).clamp(1, self.locals)
    }
}

/// Generates every domain's samples, reals first. Domain `s` draws from its
/// own random stream, so domains are independent of each other.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Vec<Sample>>> {
    spec.validate()?;
    let cue_count = spec.cue_locals();
    spec.domains
        .iter()
        .enumerate()
        .map(|(s, dom)| {
            let mut rng = derived_rng(spec.seed, 100 + s as u64);
            let noise = Normal::new(0.0, dom.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let mut samples = Vec::with_capacity(2 * spec.samples_per_domain_per_class);
            for class in [ClassLabel::Real, ClassLabel::Fake] {
                for _ in 0..spec.samples_per_domain_per_class {
                    let mut m = Matrix::from_fn(spec.locals, spec.d_raw, |_, j| dom.shift[j] + noise.sample(&mut rng));
                    if class == ClassLabel::Fake {
                        let cue = if rng.random_bool(0.5) {
                            &spec.shared_cue
                        } else {
                            &dom.specific_attack
                        };
                        for i in index::sample(&mut rng, spec.locals, cue_count) {
                            m.row_mut(i).iter_mut().zip(cue).for_each(|(x, c)| *x += c);
                        }
                    }
                    samples.push(Sample {
                        raw_features: m,
                        class_label: class,
                        domain: (s + 1) as u8,
                    });
                }
            }
            Ok(samples)
        })
        .collect()
}

/// Writes samples in the `VVSAFEAT` format.
pub fn write_samples<W: Write>(w: &mut W, samples: &[Sample]) -> Result<()> {
    let (n, d) = samples.first().map_or((0, 0), |s| s.raw_features.shape());
    if samples.iter().any(|s| s.raw_features.shape() != (n, d)) {
        return Err(Error::InvalidArgument("samples must share one N × d_raw shape".into()));
    }
    w.write_all(FEATURE_MAGIC)?;
    write_u32(w, to_u32(samples.len(), "sample count")?)?;
    write_u32(w, to_u32(n, "locals")?)?;
    write_u32(w, to_u32(d, "d_raw")?)?;
    for s in samples {
        w.write_all(&[s.class_label.index() as u8, s.domain])?;
        for &v in s.raw_features.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Upper bound on the payload a header may announce (4 GiB).
const MAX_PAYLOAD_BYTES: u64 = 1 << 32;

pub fn read_samples<R: Read>(r: &mut R) -> Result<Vec<Sample>> {
    check_magic(r, FEATURE_MAGIC)?;
    let count = read_u32(r, "sample count")? as u64;
    let n = read_u32(r, "locals")? as u64;
    let d = read_u32(r, "d_raw")? as u64;
    let per_sample = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(2))
        .ok_or_else(|| FormatError::DimensionOverflow(format!("N = {n}, d_raw = {d}")))?;
    if per_sample.checked_mul(count).is_none_or(|b| b > MAX_PAYLOAD_BYTES) {
        return Err(FormatError::DimensionOverflow(format!("{count} samples of {n} x {d} floats")).into());
    }
    let (n, d) = (n as usize, d as usize);
    let mut samples = Vec::with_capacity(count as usize);
    let mut buf = vec![0u8; n * d * 4];
    for _ in 0..count {
        let class = read_u8(r, "class label")?;
        let class_label = ClassLabel::from_index(class as usize)
            .ok_or_else(|| FormatError::Malformed(format!("class label {class}")))?;
        let domain = read_u8(r, "domain label")?;
        if domain == 0 {
            return Err(FormatError::Malformed("domain labels are one-based".into()).into());
        }
        read_exact_or(r, &mut buf, "features")?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        samples.push(Sample {
            raw_features: Matrix::new(n, d, data)?,
            class_label,
            domain,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(FormatError::Malformed("trailing bytes after last sample".into()).into());
    }
    Ok(samples)
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    read_samples(&mut BufReader::new(File::open(path)?))
}

/// One CSV row per local descriptor:
/// `sample_id,domain,class,local_index,f0..f{d-1}`.
pub fn write_csv<W: Write>(w: &mut W, samples: &[Sample], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let d = samples.first().map_or(0, |s| s.raw_features.cols());
    let mut header = String::from("sample_id,domain,class,local_index");
    for j in 0..d {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}")?;
    for (id, s) in samples.iter().enumerate() {
        for (i, row) in s.raw_features.row_iter().enumerate() {
            write!(w, "{id},{},{},{i}", s.domain, s.class_label.index())?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
