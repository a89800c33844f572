use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Cholesky, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::beam::{
    elliptic_beam_transmissivity, turbulence_statistics, BeamSample, TurbulenceParams,
};
use crate::error::{domain, Error, Result};
use crate::format::fmt_sig;

const FORMAT_TAG: &str = "# fsqkd-ensemble v1";

/// Excess noise of a sub-channel as a function of its transmissivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcessNoise {
    /// The same excess noise on every sub-channel.
    Constant { xi: f64 },
    /// `xi(eta) = intercept + slope * eta`.
    Affine { intercept: f64, slope: f64 },
}

impl Default for ExcessNoise {
    fn default() -> Self {
        Self::Constant { xi: 0.01 }
    }
}

impl ExcessNoise {
    pub fn at(&self, eta: f64) -> f64 {
        match *self {
            Self::Constant { xi } => xi,
            Self::Affine { intercept, slope } => intercept + slope * eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { xi } => xi >= 0.0 && xi.is_finite(),
            Self::Affine { intercept, slope } => {
                intercept >= 0.0
                    && intercept + slope >= 0.0
                    && slope.is_finite()
                    && intercept.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!(
                "excess noise model {self:?} is negative on [0, 1]"
            )))
        }
    }

    fn encode(&self) -> String {
        match *self {
            Self::Constant { xi } => format!("constant:{xi:?}"),
            Self::Affine { intercept, slope } => format!("affine:{intercept:?}:{slope:?}"),
        }
    }

    fn decode(s: &str) -> Option<Self> {
        let mut it = s.split(':');
        let noise = match it.next()? {
            "constant" => Self::Constant {
                xi: it.next()?.parse().ok()?,
            },
            "affine" => Self::Affine {
                intercept: it.next()?.parse().ok()?,
                slope: it.next()?.parse().ok()?,
            },
            _ => return None,
        };
        it.next().is_none().then_some(noise)
    }
}

/// A finite sample of sub-channel transmissivities.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEnsemble {
    samples: Vec<f64>,
    seed: Option<u64>,
    params: Option<TurbulenceParams>,
    noise: ExcessNoise,
}

impl ChannelEnsemble {
    pub fn new(samples: Vec<f64>, noise: ExcessNoise) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain("ensemble must contain at least one transmissivity"));
        }
        if let Some(bad) = samples.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(domain(format!("transmissivity {bad} outside [0, 1]")));
        }
        noise.validate()?;
        Ok(Self {
            samples,
            seed: None,
            params: None,
            noise,
        })
    }

    /// Every sub-channel has the same transmissivity.
    pub fn constant(eta: f64, count: usize, noise: ExcessNoise) -> Result<Self> {
        Self::new(vec![eta; count.max(1)], noise)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn params(&self) -> Option<&TurbulenceParams> {
        self.params.as_ref()
    }

    pub fn noise(&self) -> ExcessNoise {
        self.noise
    }

    pub fn with_noise(mut self, noise: ExcessNoise) -> Result<Self> {
        noise.validate()?;
        self.noise = noise;
        Ok(self)
    }

    pub fn eta_max(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Normalized histogram over `[0, eta_max]` as `(bin centre, density)`.
    /// Display only; rate calculations use sample averages.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64)> {
        let bins = bins.max(1);
        let top = self.eta_max();
        let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &e in &self.samples {
            let j = ((e / width) as usize).min(bins - 1);
            counts[j] += 1;
        }
        let n = self.samples.len() as f64;
        counts
            .iter()
            .enumerate()
            .map(|(j, &c)| ((j as f64 + 0.5) * width, c as f64 / (n * width)))
            .collect()
    }

    /// Writes the versioned text format: comment header, then one
    /// transmissivity per line at 12 significant digits.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{FORMAT_TAG}")?;
        match self.seed {
            Some(s) => writeln!(w, "# seed={s}")?,
            None => writeln!(w, "# seed=none")?,
        }
        match &self.params {
            Some(p) => writeln!(
                w,
                "# params=wavelength={:?},beam_waist={:?},aperture_radius={:?},cn2={:?},distance={:?},attenuation_db={:?}",
                p.wavelength, p.beam_waist, p.aperture_radius, p.cn2, p.distance, p.attenuation_db
            )?,
            None => writeln!(w, "# params=none")?,
        }
        writeln!(w, "# noise={}", self.noise.encode())?;
        let mut buf = String::with_capacity(16 * self.samples.len());
        for &e in &self.samples {
            buf.push_str(&fmt_sig(e, 12));
            buf.push('\n');
        }
        w.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut seed = None;
        let mut params = None;
        let mut noise = ExcessNoise::default();
        let mut samples = Vec::new();
        let mut saw_tag = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let bad = |msg: String| Error::Parse { line: lineno, msg };
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                let rest = rest.trim();
                if t == FORMAT_TAG {
                    saw_tag = true;
                } else if let Some(v) = rest.strip_prefix("seed=") {
                    seed = match v {
                        "none" => None,
                        _ => Some(v.parse().map_err(|e| bad(format!("seed: {e}")))?),
                    };
                } else if let Some(v) = rest.strip_prefix("params=") {
                    params = match v {
                        "none" => None,
                        _ => Some(
                            parse_params(v)
                                .ok_or_else(|| bad(format!("malformed params {v:?}")))?,
                        ),
                    };
                } else if let Some(v) = rest.strip_prefix("noise=") {
                    noise = ExcessNoise::decode(v)
                        .ok_or_else(|| bad(format!("malformed noise {v:?}")))?;
                }
                continue;
            }
            let eta: f64 = t.parse().map_err(|e| bad(format!("{t:?}: {e}")))?;
            if !(0.0..=1.0).contains(&eta) {
                return Err(bad(format!("transmissivity {eta} outside [0, 1]")));
            }
            samples.push(eta);
        }
        if !saw_tag {
            return Err(Error::Parse {
                line: 1,
                msg: format!("missing header {FORMAT_TAG:?}"),
            });
        }
        let mut e = Self::new(samples, noise)?;
        e.seed = seed;
        e.params = params;
        Ok(e)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn parse_params(s: &str) -> Option<TurbulenceParams> {
    let mut p = TurbulenceParams::reference(1.0);
    let mut seen = 0u8;
    for kv in s.split(',') {
        let (k, v) = kv.split_once('=')?;
        let v: f64 = v.parse().ok()?;
        let (slot, bit) = match k {
            "wavelength" => (&mut p.wavelength, 0),
            "beam_waist" => (&mut p.beam_waist, 1),
            "aperture_radius" => (&mut p.aperture_radius, 2),
            "cn2" => (&mut p.cn2, 3),
            "distance" => (&mut p.distance, 4),
            "attenuation_db" => (&mut p.attenuation_db, 5),
            _ => return None,
        };
        *slot = v;
        seen |= 1 << bit;
    }
    (seen == 0b11_1111).then_some(p)
}

/// Draws `n` sub-channel transmissivities `eta_m * eta_a` from the
/// elliptic-beam model. Deterministic for a given seed.
pub fn sample_ensemble(
    p: &TurbulenceParams,
    n: usize,
    seed: u64,
    noise: ExcessNoise,
) -> Result<ChannelEnsemble> {
    if n == 0 {
        return Err(domain("sample count must be at least 1"));
    }
    let stats = turbulence_statistics(p)?;
    let chol = Cholesky::new(stats.covariance)
        .ok_or_else(|| domain("beam-parameter covariance is not positive definite"))?;
    let l = chol.l();
    let eta_m = p.extinction();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let v = stats.mean + l * z;
        let phi = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
        let s = BeamSample {
            x0: v[0],
            y0: v[1],
            theta1: v[2],
            theta2: v[3],
            phi,
        };
        samples.push(eta_m * elliptic_beam_transmissivity(&s, p));
    }
    let mut e = ChannelEnsemble::new(samples, noise)?;
    e.seed = Some(seed);
    e.params = Some(*p);
    Ok(e)
}

/// Human-readable one-line summary, used in run manifests.
pub fn describe(e: &ChannelEnsemble) -> String {
    let mut s = format!("n={}", e.len());
    if let Some(seed) = e.seed {
        let _ = write!(s, " seed={seed}");
    }
    if let Some(p) = e.params {
        let _ = write!(s, " L={}m", p.distance);
    }
    s
}
