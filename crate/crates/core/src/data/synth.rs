//! Deterministic synthetic signatures.
//!
//! A subject is a chain of strokes, each a sum of sinusoids in x and y along
//! with a horizontal advance. Genuine samples jitter the subject's parameters
//! by a small relative scale and warp the time axis. Each forgery perturbs the
//! same parameters by a larger scale, so forgeries are smooth imitations
//! rather than noisy copies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Label, Point, RawSignature};
use crate::error::{Error, Result};
use crate::rng::stream_seed;

const HARMONICS: usize = 3;
/// Coordinate scale, roughly tablet units.
const SCALE: f64 = 100.0;
const SAMPLE_INTERVAL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub stroke_count: (usize, usize),
    pub amplitude: Range,
    pub frequency: Range,
    pub advance: Range,
    pub base_length: (usize, usize),
    pub sigma_genuine: Range,
    pub sigma_forged: Range,
    /// Maximum |alpha| of the warp `s + alpha * s * (1 - s)`.
    pub time_warp: f64,
    /// Maximum relative deviation of a sample's length from `base_length`.
    pub length_jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            stroke_count: (1, 3),
            amplitude: Range::new(0.2, 1.0),
            frequency: Range::new(0.5, 3.0),
            advance: Range::new(0.5, 2.0),
            base_length: (150, 250),
            sigma_genuine: Range::new(0.03, 0.06),
            sigma_forged: Range::new(0.35, 0.5),
            time_warp: 0.05,
            length_jitter: 0.15,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("amplitude", self.amplitude),
            ("frequency", self.frequency),
            ("advance", self.advance),
            ("sigma_genuine", self.sigma_genuine),
            ("sigma_forged", self.sigma_forged),
        ];
        for (name, r) in ranges {
            if !r.valid() {
                return Err(Error::Config(format!("{name} range is empty or inverted")));
            }
        }
        if self.stroke_count.0 < 1 || self.stroke_count.0 > self.stroke_count.1 {
            return Err(Error::Config("stroke_count range is empty".into()));
        }
        if self.base_length.0 < 8 || self.base_length.0 > self.base_length.1 {
            return Err(Error::Config("base_length range is empty or too short".into()));
        }
        if self.sigma_genuine.lo <= 0.0 {
            return Err(Error::Config("sigma_genuine must be positive".into()));
        }
        if self.sigma_forged.lo <= self.sigma_genuine.hi {
            return Err(Error::Config(
                "sigma_forged range must lie strictly above sigma_genuine range".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.time_warp) {
            return Err(Error::Config("time_warp must be in [0, 1)".into()));
        }
        if !(0.0..=0.2).contains(&self.length_jitter) {
            return Err(Error::Config("length_jitter must be in [0, 0.2]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeParams {
    pub x_amp: [f64; HARMONICS],
    pub x_freq: [f64; HARMONICS],
    pub x_phase: [f64; HARMONICS],
    pub y_amp: [f64; HARMONICS],
    pub y_freq: [f64; HARMONICS],
    pub y_phase: [f64; HARMONICS],
    pub advance: f64,
}

impl StrokeParams {
    fn random(cfg: &GeneratorConfig, rng: &mut impl Rng) -> Self {
        let mut draw = |r: Range| -> [f64; HARMONICS] { std::array::from_fn(|_| r.sample(rng)) };
        let phase = Range::new(0.0, std::f64::consts::TAU);
        StrokeParams {
            x_amp: draw(cfg.amplitude),
            x_freq: draw(cfg.frequency),
            x_phase: draw(phase),
            y_amp: draw(cfg.amplitude),
            y_freq: draw(cfg.frequency),
            y_phase: draw(phase),
            advance: cfg.advance.sample(rng),
        }
    }

    /// Relative perturbation of every parameter at scale `sigma`.
    fn perturbed(&self, sigma: f64, rng: &mut impl Rng) -> Self {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let mut mul = |v: [f64; HARMONICS], k: f64| v.map(|a| a * (1.0 + k * sigma * n()));
        let x_amp = mul(self.x_amp, 1.0);
        let y_amp = mul(self.y_amp, 1.0);
        let x_freq = mul(self.x_freq, 0.2);
        let y_freq = mul(self.y_freq, 0.2);
        let mut add = |v: [f64; HARMONICS]| v.map(|p| p + sigma * std::f64::consts::FRAC_PI_3 * n());
        let x_phase = add(self.x_phase);
        let y_phase = add(self.y_phase);
        let advance = self.advance * (1.0 + sigma * n());
        StrokeParams {
            x_amp,
            x_freq,
            x_phase,
            y_amp,
            y_freq,
            y_phase,
            advance,
        }
    }

    /// Position at local parameter `u` in [0, 1], relative to the stroke start.
    fn eval(&self, u: f64) -> (f64, f64) {
        let tau = std::f64::consts::TAU;
        let mut x = self.advance * u;
        let mut y = 0.0;
        for k in 0..HARMONICS {
            x += self.x_amp[k] * ((tau * self.x_freq[k] * u + self.x_phase[k]).sin() - self.x_phase[k].sin());
            y += self.y_amp[k] * ((tau * self.y_freq[k] * u + self.y_phase[k]).sin() - self.y_phase[k].sin());
        }
        (x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectModel {
    pub seed: u64,
    pub stroke_count: usize,
    pub strokes: Vec<StrokeParams>,
    pub genuine_jitter: f64,
    pub forgery_perturb: f64,
    pub base_length: usize,
    pub time_warp: f64,
    pub length_jitter: f64,
}

pub fn synth_subject(seed: u64, cfg: &GeneratorConfig) -> Result<SubjectModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5u64));
    let stroke_count = rng.random_range(cfg.stroke_count.0..=cfg.stroke_count.1);
    let strokes: Vec<StrokeParams> = (0..stroke_count)
        .map(|_| StrokeParams::random(cfg, &mut rng))
        .collect();
    let genuine_jitter = cfg.sigma_genuine.sample(&mut rng);
    let forgery_perturb = cfg.sigma_forged.sample(&mut rng);
    let base_length = rng.random_range(cfg.base_length.0..=cfg.base_length.1);
    Ok(SubjectModel {
        seed,
        stroke_count,
        strokes,
        genuine_jitter,
        forgery_perturb,
        base_length,
        time_warp: cfg.time_warp,
        length_jitter: cfg.length_jitter,
    })
}

/// Evaluates a stroke chain at `n` points with global parameter warped by
/// `alpha`. Strokes are separated by a small pen-up jump.
fn render(strokes: &[StrokeParams], n: usize, alpha: f64) -> Vec<(f64, f64)> {
    let count = strokes.len();
    let mut origins = Vec::with_capacity(count);
    let (mut ox, mut oy) = (0.0, 0.0);
    for s in strokes {
        origins.push((ox, oy));
        let (ex, ey) = s.eval(1.0);
        ox += ex + 0.3;
        oy += ey * 0.5;
    }
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            let w = (s + alpha * s * (1.0 - s)).clamp(0.0, 1.0);
            let pos = w * count as f64;
            let k = (pos.floor() as usize).min(count - 1);
            let u = pos - k as f64;
            let (x, y) = strokes[k].eval(u);
            let (bx, by) = origins[k];
            (SCALE * (bx + x), SCALE * (by + y))
        })
        .collect()
}

/// The subject's undistorted trajectory at `base_length` points.
pub fn base_trajectory(model: &SubjectModel) -> Vec<(f64, f64)> {
    render(&model.strokes, model.base_length, 0.0)
}

pub fn synth_sample(model: &SubjectModel, kind: Label, sample_seed: u64) -> RawSignature {
    let stream = match kind {
        Label::Forged => 0xF0,
        _ => 0x60,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(stream_seed(model.seed, stream), sample_seed));
    let sigma = match kind {
        Label::Forged => model.forgery_perturb,
        _ => model.genuine_jitter,
    };
    let strokes: Vec<StrokeParams> = model.strokes.iter().map(|s| s.perturbed(sigma, &mut rng)).collect();
    let stretch = if model.length_jitter > 0.0 {
        rng.random_range(-model.length_jitter..=model.length_jitter)
    } else {
        0.0
    };
    let n = ((model.base_length as f64 * (1.0 + stretch)).round() as usize).max(2);
    let alpha = if model.time_warp > 0.0 {
        rng.random_range(-model.time_warp..=model.time_warp)
    } else {
        0.0
    };
    let points = render(&strokes, n, alpha)
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| Point::with_time(x, y, i as f64 * SAMPLE_INTERVAL))
        .collect();
    let subject = format!("s{:04}", model.seed);
    let label = if kind == Label::Forged { Label::Forged } else { Label::Genuine };
    RawSignature::new(subject, label, points).expect("synthetic signatures are valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resample(points: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let pos = i as f64 * (points.len() - 1) as f64 / (n - 1) as f64;
                let k = (pos.floor() as usize).min(points.len() - 2);
                let f = pos - k as f64;
                let (a, b) = (points[k], points[k + 1]);
                (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
            })
            .collect()
    }

    fn xy(sig: &RawSignature) -> Vec<(f64, f64)> {
        sig.points().iter().map(|p| (p.x, p.y)).collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn mean_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn subject_is_deterministic() {
        let cfg = GeneratorConfig::default();
        assert_eq!(synth_subject(7, &cfg).unwrap(), synth_subject(7, &cfg).unwrap());
    }

    #[test]
    fn distinct_seeds_differ() {
        let cfg = GeneratorConfig::default();
        let a = synth_subject(7, &cfg).unwrap();
        let b = synth_subject(8, &cfg).unwrap();
        assert_ne!(a.strokes[0].x_amp, b.strokes[0].x_amp);
    }

    #[test]
    fn overlapping_sigma_ranges_rejected() {
        let cfg = GeneratorConfig {
            sigma_genuine: Range::new(0.01, 0.5),
            sigma_forged: Range::new(0.1, 0.2),
            ..GeneratorConfig::default()
        };
        assert!(matches!(synth_subject(7, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn inverted_range_rejected() {
        let cfg = GeneratorConfig {
            amplitude: Range::new(1.0, 0.5),
            ..GeneratorConfig::default()
        };
        assert!(matches!(synth_subject(1, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sample_is_deterministic() {
        let m = synth_subject(3, &GeneratorConfig::default()).unwrap();
        assert_eq!(synth_sample(&m, Label::Genuine, 1), synth_sample(&m, Label::Genuine, 1));
    }

    #[test]
    fn genuine_samples_share_shape() {
        let cfg = GeneratorConfig::default();
        for seed in 0..40 {
            let m = synth_subject(seed, &cfg).unwrap();
            let a = synth_sample(&m, Label::Genuine, 1);
            let b = synth_sample(&m, Label::Genuine, 2);
            assert_ne!(a.points(), b.points());
            let ra = resample(&xy(&a), 100);
            let rb = resample(&xy(&b), 100);
            let flat = |r: &[(f64, f64)]| -> Vec<f64> {
                r.iter().map(|p| p.0).chain(r.iter().map(|p| p.1)).collect()
            };
            let c = correlation(&flat(&ra), &flat(&rb));
            assert!(c > 0.9, "seed {seed}: correlation {c}");
        }
    }

    #[test]
    fn lengths_within_twenty_percent() {
        let cfg = GeneratorConfig::default();
        let m = synth_subject(11, &cfg).unwrap();
        for s in 0..50 {
            for kind in [Label::Genuine, Label::Forged] {
                let n = synth_sample(&m, kind, s).len() as f64;
                let rel = (n - m.base_length as f64).abs() / m.base_length as f64;
                assert!(rel <= 0.2, "length {n} vs base {}", m.base_length);
            }
        }
    }

    #[test]
    fn forgeries_sit_farther_from_base() {
        let cfg = GeneratorConfig::default();
        let m = synth_subject(21, &cfg).unwrap();
        let base = resample(&base_trajectory(&m), 100);
        let avg = |kind| {
            (0..100)
                .map(|s| mean_distance(&resample(&xy(&synth_sample(&m, kind, s)), 100), &base))
                .sum::<f64>()
                / 100.0
        };
        let g = avg(Label::Genuine);
        let f = avg(Label::Forged);
        assert!(f > g, "forged {f} <= genuine {g}");
    }
}
