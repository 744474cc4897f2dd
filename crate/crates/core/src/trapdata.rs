//! Trap position traces: synthesis, Welch power spectral density and
//! Lorentzian peak fits.
//!
//! Trace files are UTF-8 text, one sample per line. Lines starting with `#`
//! are comments; a comment of the form `# key: value` is kept as metadata.
//! Two layouts are accepted:
//!
//! * two columns `time_s, signal` separated by a comma, tab or spaces, with
//!   uniform time steps (the sample rate is 1/Δt);
//! * one column `signal`, with the rate given by a `# sample_rate: <Hz>`
//!   header line before the first sample.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Relative tolerance on the spacing of the time column.
const TIME_STEP_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::Domain(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            samples,
            sample_rate,
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    /// Single-column text with a sample-rate header.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# sample_rate: {}", self.sample_rate).unwrap();
        for (k, v) in &self.metadata {
            if k != "sample_rate" {
                writeln!(out, "# {k}: {v}").unwrap();
            }
        }
        for x in &self.samples {
            writeln!(out, "{x:e}").unwrap();
        }
        out
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("not a number: {:?}", tok.trim()),
    })
}

fn split_columns(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses either documented trace layout.
pub fn parse_trace(text: &str) -> Result<TimeSeries> {
    let mut metadata = BTreeMap::new();
    let mut header_rate: Option<f64> = None;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut columns: Option<usize> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once(':') {
                let (k, v) = (k.trim().to_string(), v.trim().to_string());
                if k == "sample_rate" {
                    header_rate = Some(parse_number(&v, line_no)?);
                }
                metadata.insert(k, v);
            }
            continue;
        }
        let cols = split_columns(line);
        match columns {
            None => {
                if cols.len() > 2 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("expected 1 or 2 columns, found {}", cols.len()),
                    });
                }
                columns = Some(cols.len());
            }
            Some(n) if n != cols.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {n} columns, found {}", cols.len()),
                });
            }
            _ => {}
        }
        if cols.len() == 2 {
            times.push((parse_number(cols[0], line_no)?, line_no));
            values.push(parse_number(cols[1], line_no)?);
        } else {
            values.push(parse_number(cols[0], line_no)?);
        }
    }

    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rate = if columns == Some(2) {
        if times.len() < 2 {
            return Err(Error::Parse {
                line: times[0].1,
                msg: "two-column traces need at least two samples".into(),
            });
        }
        let dt = times[1].0 - times[0].0;
        if !(dt > 0.0) {
            return Err(Error::Parse {
                line: times[1].1,
                msg: "time column must increase".into(),
            });
        }
        for w in times.windows(2) {
            let step = w[1].0 - w[0].0;
            if (step - dt).abs() > TIME_STEP_TOLERANCE * dt {
                return Err(Error::Parse {
                    line: w[1].1,
                    msg: format!("non-uniform time step {step:e} (expected {dt:e})"),
                });
            }
        }
        1.0 / dt
    } else {
        header_rate.ok_or(Error::Parse {
            line: 1,
            msg: "single-column traces need a '# sample_rate: <Hz>' header".into(),
        })?
    };
    let mut ts = TimeSeries::new(values, rate)?;
    ts.metadata = metadata;
    Ok(ts)
}

pub fn read_trace(path: &Path) -> Result<TimeSeries> {
    parse_trace(&std::fs::read_to_string(path)?)
}

/// Sum of independent thermally driven damped oscillators.
///
/// `freqs` are centre frequencies and `damping` the linewidths (FWHM), both
/// in Hz. Each oscillator starts in its stationary state with
/// var(x) = temperature_scale / ω² and is advanced with the exact
/// discretization of its Langevin equation.
pub fn synthesize_trace(
    freqs: &[f64],
    damping: &[f64],
    temperature_scale: f64,
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<TimeSeries> {
    if freqs.len() != damping.len() {
        return Err(Error::Domain(format!(
            "{} frequencies but {} damping rates",
            freqs.len(),
            damping.len()
        )));
    }
    if freqs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(sample_rate > 0.0) || !(duration > 0.0) || !(temperature_scale >= 0.0) {
        return Err(Error::Domain(
            "sample rate and duration must be positive, temperature non-negative".into(),
        ));
    }
    for &f in freqs {
        if !(f > 0.0) || f >= sample_rate / 2.0 {
            return Err(Error::Sampling(format!(
                "frequency {f} Hz violates 0 < f < sample_rate/2 = {} Hz",
                sample_rate / 2.0
            )));
        }
    }
    let n = (duration * sample_rate).round() as usize;
    if n < 2 {
        return Err(Error::Domain("duration shorter than two samples".into()));
    }
    let dt = 1.0 / sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0; n];

    for (&f, &fwhm) in freqs.iter().zip(damping) {
        let w = TAU * f;
        let g = TAU * fwhm;
        if !(g >= 0.0) || g >= 2.0 * w {
            return Err(Error::Domain(format!(
                "damping {fwhm} Hz must be non-negative and underdamped for {f} Hz"
            )));
        }
        let wd = (w * w - g * g / 4.0).sqrt();
        let decay = (-g * dt / 2.0).exp();
        let (s, co) = (wd * dt).sin_cos();
        let phi = [
            [decay * (co + g / (2.0 * wd) * s), decay * s / wd],
            [-decay * w * w * s / wd, decay * (co - g / (2.0 * wd) * s)],
        ];
        let p = [temperature_scale / (w * w), temperature_scale];
        // Q = P − Φ P Φᵀ
        let q00 = p[0] - (phi[0][0] * phi[0][0] * p[0] + phi[0][1] * phi[0][1] * p[1]);
        let q01 = -(phi[0][0] * phi[1][0] * p[0] + phi[0][1] * phi[1][1] * p[1]);
        let q11 = p[1] - (phi[1][0] * phi[1][0] * p[0] + phi[1][1] * phi[1][1] * p[1]);
        let l00 = q00.max(0.0).sqrt();
        let l10 = if l00 > 0.0 { q01 / l00 } else { 0.0 };
        let l11 = (q11 - l10 * l10).max(0.0).sqrt();

        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut x = p[0].sqrt() * normal();
        let mut v = p[1].sqrt() * normal();
        for out in samples.iter_mut() {
            *out += x;
            let (z0, z1) = (normal(), normal());
            let nx = phi[0][0] * x + phi[0][1] * v + l00 * z0;
            let nv = phi[1][0] * x + phi[1][1] * v + l10 * z0 + l11 * z1;
            x = nx;
            v = nv;
        }
    }
    let mut ts = TimeSeries::new(samples, sample_rate)?;
    ts.metadata.insert("seed".into(), seed.to_string());
    Ok(ts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PSDRecord {
    pub freqs: Vec<f64>,
    /// One-sided power spectral density, signal units² per Hz.
    pub power: Vec<f64>,
    pub window: String,
    pub segments: usize,
}

impl PSDRecord {
    pub fn resolution(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// ∫ P df, to compare with the signal variance.
    pub fn integrated_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution()
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate: mean-removed, Hann-windowed segments of
/// `segment_length` samples overlapping by `overlap` samples.
pub fn psd(ts: &TimeSeries, segment_length: usize, overlap: usize) -> Result<PSDRecord> {
    if segment_length < 2 || segment_length > ts.len() {
        return Err(Error::Segmentation(format!(
            "segment length {segment_length} must lie in [2, {}]",
            ts.len()
        )));
    }
    if overlap >= segment_length {
        return Err(Error::Segmentation(format!(
            "overlap {overlap} must be smaller than the segment length {segment_length}"
        )));
    }
    let step = segment_length - overlap;
    let segments = (ts.len() - segment_length) / step + 1;
    let window = hann(segment_length);
    let norm: f64 = window.iter().map(|w| w * w).sum::<f64>() * ts.sample_rate;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_length);
    let bins = segment_length / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_length];

    for s in 0..segments {
        let seg = &ts.samples[s * step..s * step + segment_length];
        let mean = seg.iter().sum::<f64>() / segment_length as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p += buf[k].norm_sqr();
        }
    }
    let nyquist_bin = segment_length.is_multiple_of(2);
    for (k, p) in power.iter_mut().enumerate() {
        let one_sided = if k == 0 || (nyquist_bin && k == bins - 1) { 1.0 } else { 2.0 };
        *p *= one_sided / (norm * segments as f64);
    }
    let df = ts.sample_rate / segment_length as f64;
    Ok(PSDRecord {
        freqs: (0..bins).map(|k| k as f64 * df).collect(),
        power,
        window: "hann".into(),
        segments,
    })
}

/// Lorentzian fit A γ²/((f − f₀)² + γ²) + B around one peak; `width` is
/// the FWHM 2γ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakFit {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
    pub baseline: f64,
    pub converged: bool,
}

fn lorentz(p: &[f64; 4], f: f64) -> f64 {
    let g = p[2];
    p[0] * g * g / ((f - p[1]).powi(2) + g * g) + p[3]
}

fn lorentz_grad(p: &[f64; 4], f: f64) -> [f64; 4] {
    let (a, f0, g) = (p[0], p[1], p[2]);
    let d = f - f0;
    let den = d * d + g * g;
    let shape = g * g / den;
    [
        shape,
        a * g * g * 2.0 * d / (den * den),
        a * 2.0 * g * d * d / (den * den),
        1.0,
    ]
}

fn solve4(mut m: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        let pivot = m[col];
        for r in col + 1..4 {
            let f = m[r][col] / pivot[col];
            for (x, p) in m[r][col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

/// Levenberg–Marquardt on the points of one window; frequencies are
/// shifted and scaled to the window for conditioning.
fn fit_lorentzian(f: &[f64], y: &[f64], guess: [f64; 4]) -> ([f64; 4], bool) {
    let f_ref = guess[1];
    let scale = guess[2].max(1e-12);
    let y_scale = guess[0].abs().max(1e-300);
    let xs: Vec<f64> = f.iter().map(|v| (v - f_ref) / scale).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / y_scale).collect();
    let mut p = [guess[0] / y_scale, 0.0, 1.0, guess[3] / y_scale];
    let cost = |p: &[f64; 4]| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| (lorentz(p, x) - y).powi(2))
            .sum()
    };
    let mut c = cost(&p);
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..200 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&x, &y) in xs.iter().zip(&ys) {
            let g = lorentz_grad(&p, x);
            let r = y - lorentz(&p, x);
            for i in 0..4 {
                jtr[i] += g[i] * r;
                for j in 0..4 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let mut improved = false;
        while mu < 1e12 {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += mu * jtj[i][i].max(1e-12);
            }
            if let Some(step) = solve4(m, jtr) {
                let mut trial = p;
                for i in 0..4 {
                    trial[i] += step[i];
                }
                trial[2] = trial[2].abs();
                let ct = cost(&trial);
                if ct.is_finite() && ct <= c {
                    let rel = (c - ct) / c.max(1e-300);
                    p = trial;
                    c = ct;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    if rel < 1e-12 {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            converged = true;
        }
        if converged {
            break;
        }
    }
    let out = [
        p[0] * y_scale,
        f_ref + p[1] * scale,
        p[2] * scale,
        p[3] * y_scale,
    ];
    let ok = converged && out.iter().all(|v| v.is_finite()) && out[2] > 0.0 && out[0] > 0.0;
    (out, ok)
}

/// Index range around `k` where the spectrum stays above `frac` of its value.
fn extent(power: &[f64], k: usize, frac: f64) -> (usize, usize) {
    let level = power[k] * frac;
    let mut lo = k;
    while lo > 0 && power[lo - 1] > level {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < power.len() && power[hi + 1] > level {
        hi += 1;
    }
    (lo, hi)
}

/// Fits the `n_peaks` largest, mutually separated local maxima. Results are
/// sorted by centre frequency; a peak whose fit fails keeps its window
/// estimate and reports `converged = false`.
pub fn fit_peaks(rec: &PSDRecord, n_peaks: usize) -> Result<Vec<PeakFit>> {
    if n_peaks == 0 {
        return Err(Error::Domain("n_peaks must be at least 1".into()));
    }
    let p = &rec.power;
    let n = p.len();
    if n < 3 {
        return Err(Error::Segmentation("spectrum too short for peak search".into()));
    }
    let mut maxima: Vec<usize> = (1..n - 1)
        .filter(|&k| p[k] > p[k - 1] && p[k] >= p[k + 1])
        .collect();
    maxima.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));

    let mut picked: Vec<(usize, usize, usize)> = Vec::new();
    for k in maxima {
        if picked.len() == n_peaks {
            break;
        }
        if picked.iter().any(|&(_, lo, hi)| k >= lo && k <= hi) {
            continue;
        }
        let (lo, hi) = extent(p, k, 0.05);
        let half = extent(p, k, 0.5);
        let margin = 3 * (half.1 - half.0 + 1).max(2);
        picked.push((k, lo.saturating_sub(margin), (hi + margin).min(n - 1)));
    }
    if picked.len() < n_peaks {
        return Err(Error::Segmentation(format!(
            "found {} separated maxima, {} requested",
            picked.len(),
            n_peaks
        )));
    }
    picked.sort_by_key(|&(k, _, _)| k);

    let mut fits = Vec::with_capacity(picked.len());
    for (i, &(k, _, _)) in picked.iter().enumerate() {
        let (hlo, hhi) = extent(p, k, 0.5);
        let hw = (hhi - hlo + 1).max(2);
        let mut lo = k.saturating_sub(5 * hw).max(1);
        let mut hi = (k + 5 * hw).min(n - 1);
        // clip to midpoints between neighbouring peaks
        if i > 0 {
            lo = lo.max((picked[i - 1].0 + k) / 2 + 1);
        }
        if i + 1 < picked.len() {
            hi = hi.min((picked[i + 1].0 + k) / 2);
        }
        let f = &rec.freqs[lo..=hi];
        let y = &p[lo..=hi];
        let df = rec.resolution();
        let baseline = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let guess = [
            p[k] - baseline,
            rec.freqs[k],
            (0.5 * (hhi - hlo + 1) as f64 * df).max(df / 2.0),
            baseline,
        ];
        let (best, ok) = fit_lorentzian(f, y, guess);
        let inside = best[1] >= f[0] && best[1] <= f[f.len() - 1];
        let (center, g, amp, base, conv) = if ok && inside {
            (best[1], best[2], best[0], best[3], true)
        } else {
            (guess[1], guess[2], guess[0], guess[3], false)
        };
        fits.push(PeakFit {
            center,
            width: 2.0 * g,
            amplitude: amp,
            baseline: base,
            converged: conv,
        });
    }
    Ok(fits)
}

/// PSD table `freq_hz, psd`.
pub fn format_psd(rec: &PSDRecord) -> String {
    let mut out = String::from("freq_hz,psd\n");
    for (f, p) in rec.freqs.iter().zip(&rec.power) {
        writeln!(out, "{f:.6},{p:.9e}").unwrap();
    }
    out
}

/// Peak table `center_hz, width_hz, amplitude, converged`.
pub fn format_peaks(peaks: &[PeakFit]) -> String {
    let mut out = String::from("center_hz,width_hz,amplitude,converged\n");
    for p in peaks {
        writeln!(
            out,
            "{:.6},{:.6},{:.9e},{}",
            p.center, p.width, p.amplitude, p.converged
        )
        .unwrap();
    }
    out
}

/// Damped-oscillator position PSD (one-sided, per Hz) for a stationary
/// trace from [`synthesize_trace`]; used as a reference in tests.
pub fn oscillator_psd(f: f64, f0: f64, fwhm: f64, temperature_scale: f64) -> f64 {
    let w = TAU * f;
    let w0 = TAU * f0;
    let g = TAU * fwhm;
    // S(ω) = 2ΓT / ((ω0² − ω²)² + Γ²ω²), normalized so that ∫ S dω/2π = var;
    // per Hz that is S(2πf) on (−∞, ∞), doubled for the one-sided density
    let s = 2.0 * g * temperature_scale / ((w0 * w0 - w * w).powi(2) + g * g * w * w);
    2.0 * s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_zero_temperature() {
        let a = synthesize_trace(&[1e3], &[10.0], 1.0, 1e5, 0.01, 4).unwrap();
        let b = synthesize_trace(&[1e3], &[10.0], 1.0, 1e5, 0.01, 4).unwrap();
        assert_eq!(a, b);
        let c = synthesize_trace(&[1e3], &[10.0], 1.0, 1e5, 0.01, 5).unwrap();
        assert_ne!(a.samples, c.samples);
        let z = synthesize_trace(&[1e3], &[10.0], 0.0, 1e5, 0.01, 4).unwrap();
        assert!(z.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sampling_theorem_guard() {
        assert!(matches!(
            synthesize_trace(&[6e4], &[10.0], 1.0, 1e5, 0.01, 0),
            Err(Error::Sampling(_))
        ));
        assert!(synthesize_trace(&[1e3, 2e3], &[10.0], 1.0, 1e5, 0.01, 0).is_err());
    }

    #[test]
    fn stationary_variance() {
        let f = 2e3;
        let ts = synthesize_trace(&[f], &[50.0], 3.0, 1e5, 2.0, 1).unwrap();
        let want = 3.0 / (TAU * f).powi(2);
        assert!((ts.variance() / want - 1.0).abs() < 0.1);
    }

    #[test]
    fn single_peak_round_trip() {
        let ts = synthesize_trace(&[1e5], &[500.0], 1.0, 1e6, 0.2, 2).unwrap();
        let rec = psd(&ts, 8192, 4096).unwrap();
        let k = (0..rec.power.len())
            .max_by(|&a, &b| rec.power[a].total_cmp(&rec.power[b]))
            .unwrap();
        assert!((rec.freqs[k] - 1e5).abs() <= 2.0 * rec.resolution());
        let fit = fit_peaks(&rec, 1).unwrap();
        assert!(fit[0].converged);
        assert!((fit[0].center / 1e5 - 1.0).abs() < 0.01);
        assert!((fit[0].width / 500.0 - 1.0).abs() < 0.5);
    }

    #[test]
    fn parseval() {
        let ts = synthesize_trace(&[3e3, 7e3], &[60.0, 80.0], 1.0, 5e4, 4.0, 3).unwrap();
        let rec = psd(&ts, 4096, 2048).unwrap();
        assert!((rec.integrated_power() / ts.variance() - 1.0).abs() < 0.05);
        assert!(rec.power.iter().all(|&p| p >= 0.0));
        assert!(*rec.freqs.last().unwrap() <= ts.sample_rate / 2.0);
    }

    #[test]
    fn sinusoid_has_single_peak() {
        let fs = 1024.0;
        let samples: Vec<f64> = (0..8192).map(|k| (TAU * 100.0 * k as f64 / fs).sin()).collect();
        let rec = psd(&TimeSeries::new(samples, fs).unwrap(), 1024, 512).unwrap();
        let k = (0..rec.power.len())
            .max_by(|&a, &b| rec.power[a].total_cmp(&rec.power[b]))
            .unwrap();
        assert_eq!(rec.freqs[k], 100.0);
        let far: f64 = rec
            .power
            .iter()
            .zip(&rec.freqs)
            .filter(|(_, f)| (*f - 100.0).abs() > 5.0)
            .map(|(p, _)| *p)
            .fold(0.0, f64::max);
        assert!(far < 1e-6 * rec.power[k]);
        assert!((rec.integrated_power() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn white_noise_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<f64> = (0..1 << 16).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fs = 1000.0;
        let rec = psd(&TimeSeries::new(samples, fs).unwrap(), 256, 128).unwrap();
        // unit variance spreads over fs/2: density 2/fs
        let level = 2.0 / fs;
        // Hann at 50% overlap keeps about 1/1.06 of the independent segments
        let dof_sigma = (1.06 / rec.segments as f64).sqrt();
        for &p in &rec.power[2..rec.power.len() - 2] {
            assert!((p / level - 1.0).abs() < 5.0 * dof_sigma);
        }
        let mean: f64 =
            rec.power[2..rec.power.len() - 2].iter().sum::<f64>() / (rec.power.len() - 4) as f64;
        assert!((mean / level - 1.0).abs() < 3.0 * dof_sigma);
    }

    #[test]
    fn segmentation_errors() {
        let ts = TimeSeries::new(vec![0.0; 100], 10.0).unwrap();
        assert!(matches!(psd(&ts, 200, 0), Err(Error::Segmentation(_))));
        assert!(matches!(psd(&ts, 50, 50), Err(Error::Segmentation(_))));
        assert!(psd(&ts, 50, 25).is_ok());
    }

    #[test]
    fn close_radial_peaks_resolve() {
        let ts = synthesize_trace(&[6e4, 6.5e4], &[300.0, 300.0], 1.0, 5e5, 0.3, 9).unwrap();
        let rec = psd(&ts, 16384, 8192).unwrap();
        let fits = fit_peaks(&rec, 2).unwrap();
        assert!((fits[0].center / 6e4 - 1.0).abs() < 0.01);
        assert!((fits[1].center / 6.5e4 - 1.0).abs() < 0.01);
    }

    #[test]
    fn model_spectrum_matches_estimate() {
        let (f0, fwhm) = (5e3, 100.0);
        let ts = synthesize_trace(&[f0], &[fwhm], 1.0, 5e4, 8.0, 12).unwrap();
        let rec = psd(&ts, 8192, 4096).unwrap();
        let k = (f0 / rec.resolution()).round() as usize;
        let want = oscillator_psd(rec.freqs[k], f0, fwhm, 1.0);
        assert!((rec.power[k] / want - 1.0).abs() < 0.2);
    }

    #[test]
    fn parse_single_column() {
        let text = "# sample_rate: 1000\n# source: test\n1.0\n2.5\n-3e-2\n";
        let ts = parse_trace(text).unwrap();
        assert_eq!(ts.sample_rate, 1000.0);
        assert_eq!(ts.samples, vec![1.0, 2.5, -0.03]);
        assert_eq!(ts.metadata["source"], "test");
        assert_eq!(parse_trace(&ts.to_text()).unwrap().samples, ts.samples);
    }

    #[test]
    fn parse_two_columns() {
        let text = "0.000, 1\n0.001, 2\n0.002, 3\n";
        let ts = parse_trace(text).unwrap();
        assert!((ts.sample_rate - 1000.0).abs() < 1e-9);
        let tabs = "0\t1\n0.5\t2\n1.0\t4\n";
        assert_eq!(parse_trace(tabs).unwrap().samples, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn parse_errors_name_lines() {
        let err = parse_trace("# sample_rate: 10\n1.0\nabc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = parse_trace("0, 1\n1, 2\n3, 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = parse_trace("0, 1\n1, 2, 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(matches!(parse_trace(""), Err(Error::EmptyInput)));
        assert!(matches!(parse_trace("# only a comment\n\n"), Err(Error::EmptyInput)));
        assert!(matches!(parse_trace("1.0\n2.0\n"), Err(Error::Parse { .. })));
    }
}
