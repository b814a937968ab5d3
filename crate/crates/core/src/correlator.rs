//! Second-order cross-correlation of two click channels.
//!
//! Delays `t_b - t_a` are histogrammed with a sorted-merge sliding window, so
//! the cost is linear in the number of tags plus the number of pairs inside
//! the window. Bins are centered on `k * bin_width` for
//! `|k| <= half_window / bin_width`, which makes the layout mirror-symmetric
//! about zero delay (a delay of exactly half a bin rounds away from zero).
//!
//! The normalized value of bin `k` is
//! `g2[k] = C[k] / (N_a * N_b * dt * T)` with `N_a`, `N_b` the channel rates
//! over the overlap `T` of the two acquisition spans.

use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timetag::{ChannelRates, TimeTagStream};

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("channel {0} has no clicks in the overlap interval")]
    EmptyChannel(u16),
    #[error("the two channels do not overlap in time")]
    NoOverlap,
    #[error("half window of {window} ticks exceeds the {duration} tick acquisition overlap")]
    WindowTooLarge { window: u64, duration: u64 },
    #[error("invalid correlation config: {0}")]
    InvalidConfig(String),
    #[error("signal fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("histogram csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Bin width and half window, both in ticks of the stream resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    pub bin_width: u64,
    pub half_window: u64,
    pub channel_a: u16,
    pub channel_b: u16,
    /// Worker threads; `None` uses [`crate::default_threads`].
    #[serde(default)]
    pub threads: Option<usize>,
}

pub const DEFAULT_BIN_PS: u64 = 40;
pub const DEFAULT_WINDOW_NS: f64 = 500.0;

impl CorrelationConfig {
    pub fn new(
        bin_width: u64,
        half_window: u64,
        channel_a: u16,
        channel_b: u16,
    ) -> Result<Self, CorrelationError> {
        let cfg = Self {
            bin_width,
            half_window,
            channel_a,
            channel_b,
            threads: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Converts a bin width in ps and a half window in ns to ticks.
    pub fn from_physical(
        resolution_ps: u64,
        bin_ps: u64,
        window_ns: f64,
        channel_a: u16,
        channel_b: u16,
    ) -> Result<Self, CorrelationError> {
        if resolution_ps == 0 || bin_ps % resolution_ps != 0 {
            return Err(CorrelationError::InvalidConfig(format!(
                "bin width {bin_ps} ps is not a multiple of the {resolution_ps} ps resolution"
            )));
        }
        let window_ps = (window_ns * 1e3).round();
        if !(window_ps >= 0.0) || (window_ps - window_ns * 1e3).abs() > 1e-6 {
            return Err(CorrelationError::InvalidConfig(format!(
                "window {window_ns} ns is not a whole number of ps"
            )));
        }
        let window_ps = window_ps as u64;
        if window_ps % resolution_ps != 0 {
            return Err(CorrelationError::InvalidConfig(format!(
                "window {window_ps} ps is not a multiple of the resolution"
            )));
        }
        Self::new(
            bin_ps / resolution_ps,
            window_ps / resolution_ps,
            channel_a,
            channel_b,
        )
    }

    pub fn validate(&self) -> Result<(), CorrelationError> {
        if self.bin_width == 0 {
            return Err(CorrelationError::InvalidConfig("bin width must be >= 1 tick".into()));
        }
        if self.half_window == 0 || self.half_window % self.bin_width != 0 {
            return Err(CorrelationError::InvalidConfig(format!(
                "half window {} must be a positive multiple of the bin width {}",
                self.half_window, self.bin_width
            )));
        }
        Ok(())
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads.max(1));
        self
    }

    /// Bins on each side of zero delay.
    pub fn bins_per_side(&self) -> usize {
        (self.half_window / self.bin_width) as usize
    }

    pub fn bin_count(&self) -> usize {
        2 * self.bins_per_side() + 1
    }

    pub fn is_auto(&self) -> bool {
        self.channel_a == self.channel_b
    }
}

/// Binned coincidences and their normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub resolution_ps: u64,
    pub bin_width_ticks: u64,
    /// Bin centers in ticks, ascending and symmetric about zero.
    pub tau_ticks: Vec<i64>,
    pub raw_counts: Vec<u64>,
    pub g2: Vec<f64>,
    pub g2_err: Vec<f64>,
    /// Expected coincidences per bin for uncorrelated clicks (g2 = 1).
    pub normalization: f64,
    pub rates: Option<ChannelRates>,
    pub duration_s: f64,
    /// Signal fraction used by [`background_correct`], if applied.
    pub signal_fraction: Option<f64>,
}

impl CorrelationHistogram {
    pub fn len(&self) -> usize {
        self.tau_ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_ticks.is_empty()
    }

    pub fn bin_width_ps(&self) -> f64 {
        (self.bin_width_ticks * self.resolution_ps) as f64
    }

    pub fn tau_ps(&self) -> Vec<f64> {
        self.tau_ticks
            .iter()
            .map(|&t| t as f64 * self.resolution_ps as f64)
            .collect()
    }

    pub fn zero_bin(&self) -> usize {
        self.len() / 2
    }

    /// Half window, in ps, measured to the outermost bin center.
    pub fn half_window_ps(&self) -> f64 {
        self.tau_ticks.last().map_or(0.0, |&t| t as f64) * self.resolution_ps as f64
    }

    /// Writes the `tau_ps,counts,g2,g2_err` CSV form.
    pub fn write_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "tau_ps,counts,g2,g2_err")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{},{},{:e},{:e}",
                self.tau_ticks[k] * self.resolution_ps as i64,
                self.raw_counts[k],
                self.g2[k],
                self.g2_err[k]
            )?;
        }
        w.flush()
    }

    /// Reads the CSV form back. Rates and duration are not part of the CSV;
    /// the normalization is recovered from the counts-to-g2 ratio.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, CorrelationError> {
        let mut tau = Vec::new();
        let mut counts = Vec::new();
        let mut g2 = Vec::new();
        let mut g2_err = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("tau")) {
                continue;
            }
            let err = |message: String| CorrelationError::Csv {
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 columns, found {}", cols.len())));
            }
            tau.push(cols[0].parse::<i64>().map_err(|e| err(format!("tau_ps: {e}")))?);
            counts.push(cols[1].parse::<u64>().map_err(|e| err(format!("counts: {e}")))?);
            g2.push(cols[2].parse::<f64>().map_err(|e| err(format!("g2: {e}")))?);
            g2_err.push(cols[3].parse::<f64>().map_err(|e| err(format!("g2_err: {e}")))?);
        }
        if tau.len() < 3 {
            return Err(CorrelationError::Csv {
                line: 0,
                message: "need at least three bins".into(),
            });
        }
        let width = tau[1] - tau[0];
        if width <= 0 || tau.windows(2).any(|w| w[1] - w[0] != width) {
            return Err(CorrelationError::Csv {
                line: 0,
                message: "bin centers must be uniformly spaced and ascending".into(),
            });
        }
        let total_counts: u64 = counts.iter().sum();
        let total_g2: f64 = g2.iter().sum();
        let normalization = if total_counts > 0 && total_g2 > 0.0 {
            total_counts as f64 / total_g2
        } else {
            f64::NAN
        };
        Ok(Self {
            resolution_ps: 1,
            bin_width_ticks: width as u64,
            tau_ticks: tau,
            raw_counts: counts,
            g2,
            g2_err,
            normalization,
            rates: None,
            duration_s: f64::NAN,
            signal_fraction: None,
        })
    }
}

/// Correlates two channels of one stream.
pub fn correlate(
    stream: &TimeTagStream,
    cfg: &CorrelationConfig,
) -> Result<CorrelationHistogram, CorrelationError> {
    cfg.validate()?;
    for ch in [cfg.channel_a, cfg.channel_b] {
        if ch >= stream.channel_count() {
            return Err(CorrelationError::EmptyChannel(ch));
        }
    }
    let a = stream.channel_timestamps(cfg.channel_a);
    if cfg.is_auto() {
        return correlate_timestamps(&a, &a, stream.resolution_ps(), cfg);
    }
    let b = stream.channel_timestamps(cfg.channel_b);
    correlate_timestamps(&a, &b, stream.resolution_ps(), cfg)
}

/// Correlates two sorted timestamp slices. When the config is in
/// auto-correlation mode, `a` and `b` must be the same slice and only the
/// zero-lag self pairs are excluded.
pub fn correlate_timestamps(
    a: &[u64],
    b: &[u64],
    resolution_ps: u64,
    cfg: &CorrelationConfig,
) -> Result<CorrelationHistogram, CorrelationError> {
    cfg.validate()?;
    let (Some(&a_first), Some(&b_first)) = (a.first(), b.first()) else {
        let ch = if a.is_empty() { cfg.channel_a } else { cfg.channel_b };
        return Err(CorrelationError::EmptyChannel(ch));
    };
    let start = a_first.max(b_first);
    let end = (*a.last().unwrap()).min(*b.last().unwrap());
    if end <= start {
        return Err(CorrelationError::NoOverlap);
    }
    let duration = end - start;
    if cfg.half_window > duration {
        return Err(CorrelationError::WindowTooLarge {
            window: cfg.half_window,
            duration,
        });
    }
    let a = restrict(a, start, end);
    let b = restrict(b, start, end);
    if a.is_empty() {
        return Err(CorrelationError::EmptyChannel(cfg.channel_a));
    }
    if b.is_empty() {
        return Err(CorrelationError::EmptyChannel(cfg.channel_b));
    }

    let counts = histogram_pairs(a, b, cfg);

    let duration_s = duration as f64 * resolution_ps as f64 * 1e-12;
    let bin_s = cfg.bin_width as f64 * resolution_ps as f64 * 1e-12;
    let rates = if cfg.is_auto() {
        ChannelRates::from_counts([(cfg.channel_a, a.len() as u64)], duration_s)
    } else {
        ChannelRates::from_counts(
            [
                (cfg.channel_a, a.len() as u64),
                (cfg.channel_b, b.len() as u64),
            ],
            duration_s,
        )
    };
    let rate_a = a.len() as f64 / duration_s;
    let rate_b = b.len() as f64 / duration_s;
    let normalization = rate_a * rate_b * bin_s * duration_s;

    let m = cfg.bins_per_side() as i64;
    let tau_ticks = (-m..=m).map(|k| k * cfg.bin_width as i64).collect();
    let g2 = counts.iter().map(|&c| c as f64 / normalization).collect();
    let g2_err = counts
        .iter()
        .map(|&c| (c as f64).sqrt().max(1.0) / normalization)
        .collect();

    Ok(CorrelationHistogram {
        resolution_ps,
        bin_width_ticks: cfg.bin_width,
        tau_ticks,
        raw_counts: counts,
        g2,
        g2_err,
        normalization,
        rates: Some(rates),
        duration_s,
        signal_fraction: None,
    })
}

fn restrict(ts: &[u64], start: u64, end: u64) -> &[u64] {
    let lo = ts.partition_point(|&t| t < start);
    let hi = ts.partition_point(|&t| t <= end);
    &ts[lo..hi]
}

/// Sums per-thread partial histograms; integer addition keeps the result
/// independent of the partition count.
fn histogram_pairs(a: &[u64], b: &[u64], cfg: &CorrelationConfig) -> Vec<u64> {
    let threads = cfg
        .threads
        .unwrap_or_else(crate::default_threads)
        .clamp(1, 64)
        .min(a.len().div_ceil(1 << 16).max(1));
    if threads == 1 {
        let mut hist = vec![0u64; cfg.bin_count()];
        accumulate(a, 0, b, cfg, &mut hist);
        return hist;
    }
    let chunk = a.len().div_ceil(threads);
    let partials: Vec<Vec<u64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = a
            .chunks(chunk)
            .enumerate()
            .map(|(i, part)| {
                scope.spawn(move || {
                    let mut hist = vec![0u64; cfg.bin_count()];
                    accumulate(part, i * chunk, b, cfg, &mut hist);
                    hist
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("correlator worker panicked"))
            .collect()
    });
    let mut hist = vec![0u64; cfg.bin_count()];
    for p in partials {
        for (h, c) in hist.iter_mut().zip(p) {
            *h += c;
        }
    }
    hist
}

/// Adds every pair `(a[i], b[j])` with `|b[j] - a[i]|` inside the outermost
/// bin edge. `a_offset` is the index of `a[0]` in the full channel, used to
/// skip self pairs in auto mode.
fn accumulate(a: &[u64], a_offset: usize, b: &[u64], cfg: &CorrelationConfig, hist: &mut [u64]) {
    let width = cfg.bin_width;
    let m = cfg.bins_per_side() as u64;
    // 2|d| < (2m + 1) * width  <=>  |round_half_away(d / width)| <= m
    let reach2 = (2 * m + 1) * width;
    let center = m as usize;
    let auto = cfg.is_auto();
    let Some(&first) = a.first() else { return };
    let mut lo = b.partition_point(|&t| t < first && 2 * (first - t) >= reach2);
    for (i, &ta) in a.iter().enumerate() {
        while lo < b.len() && b[lo] < ta && 2 * (ta - b[lo]) >= reach2 {
            lo += 1;
        }
        let self_index = a_offset + i;
        let mut j = lo;
        while j < b.len() {
            let tb = b[j];
            if tb >= ta {
                let d2 = 2 * (tb - ta);
                if d2 >= reach2 {
                    break;
                }
                if !(auto && j == self_index) {
                    hist[center + ((d2 + width) / (2 * width)) as usize] += 1;
                }
            } else {
                let d2 = 2 * (ta - tb);
                hist[center - ((d2 + width) / (2 * width)) as usize] += 1;
            }
            j += 1;
        }
    }
}

/// Sums histograms of independent acquisitions with the same binning.
/// Raw counts and accidental-coincidence normalizations add; rates become
/// duration-weighted averages.
pub fn merge_histograms(parts: &[CorrelationHistogram]) -> Result<CorrelationHistogram, CorrelationError> {
    let Some(first) = parts.first() else {
        return Err(CorrelationError::InvalidConfig("no histograms to merge".into()));
    };
    let mut out = first.clone();
    for h in &parts[1..] {
        if h.resolution_ps != out.resolution_ps || h.bin_width_ticks != out.bin_width_ticks || h.tau_ticks != out.tau_ticks {
            return Err(CorrelationError::InvalidConfig("histograms differ in binning".into()));
        }
        if h.signal_fraction.is_some() || out.signal_fraction.is_some() {
            return Err(CorrelationError::InvalidConfig("cannot merge background-corrected histograms".into()));
        }
        for (a, b) in out.raw_counts.iter_mut().zip(&h.raw_counts) {
            *a += b;
        }
        out.normalization += h.normalization;
        out.rates = match (&out.rates, &h.rates) {
            (Some(a), Some(b)) => {
                let counts: Vec<(u16, u64)> = a
                    .counts
                    .iter()
                    .map(|&(c, n)| (c, n + b.count(c).unwrap_or(0)))
                    .collect();
                Some(ChannelRates::from_counts(counts, a.duration_s + b.duration_s))
            }
            _ => None,
        };
        out.duration_s += h.duration_s;
    }
    out.g2 = out.raw_counts.iter().map(|&c| c as f64 / out.normalization).collect();
    out.g2_err = out
        .raw_counts
        .iter()
        .map(|&c| (c as f64).sqrt().max(1.0) / out.normalization)
        .collect();
    Ok(out)
}

/// Removes uncorrelated background from a measured histogram.
///
/// With a signal fraction `rho = S / (S + B)` the measured curve is
/// `1 + rho^2 (g2_src - 1)`; the inverse is applied bin by bin and errors are
/// scaled by `1 / rho^2`. Corrected values may dip below zero through noise.
pub fn background_correct(
    h: &CorrelationHistogram,
    signal_fraction: f64,
) -> Result<CorrelationHistogram, CorrelationError> {
    if !(signal_fraction > 0.0 && signal_fraction <= 1.0) {
        return Err(CorrelationError::InvalidFraction(signal_fraction));
    }
    let rho2 = signal_fraction * signal_fraction;
    let mut out = h.clone();
    for (g, e) in out.g2.iter_mut().zip(out.g2_err.iter_mut()) {
        *g = 1.0 + (*g - 1.0) / rho2;
        *e /= rho2;
    }
    out.signal_fraction = Some(signal_fraction);
    Ok(out)
}

/// Mean g2 over bins with `|tau| >= min_abs_tau_ps`, with its Poisson
/// standard error. Returns `None` when no bin qualifies.
pub fn plateau(h: &CorrelationHistogram, min_abs_tau_ps: f64) -> Option<(f64, f64)> {
    let tau = h.tau_ps();
    let mut n = 0usize;
    let mut counts = 0u64;
    let mut sum = 0.0;
    for (k, t) in tau.iter().enumerate() {
        if t.abs() >= min_abs_tau_ps {
            n += 1;
            counts += h.raw_counts[k];
            sum += h.g2[k];
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let scale = if h.normalization.is_finite() {
        h.normalization
    } else {
        counts as f64 / sum
    };
    let se = (counts as f64).sqrt().max(1.0) / (n as f64 * scale);
    Some((mean, se))
}
