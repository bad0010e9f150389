//! Key quality measurements: windowed error-rate series over the verified
//! key, stability statistics over chosen regions, and throughput
//! extrapolation from simulated slot counts to wall-clock rates.

use crate::bits::Bits;
use std::fmt::Write as _;
use std::ops::Range;
use thiserror::Error;

/// Window size for error-rate averaging: every 2048 bytes of verified key
/// contributes one point.
pub const DEFAULT_WINDOW_BYTES: usize = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("window size must be positive")]
    ZeroWindow,
    #[error("region {start}..{end} invalid over {len} windows")]
    BadRegion { start: usize, end: usize, len: usize },
    #[error("block of {block_bits} bits straddles the window boundary ({filled} of {window_bits} filled)")]
    Straddle { block_bits: usize, filled: usize, window_bits: usize },
    #[error("block reports {flips} corrections over {block_bits} bits")]
    FlipsExceedBits { flips: u64, block_bits: usize },
    #[error("cannot extrapolate over zero slots")]
    ZeroSlots,
    #[error("duty cycle {0} outside (0,1]")]
    BadDutyCycle(f64),
    #[error("pulse rate {0} must be positive and finite")]
    BadPulseRate(f64),
    #[error("report breaks {0}")]
    BadReport(&'static str),
}

/// Windowed error fraction against cumulative key size. Points cover full
/// windows only; whatever is left at the end is kept aside so it never
/// dilutes the statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct QberSeries {
    pub window_bytes: usize,
    /// `(cumulative_key_bytes, window_qber)` per completed window.
    pub points: Vec<(u64, f64)>,
    pub partial_bits: usize,
    pub partial_errors: u64,
}

impl QberSeries {
    pub fn empty(window_bytes: usize) -> QberSeries {
        QberSeries { window_bytes, points: Vec::new(), partial_bits: 0, partial_errors: 0 }
    }

    pub fn window_bits(&self) -> usize {
        self.window_bytes * 8
    }

    /// Error fraction of the unfinished tail, when any bits are in it.
    pub fn partial_fraction(&self) -> Option<f64> {
        (self.partial_bits > 0).then(|| self.partial_errors as f64 / self.partial_bits as f64)
    }

    pub fn check_invariants(&self) -> Result<(), MetricsError> {
        if self.window_bytes == 0 {
            return Err(MetricsError::ZeroWindow);
        }
        let mut prev = 0u64;
        for &(bytes, q) in &self.points {
            if bytes <= prev {
                return Err(MetricsError::BadReport("cumulative bytes not increasing"));
            }
            if !(0.0..=1.0).contains(&q) {
                return Err(MetricsError::BadReport("window qber outside [0,1]"));
            }
            prev = bytes;
        }
        Ok(())
    }

    /// `cumulative_bytes,window_qber` rows under a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cumulative_bytes,window_qber\n");
        for &(bytes, q) in &self.points {
            let _ = writeln!(out, "{},{:.6}", bytes, q);
        }
        out
    }
}

/// Per-window error fraction of a corrected-bit flag stream, one flag per
/// verified key bit.
pub fn windowed_qber(error_flags: &Bits, window_bytes: usize) -> Result<QberSeries, MetricsError> {
    if window_bytes == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    let window_bits = window_bytes * 8;
    let mut series = QberSeries::empty(window_bytes);
    let mut filled = 0usize;
    let mut errors = 0u64;
    for i in 0..error_flags.len() {
        filled += 1;
        errors += error_flags.get(i) as u64;
        if filled == window_bits {
            let cumulative = (series.points.len() as u64 + 1) * window_bytes as u64;
            series.points.push((cumulative, errors as f64 / window_bits as f64));
            filled = 0;
            errors = 0;
        }
    }
    series.partial_bits = filled;
    series.partial_errors = errors;
    Ok(series)
}

/// The same series rebuilt from per-block correction counts, for the
/// endpoint that knows how many bits each block needed flipped but not
/// which. Exact as long as block boundaries never cross a window boundary,
/// which holds for the fixed 4096-bit blocks under any multiple-of-512-byte
/// window.
pub fn series_from_block_counts(
    blocks: &[(usize, u64)],
    window_bytes: usize,
) -> Result<QberSeries, MetricsError> {
    if window_bytes == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    let window_bits = window_bytes * 8;
    let mut series = QberSeries::empty(window_bytes);
    let mut filled = 0usize;
    let mut errors = 0u64;
    for &(block_bits, flips) in blocks {
        if flips > block_bits as u64 {
            return Err(MetricsError::FlipsExceedBits { flips, block_bits });
        }
        if filled + block_bits > window_bits {
            return Err(MetricsError::Straddle { block_bits, filled, window_bits });
        }
        filled += block_bits;
        errors += flips;
        if filled == window_bits {
            let cumulative = (series.points.len() as u64 + 1) * window_bytes as u64;
            series.points.push((cumulative, errors as f64 / window_bits as f64));
            filled = 0;
            errors = 0;
        }
    }
    series.partial_bits = filled;
    series.partial_errors = errors;
    Ok(series)
}

/// Sample mean and sample standard deviation of the window values inside
/// `region` (indexes into `series.points`). One window gives deviation zero.
pub fn stability_stats(
    series: &QberSeries,
    region: Range<usize>,
) -> Result<(f64, f64), MetricsError> {
    if region.start >= region.end || region.end > series.points.len() {
        return Err(MetricsError::BadRegion {
            start: region.start,
            end: region.end,
            len: series.points.len(),
        });
    }
    let values = &series.points[region];
    let n = values.len() as f64;
    let mean = values.iter().map(|&(_, q)| q).sum::<f64>() / n;
    let stddev = if values.len() == 1 {
        0.0
    } else {
        let ss = values.iter().map(|&(_, q)| (q - mean) * (q - mean)).sum::<f64>();
        (ss / (n - 1.0)).sqrt()
    };
    Ok((mean, stddev))
}

/// Scales a simulated bit yield to bits per second of wall time. The duty
/// cycle discounts the fraction of time the line spends not transmitting
/// (storage and return passes of the two-way scheme).
pub fn extrapolate_rate(
    bits: u64,
    slots_simulated: u64,
    pulse_rate_hz: f64,
    duty_cycle: f64,
) -> Result<f64, MetricsError> {
    if slots_simulated == 0 {
        return Err(MetricsError::ZeroSlots);
    }
    if !(duty_cycle > 0.0 && duty_cycle <= 1.0) {
        return Err(MetricsError::BadDutyCycle(duty_cycle));
    }
    if !(pulse_rate_hz > 0.0 && pulse_rate_hz.is_finite()) {
        return Err(MetricsError::BadPulseRate(pulse_rate_hz));
    }
    Ok(bits as f64 / slots_simulated as f64 * pulse_rate_hz * duty_cycle)
}

/// End-of-run scoreboard for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionReport {
    pub sifted_bits: u64,
    pub verified_bits: u64,
    pub secret_bits: u64,
    pub mean_qber: f64,
    pub qber_stddev: f64,
    pub alarm_flag: bool,
    pub extrapolated_sifted_rate_bps: f64,
    pub extrapolated_secret_rate_bps: f64,
}

impl SessionReport {
    pub fn check_invariants(&self) -> Result<(), MetricsError> {
        if self.secret_bits > self.verified_bits {
            return Err(MetricsError::BadReport("secret bits exceed verified bits"));
        }
        if self.verified_bits > self.sifted_bits {
            return Err(MetricsError::BadReport("verified bits exceed sifted bits"));
        }
        if self.extrapolated_sifted_rate_bps < 0.0 || self.extrapolated_secret_rate_bps < 0.0 {
            return Err(MetricsError::BadReport("negative rate"));
        }
        if !(0.0..=1.0).contains(&self.mean_qber) || self.qber_stddev < 0.0 {
            return Err(MetricsError::BadReport("error statistics out of range"));
        }
        Ok(())
    }

    pub fn csv_header() -> &'static str {
        "sifted_bits,verified_bits,secret_bits,mean_qber,qber_stddev,alarm,sifted_rate_bps,secret_rate_bps"
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{},{:.3},{:.3}",
            self.sifted_bits,
            self.verified_bits,
            self.secret_bits,
            self.mean_qber,
            self.qber_stddev,
            self.alarm_flag as u8,
            self.extrapolated_sifted_rate_bps,
            self.extrapolated_secret_rate_bps
        )
    }
}
