//! Per-stream SINRs, achievable sum rates over an SNR sweep, and the
//! least-squares DoF slope of rate versus `log2 P`.
//!
//! Streams carry equal power, fixed by the precoder normalization and
//! rescaled by `P / scheme.power`. Noise is unit variance per complex
//! dimension: `|u|^2` for CSS, `|u|^2 / 2` for the real ACS receive
//! dimensions, where each real stream contributes `log2(1 + SINR) / 2`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{ImacInstance, Mode};
use crate::dof_theory::{self, Rational};
use crate::error::{Error, Result};
use crate::scheme::{LinearScheme, ReceivedImages};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSinr {
    pub cell: usize,
    pub user: usize,
    pub stream: usize,
    pub signal: f64,
    pub interference: f64,
    pub noise: f64,
    pub sinr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    #[serde(rename = "P_dB")]
    pub p_db: f64,
    /// Bits per complex channel use.
    pub sum_rate: f64,
    /// `per_user_rate[c][k]`
    pub per_user_rate: [Vec<f64>; 2],
    pub per_stream_sinr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub window: (f64, f64),
    pub slope: f64,
    /// `"num/den"`
    pub target: String,
    pub target_value: f64,
    pub relative_error: f64,
    pub points_used: usize,
}

pub fn db_to_linear(p_db: f64) -> f64 {
    10f64.powf(p_db / 10.0)
}

/// `log2 P` for `P` given in dB.
pub fn db_to_log2(p_db: f64) -> f64 {
    p_db / 10.0 * std::f64::consts::LOG2_10
}

/// Gains `|u_{c,k,m}^H H v_{c',k',m'}|^2` at the scheme's design power,
/// indexed by flat stream number.
struct GainTable {
    /// `(cell, user, stream)` per flat index.
    streams: Vec<(usize, usize, usize)>,
    /// Row: receiving stream, column: transmitting stream.
    gains: Vec<Vec<f64>>,
    noise: Vec<f64>,
}

impl GainTable {
    fn new(scheme: &LinearScheme, inst: &ImacInstance) -> Result<Self> {
        let images = ReceivedImages::new(scheme, inst)?;
        let k = inst.users();
        let streams: Vec<(usize, usize, usize)> = (0..2)
            .flat_map(|c| {
                (0..k).flat_map(move |u| (0..scheme.streams[c][u]).map(move |m| (c, u, m)))
            })
            .collect();
        let noise_per_dim = match scheme.mode {
            Mode::Css => 1.0,
            Mode::Acs => 0.5,
        };
        let mut gains = Vec::with_capacity(streams.len());
        let mut noise = Vec::with_capacity(streams.len());
        for &(c, u, m) in &streams {
            let comb = scheme.combiners[c][u].column(m);
            noise.push(noise_per_dim * comb.norm_squared());
            let mut row = Vec::with_capacity(streams.len());
            for &(tc, tu, tm) in &streams {
                let img = images
                    .get(c, tc, tu)
                    .expect("active transmitter has an image");
                row.push(comb.dotc(&img.column(tm)).norm_sqr());
            }
            gains.push(row);
        }
        Ok(Self {
            streams,
            gains,
            noise,
        })
    }

    fn sinrs(&self, scale: f64) -> Vec<StreamSinr> {
        self.streams
            .iter()
            .enumerate()
            .map(|(i, &(cell, user, stream))| {
                let signal = self.gains[i][i] * scale;
                let interference: f64 = self.gains[i]
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, g)| g * scale)
                    .sum();
                let noise = self.noise[i];
                StreamSinr {
                    cell,
                    user,
                    stream,
                    signal,
                    interference,
                    noise,
                    sinr: signal / (interference + noise),
                }
            })
            .collect()
    }
}

fn power_scale(scheme: &LinearScheme, power: f64) -> f64 {
    power / scheme.power
}

/// Per-stream SINRs at transmit power `power` (linear).
pub fn stream_sinr(
    scheme: &LinearScheme,
    inst: &ImacInstance,
    power: f64,
) -> Result<Vec<StreamSinr>> {
    if !(power >= 0.0 && power.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "power must be finite and >= 0, got {power}"
        )));
    }
    Ok(GainTable::new(scheme, inst)?.sinrs(power_scale(scheme, power)))
}

/// Rate normalization: `1/T` per complex stream, `1/(2T)` per real stream.
fn rate_factor(scheme: &LinearScheme) -> f64 {
    1.0 / (scheme.slots * scheme.mode.real_factor()) as f64
}

pub fn sum_rate(
    scheme: &LinearScheme,
    inst: &ImacInstance,
    p_db: &[f64],
) -> Result<Vec<RatePoint>> {
    let table = GainTable::new(scheme, inst)?;
    let factor = rate_factor(scheme);
    let k = inst.users();
    Ok(p_db
        .iter()
        .map(|&db| {
            let sinrs = table.sinrs(power_scale(scheme, db_to_linear(db)));
            let mut per_user_rate = [vec![0.0; k], vec![0.0; k]];
            for s in &sinrs {
                per_user_rate[s.cell][s.user] += factor * (1.0 + s.sinr).log2();
            }
            RatePoint {
                p_db: db,
                sum_rate: per_user_rate.iter().flatten().sum(),
                per_user_rate,
                per_stream_sinr: sinrs.iter().map(|s| s.sinr).collect(),
            }
        })
        .collect())
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn window_points(points: &[RatePoint], window: (f64, f64)) -> Result<Vec<&RatePoint>> {
    let (lo, hi) = window;
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::InvalidParameter(format!(
            "window [{lo}, {hi}] is empty"
        )));
    }
    const EPS: f64 = 1e-9;
    let inside: Vec<&RatePoint> = points
        .iter()
        .filter(|p| p.p_db >= lo - EPS && p.p_db <= hi + EPS)
        .collect();
    let distinct = {
        let mut xs: Vec<f64> = inside.iter().map(|p| p.p_db).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    };
    if distinct < 2 {
        return Err(Error::WindowNotCovered {
            lo,
            hi,
            found: distinct,
        });
    }
    Ok(inside)
}

/// Slope of a series extracted from each point, over the window.
pub fn slope_of(
    points: &[RatePoint],
    window: (f64, f64),
    value: impl Fn(&RatePoint) -> f64,
) -> Result<f64> {
    let inside = window_points(points, window)?;
    let xs: Vec<f64> = inside.iter().map(|p| db_to_log2(p.p_db)).collect();
    let ys: Vec<f64> = inside.iter().map(|p| value(p)).collect();
    Ok(least_squares_slope(&xs, &ys))
}

pub fn dof_slope(
    points: &[RatePoint],
    window: (f64, f64),
    target: &Rational,
) -> Result<SlopeEstimate> {
    let slope = slope_of(points, window, |p| p.sum_rate)?;
    let target_value = dof_theory::to_f64(target);
    let relative_error = if target_value != 0.0 {
        (slope - target_value).abs() / target_value.abs()
    } else {
        slope.abs()
    };
    Ok(SlopeEstimate {
        window,
        slope,
        target: dof_theory::format_ratio(target),
        target_value,
        relative_error,
        points_used: window_points(points, window)?.len(),
    })
}

/// `slopes[c][k]` of each user's rate over the window.
pub fn per_user_slopes(points: &[RatePoint], window: (f64, f64)) -> Result<[Vec<f64>; 2]> {
    let k = points.first().map_or(0, |p| p.per_user_rate[0].len());
    let mut out = [vec![0.0; k], vec![0.0; k]];
    for (c, row) in out.iter_mut().enumerate() {
        for (u, slot) in row.iter_mut().enumerate() {
            *slot = slope_of(points, window, |p| p.per_user_rate[c][u])?;
        }
    }
    Ok(out)
}

/// Per-user DoF of an active user: `n / T` (CSS) or `n / (2T)` (ACS).
pub fn per_user_target(scheme: &LinearScheme) -> Rational {
    let n = scheme.streams[0].iter().copied().max().unwrap_or(0);
    dof_theory::rational(n as i64, (scheme.slots * scheme.mode.real_factor()) as i64)
}

/// Evenly spaced dB grid from `lo` to `hi` inclusive.
pub fn db_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// CSV: `P_dB,sum_rate,rate_c{c}_u{k}...`
pub fn write_rates_csv<W: Write>(points: &[RatePoint], mut out: W) -> io::Result<()> {
    let k = points.first().map_or(0, |p| p.per_user_rate[0].len());
    let mut header = vec!["P_dB".to_string(), "sum_rate".to_string()];
    for c in 0..2 {
        for u in 0..k {
            header.push(format!("rate_c{c}_u{u}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for p in points {
        let mut row = vec![format!("{}", p.p_db), format!("{}", p.sum_rate)];
        row.extend(p.per_user_rate.iter().flatten().map(|r| format!("{r}")));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
