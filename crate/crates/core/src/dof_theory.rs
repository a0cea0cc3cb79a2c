//! Closed-form sum-DoF values as exact rationals.
//!
//! All counts are `usize`; results are [`Rational`] with arbitrary-precision
//! numerator and denominator, so sweeps over large `K`, `M`, `L` stay exact.

use std::io::{self, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::channel::Mode;

pub type Rational = BigRational;

fn int(n: usize) -> BigInt {
    BigInt::from(n)
}

fn ratio(num: BigInt, den: BigInt) -> Rational {
    Rational::new(num, den)
}

pub fn rational(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// `"num/den"`, also for integers (`"4/1"`).
pub fn format_ratio(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Channel diversity: `M^2 L` for CSS, `2 M^2 L` for ACS.
pub fn channel_diversity(m: usize, l: usize, mode: Mode) -> usize {
    mode.real_factor() * m * m * l
}

/// `2 K M L / (K + 1)`
fn full_multiuser_gain(k: usize, m: usize, l: usize) -> Rational {
    ratio(int(2 * k * m * l), int(k + 1))
}

/// `2 M L * D / (D + 1)`, the value once the active-user count saturates at `D`.
fn saturated(m: usize, l: usize, d: usize) -> Rational {
    full_multiuser_gain(d, m, l)
}

pub fn dof_css(k: usize, m: usize, l: usize) -> Rational {
    let d = channel_diversity(m, l, Mode::Css);
    if k <= d {
        full_multiuser_gain(k, m, l)
    } else {
        // 2 M^3 L^2 / (M^2 L + 1)
        ratio(int(2 * m * m * m * l * l), int(m * m * l + 1))
    }
}

pub fn dof_acs(k: usize, m: usize, l: usize) -> Rational {
    let d = channel_diversity(m, l, Mode::Acs);
    if k <= d {
        full_multiuser_gain(k, m, l)
    } else {
        // 4 M^3 L^2 / (2 M^2 L + 1)
        ratio(int(4 * m * m * m * l * l), int(2 * m * m * l + 1))
    }
}

pub fn dof(k: usize, m: usize, l: usize, mode: Mode) -> Rational {
    match mode {
        Mode::Css => dof_css(k, m, l),
        Mode::Acs => dof_acs(k, m, l),
    }
}

/// `2M * K_act / (K_act + 1)` with `K_act = min(K, D)`. Pass `M L` as `m`
/// for parallel channels.
pub fn dof_unified(k: usize, m: usize, d: usize) -> Rational {
    let k_act = k.min(d);
    ratio(int(2 * m * k_act), int(k_act + 1))
}

/// `2K * floor(M / (K + 1))`, integer DoF without symbol extension.
pub fn floor_lower_css(k: usize, m: usize) -> Rational {
    ratio(int(2 * k * (m / (k + 1))), int(1))
}

/// `K * floor(2M / (K + 1))`
pub fn floor_lower_acs(k: usize, m: usize) -> Rational {
    ratio(int(k * ((2 * m) / (k + 1))), int(1))
}

/// Information-theoretic upper bound `2 K M L / (K + 1)`.
pub fn upper_it(k: usize, m: usize, l: usize) -> Rational {
    full_multiuser_gain(k, m, l)
}

/// Supremum over `K` of the feasible DoF.
pub fn asymptotic_max(m: usize, mode: Mode) -> Rational {
    saturated(m, 1, channel_diversity(m, 1, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `K <= M^2 L`: CSS, ACS and the upper bound coincide.
    AllTight,
    /// `M^2 L < K <= 2 M^2 L`: only ACS meets the upper bound.
    AcsTight,
    /// `K > 2 M^2 L`: ACS falls below the upper bound.
    BelowUpper,
}

pub fn classify(k: usize, m: usize, l: usize) -> Regime {
    if k <= channel_diversity(m, l, Mode::Css) {
        Regime::AllTight
    } else if k <= channel_diversity(m, l, Mode::Acs) {
        Regime::AcsTight
    } else {
        Regime::BelowUpper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofCurvePoint {
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub floor_css: Rational,
    pub floor_acs: Rational,
    pub feasible_css: Rational,
    pub feasible_acs: Rational,
    pub upper_it: Rational,
}

impl DofCurvePoint {
    /// Floors use the equivalent `M L`-antenna count.
    pub fn new(k: usize, m: usize, l: usize) -> Self {
        Self {
            k,
            m,
            l,
            floor_css: floor_lower_css(k, m * l),
            floor_acs: floor_lower_acs(k, m * l),
            feasible_css: dof_css(k, m, l),
            feasible_acs: dof_acs(k, m, l),
            upper_it: upper_it(k, m, l),
        }
    }

    pub fn ordering_holds(&self) -> bool {
        self.floor_css <= self.feasible_css
            && self.floor_acs <= self.feasible_acs
            && self.feasible_css <= self.feasible_acs
            && self.feasible_acs <= self.upper_it
    }

    /// Whether the point matches the equalities and strict inequalities of its regime.
    pub fn regime_holds(&self) -> bool {
        let (css, acs, up) = (&self.feasible_css, &self.feasible_acs, &self.upper_it);
        match classify(self.k, self.m, self.l) {
            Regime::AllTight => css == acs && acs == up,
            Regime::AcsTight => css < acs && acs == up,
            Regime::BelowUpper => acs < up,
        }
    }
}

/// All curves for `K = 1..=k_max` and each `M` in `m_list`.
pub fn sweep(m_list: &[usize], k_max: usize, l: usize) -> Vec<DofCurvePoint> {
    m_list
        .iter()
        .flat_map(|&m| (1..=k_max).map(move |k| DofCurvePoint::new(k, m, l)))
        .collect()
}

const CSV_VALUE_COLUMNS: [&str; 5] = [
    "floor_css",
    "floor_acs",
    "feasible_css",
    "feasible_acs",
    "upper_it",
];

pub fn write_sweep_csv<W: Write>(points: &[DofCurvePoint], mut out: W) -> io::Result<()> {
    let mut header = vec!["K".to_string(), "M".to_string(), "L".to_string()];
    for c in CSV_VALUE_COLUMNS {
        header.push(c.to_string());
        header.push(format!("{c}_decimal"));
    }
    writeln!(out, "{}", header.join(","))?;
    for p in points {
        let mut row = vec![p.k.to_string(), p.m.to_string(), p.l.to_string()];
        for v in [
            &p.floor_css,
            &p.floor_acs,
            &p.feasible_css,
            &p.feasible_acs,
            &p.upper_it,
        ] {
            row.push(format_ratio(v));
            row.push(format!("{}", to_f64(v)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
