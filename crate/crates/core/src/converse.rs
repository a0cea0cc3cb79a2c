//! Empirical audit of the rank-ratio converse: aligned precoder families for
//! cell 0, the signal/interference rank ratio, the `B_rm` decomposition of
//! the signal matrix, and the rotation identities used in the ACS case.
//!
//! Index conventions (0-based): cell 0 is the transmitting cell, receiver 0
//! its own receiver, receiver 1 the interfered one. `F_k` is the per-slot
//! ratio `H^{[0]}_{0k} (H^{[1]}_{0k})^{-1}` (realified for ACS), `d` the
//! per-slot dimension (`ML` or `2ML`).

use serde::{Deserialize, Serialize};

use crate::channel::{channel_ratio, rotation_stack, sample_instance, ImacInstance, Mode};
use crate::dof_theory::{self, Rational};
use crate::error::{Error, Result};
use crate::numlin::{
    self, derive_seed, numerical_rank, rng_from_seed, CVector, Field, Matrix, RankReport,
    RankTolerancePolicy, C64,
};

pub const WITNESS_SCHEMA_VERSION: u32 = 1;

const REFERENCE_STREAM: u64 = 0;
const COEFFICIENT_STREAM: u64 = 0x1000;

/// One rank-ratio measurement. `r` is the measured interference rank at
/// the interfered receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRatioWitness {
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub slots: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "rank_S")]
    pub rank_s: usize,
    pub bound: usize,
    pub total_streams: usize,
    pub dim: usize,
    pub seed: u64,
    pub descriptor: String,
}

impl RankRatioWitness {
    pub fn holds(&self) -> bool {
        self.rank_s <= self.bound.min(self.total_streams).min(self.dim)
    }

    pub fn is_tight(&self) -> bool {
        self.rank_s == self.bound
    }

    pub fn ratio(&self) -> f64 {
        if self.r == 0 {
            0.0
        } else {
            self.rank_s as f64 / self.r as f64
        }
    }
}

/// Cell-0 precoders whose interference at receiver 1 lies in the span of
/// `R` reference directions: `H_ext^{[1]}_{0k} v_{k,j} = sum_r a_{k,j,r} ref_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPrecoderFamily {
    pub mode: Mode,
    pub slots: usize,
    pub antennas: usize,
    pub subchannels: usize,
    /// `dim x R`
    pub references: Matrix,
    /// Per user, `n_k x R` coefficients `a_{k,j,r}`; `None` when `n_k = 0`.
    pub coefficients: Vec<Option<Matrix>>,
    /// Per user, `dim x n_k`; `None` when `n_k = 0`.
    pub precoders: Vec<Option<Matrix>>,
    pub seed: u64,
    pub descriptor: String,
}

impl AlignedPrecoderFamily {
    pub fn r(&self) -> usize {
        self.references.cols()
    }

    pub fn dim(&self) -> usize {
        self.references.rows()
    }

    pub fn per_slot_dim(&self) -> usize {
        self.dim() / self.slots
    }

    pub fn n_per_user(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .map(|c| c.as_ref().map_or(0, |c| c.rows()))
            .collect()
    }

    pub fn total_streams(&self) -> usize {
        self.n_per_user().iter().sum()
    }

    /// `(user, coefficient row)` of every stream, in column order of `S`.
    fn stream_index(&self) -> Vec<(usize, usize)> {
        self.n_per_user()
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| (0..n).map(move |j| (k, j)))
            .collect()
    }

    fn images(&self, inst: &ImacInstance, rx: usize) -> Result<Option<Matrix>> {
        let mut cols: Vec<CVector> = Vec::new();
        for (k, v) in self.precoders.iter().enumerate() {
            if let Some(v) = v {
                let img = inst
                    .extended(rx, 0, k, self.slots, self.mode)
                    .apply_matrix(v)?;
                cols.extend((0..img.cols()).map(|j| img.column(j)));
            }
        }
        Ok((!cols.is_empty()).then(|| Matrix::from_columns(&cols, self.mode.field())))
    }

    /// `S = [H^{[0]}_{01} V_1 | ... | H^{[0]}_{0K} V_K]`.
    pub fn signal_matrix(&self, inst: &ImacInstance) -> Result<Option<Matrix>> {
        self.images(inst, 0)
    }

    /// Stacked interference images at receiver 1.
    pub fn interference_matrix(&self, inst: &ImacInstance) -> Result<Option<Matrix>> {
        self.images(inst, 1)
    }
}

fn check_family_inputs(
    inst: &ImacInstance,
    mode: Mode,
    slots: usize,
    users: usize,
) -> Result<usize> {
    if slots == 0 {
        return Err(Error::InvalidParameter(
            "extension length must be >= 1".into(),
        ));
    }
    if users > inst.users() {
        return Err(Error::InvalidParameter(format!(
            "family has {users} users, instance only {}",
            inst.users()
        )));
    }
    Ok(mode.real_factor() * inst.antennas() * inst.subchannels() * slots)
}

/// Builds the family from explicit references and coefficients.
pub fn build_family(
    inst: &ImacInstance,
    mode: Mode,
    slots: usize,
    references: Matrix,
    coefficients: Vec<Option<Matrix>>,
    seed: u64,
    descriptor: String,
) -> Result<AlignedPrecoderFamily> {
    let dim = check_family_inputs(inst, mode, slots, coefficients.len())?;
    if references.rows() != dim {
        return Err(Error::DimensionMismatch(format!(
            "references have {} rows, extended dimension is {dim}",
            references.rows()
        )));
    }
    let field = mode.field();
    let mut precoders = Vec::with_capacity(coefficients.len());
    for (k, a) in coefficients.iter().enumerate() {
        let Some(a) = a else {
            precoders.push(None);
            continue;
        };
        if a.cols() != references.cols() {
            return Err(Error::DimensionMismatch(format!(
                "coefficients of user {k} have {} columns, R = {}",
                a.cols(),
                references.cols()
            )));
        }
        // targets[:, j] = sum_r a_{k,j,r} ref_r
        let targets = references.mul(&a.transpose());
        let cross = inst.extended(1, 0, k, slots, mode);
        let cols: Result<Vec<CVector>> = (0..targets.cols())
            .map(|j| cross.solve(&targets.column(j)))
            .collect();
        precoders.push(Some(Matrix::from_columns(&cols?, field)));
    }
    Ok(AlignedPrecoderFamily {
        mode,
        slots,
        antennas: inst.antennas(),
        subchannels: inst.subchannels(),
        references: Matrix::with_field(references.into_inner(), field),
        coefficients: coefficients
            .into_iter()
            .map(|a| a.map(|a| Matrix::with_field(a.into_inner(), field)))
            .collect(),
        precoders,
        seed,
        descriptor,
    })
}

pub fn sample_references(dim: usize, r: usize, seed: u64, mode: Mode) -> Matrix {
    numlin::sample_gaussian(dim, r, derive_seed(seed, REFERENCE_STREAM), mode.field())
}

pub fn sample_coefficients(
    n_per_user: &[usize],
    r: usize,
    seed: u64,
    mode: Mode,
) -> Vec<Option<Matrix>> {
    n_per_user
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            (n > 0).then(|| {
                numlin::sample_gaussian(
                    n,
                    r,
                    derive_seed(seed, COEFFICIENT_STREAM + k as u64),
                    mode.field(),
                )
            })
        })
        .collect()
}

/// Generic references and coefficients; user `k` carries `n_per_user[k]` streams.
pub fn generate_aligned_precoders(
    inst: &ImacInstance,
    r: usize,
    slots: usize,
    n_per_user: &[usize],
    seed: u64,
    mode: Mode,
) -> Result<AlignedPrecoderFamily> {
    let dim = check_family_inputs(inst, mode, slots, n_per_user.len())?;
    if r == 0 || r > dim {
        return Err(Error::InvalidParameter(format!(
            "R must be in 1..={dim}, got {r}"
        )));
    }
    build_family(
        inst,
        mode,
        slots,
        sample_references(dim, r, seed, mode),
        sample_coefficients(n_per_user, r, seed, mode),
        seed,
        format!("generic R={r} n={n_per_user:?}"),
    )
}

/// `M^2 L R` (CSS) or `2 M^2 L R` (ACS).
pub fn rank_ratio_bound(m: usize, l: usize, r: usize, mode: Mode) -> usize {
    dof_theory::channel_diversity(m, l, mode) * r
}

pub fn interference_rank(
    family: &AlignedPrecoderFamily,
    inst: &ImacInstance,
    policy: &RankTolerancePolicy,
) -> Result<usize> {
    Ok(match family.interference_matrix(inst)? {
        Some(x) => numerical_rank(&x, policy)?.rank,
        None => 0,
    })
}

/// Measures `rank(S)` and the interference rank; a bound breach is
/// returned as [`Error::ConverseViolation`].
pub fn rank_ratio_check(
    family: &AlignedPrecoderFamily,
    inst: &ImacInstance,
    policy: &RankTolerancePolicy,
) -> Result<RankRatioWitness> {
    let r = interference_rank(family, inst, policy)?;
    let rank_s = match family.signal_matrix(inst)? {
        Some(s) => numerical_rank(&s, policy)?.rank,
        None => 0,
    };
    let witness = RankRatioWitness {
        schema_version: WITNESS_SCHEMA_VERSION,
        mode: family.mode,
        m: family.antennas,
        l: family.subchannels,
        slots: family.slots,
        r,
        rank_s,
        bound: rank_ratio_bound(family.antennas, family.subchannels, r, family.mode),
        total_streams: family.total_streams(),
        dim: family.dim(),
        seed: family.seed,
        descriptor: family.descriptor.clone(),
    };
    if witness.holds() {
        Ok(witness)
    } else {
        Err(Error::ConverseViolation(Box::new(witness)))
    }
}

/// `2 M^3 L^2 / (M^2 L + 1)` (CSS) or `4 M^3 L^2 / (2 M^2 L + 1)` (ACS):
/// sum DoF of two cells whose signal-to-interference rank ratio is at most
/// `D`, with equal interference dimension at both receivers.
pub fn linear_upper_bound(m: usize, l: usize, mode: Mode) -> Rational {
    let d = dof_theory::channel_diversity(m, l, mode) as i64;
    // 2 * (D R / (D R + R)) * M L
    let ml = (m * l) as i64;
    dof_theory::rational(2 * d * ml, d + 1)
}

// ---------------------------------------------------------------------------
// Decomposition audit

fn channel_ratios(
    family: &AlignedPrecoderFamily,
    inst: &ImacInstance,
) -> Result<Vec<Option<Matrix>>> {
    family
        .precoders
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.as_ref()
                .map(|_| channel_ratio(inst, k, family.mode))
                .transpose()
        })
        .collect()
}

fn check_rm(family: &AlignedPrecoderFamily, r: usize, m: usize) -> Result<()> {
    if r >= family.r() {
        return Err(Error::IndexOutOfRange {
            index: r,
            len: family.r(),
        });
    }
    if m >= family.per_slot_dim() {
        return Err(Error::IndexOutOfRange {
            index: m,
            len: family.per_slot_dim(),
        });
    }
    Ok(())
}

/// `b_{t,r,m}`: entry `m` of slot `t` of reference `r`.
fn b(family: &AlignedPrecoderFamily, t: usize, r: usize, m: usize) -> C64 {
    family.references[(t * family.per_slot_dim() + m, r)]
}

fn materialize_b(
    family: &AlignedPrecoderFamily,
    ratios: &[Option<Matrix>],
    r: usize,
    m: usize,
) -> Result<Option<Matrix>> {
    check_rm(family, r, m)?;
    let streams = family.stream_index();
    if streams.is_empty() {
        return Ok(None);
    }
    let d = family.per_slot_dim();
    let mut out = nalgebra::DMatrix::<C64>::zeros(family.dim(), streams.len());
    for (col, &(k, j)) in streams.iter().enumerate() {
        let f = ratios[k].as_ref().expect("ratio present for active user");
        let a = family.coefficients[k]
            .as_ref()
            .expect("coefficients present for active user")[(j, r)];
        for t in 0..family.slots {
            let s = b(family, t, r, m) * a;
            for i in 0..d {
                out[(t * d + i, col)] = s * f[(i, m)];
            }
        }
    }
    Ok(Some(Matrix::with_field(out, family.mode.field())))
}

/// `B_rm`: band `t`, column `(k, j)` is `b_{t,r,m} a_{k,j,r} F_k e_m`.
pub fn decompose_b(
    family: &AlignedPrecoderFamily,
    inst: &ImacInstance,
    r: usize,
    m: usize,
) -> Result<Option<Matrix>> {
    check_rm(family, r, m)?;
    materialize_b(family, &channel_ratios(family, inst)?, r, m)
}

/// `A_r` straight from its definition: column `(k, j)` is
/// `a_{k,j,r} blck(F_k, ..., F_k) ref_r`.
fn materialize_a(
    family: &AlignedPrecoderFamily,
    ratios: &[Option<Matrix>],
    r: usize,
) -> Option<Matrix> {
    let streams = family.stream_index();
    if streams.is_empty() {
        return None;
    }
    let d = family.per_slot_dim();
    let refs = family.references.column(r);
    let mut out = nalgebra::DMatrix::<C64>::zeros(family.dim(), streams.len());
    for (col, &(k, j)) in streams.iter().enumerate() {
        let f = ratios[k].as_ref().expect("ratio present for active user");
        let a = family.coefficients[k]
            .as_ref()
            .expect("coefficients present for active user")[(j, r)];
        for t in 0..family.slots {
            let seg = f.inner() * refs.rows(t * d, d);
            out.view_mut((t * d, col), (d, 1)).copy_from(&(seg * a));
        }
    }
    Some(Matrix::with_field(out, family.mode.field()))
}

fn relative_diff(a: &Matrix, b: &Matrix, scale: f64) -> f64 {
    let diff = numlin::max_abs(&(a.inner() - b.inner()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Max over slot pairs of `|b_t' band_t - b_t band_t'|`, relative to the
/// largest entry of `B`.
fn band_proportionality(family: &AlignedPrecoderFamily, bm: &Matrix, r: usize, m: usize) -> f64 {
    let d = family.per_slot_dim();
    let scale = bm.max_abs().max(f64::MIN_POSITIVE);
    let band = |t: usize| bm.inner().rows(t * d, d).into_owned();
    let mut worst = 0.0_f64;
    for t in 1..family.slots {
        let lhs = band(t) * b(family, 0, r, m);
        let rhs = band(0) * b(family, t, r, m);
        worst = worst.max(numlin::max_abs(&(lhs - rhs)) / scale);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionAudit {
    pub mode: Mode,
    pub r: usize,
    pub per_slot_dim: usize,
    /// `max |sum B - S| / max |S|`
    pub reconstruction_error: f64,
    /// `max |sum_m B_rm - A_r| / max |S|` over `r`.
    pub a_consistency_error: f64,
    pub worst_band_proportionality: f64,
    pub b_ranks: Vec<Vec<usize>>,
    /// `M` (CSS) or `2M` (ACS).
    pub b_rank_bound: usize,
    pub a_ranks: Vec<usize>,
    pub rank_s: usize,
    /// `rank S <= sum rank A_r <= sum rank B_rm <= d * b_rank_bound * R`.
    /// For ACS this count is twice the rank-ratio bound; the pairing
    /// reduction closes the gap.
    pub chain_holds: bool,
}

/// Materializes every `B_rm` and `A_r` and checks the proof chain.
/// Reconstruction beyond `1e-10` relative or a band rank above the bound is
/// a [`Error::Structural`].
pub fn audit_decomposition(
    family: &AlignedPrecoderFamily,
    inst: &ImacInstance,
    policy: &RankTolerancePolicy,
) -> Result<DecompositionAudit> {
    const RECONSTRUCTION_TOL: f64 = 1e-10;
    let ratios = channel_ratios(family, inst)?;
    let d = family.per_slot_dim();
    let b_rank_bound = family.mode.real_factor() * family.antennas;
    let Some(s) = family.signal_matrix(inst)? else {
        return Err(Error::InvalidParameter("family has no streams".into()));
    };
    let scale = s.max_abs();

    let mut total = Matrix::zeros(s.rows(), s.cols(), s.field());
    let mut b_ranks = Vec::with_capacity(family.r());
    let mut a_ranks = Vec::with_capacity(family.r());
    let mut a_err = 0.0_f64;
    let mut prop = 0.0_f64;
    for r in 0..family.r() {
        let mut a_sum = Matrix::zeros(s.rows(), s.cols(), s.field());
        let mut ranks = Vec::with_capacity(d);
        for m in 0..d {
            let bm = materialize_b(family, &ratios, r, m)?.expect("nonempty family");
            ranks.push(numerical_rank(&bm, policy)?.rank);
            prop = prop.max(band_proportionality(family, &bm, r, m));
            a_sum = Matrix::with_field(a_sum.inner() + bm.inner(), s.field());
        }
        let a_direct = materialize_a(family, &ratios, r).expect("nonempty family");
        a_err = a_err.max(relative_diff(&a_sum, &a_direct, scale));
        a_ranks.push(numerical_rank(&a_sum, policy)?.rank);
        total = Matrix::with_field(total.inner() + a_sum.inner(), s.field());
        b_ranks.push(ranks);
    }
    let reconstruction_error = relative_diff(&total, &s, scale);
    let rank_s = numerical_rank(&s, policy)?.rank;
    let sum_a: usize = a_ranks.iter().sum();
    let sum_b: usize = b_ranks.iter().flatten().sum();
    let chain_holds = rank_s <= sum_a
        && a_ranks
            .iter()
            .zip(&b_ranks)
            .all(|(a, bs)| *a <= bs.iter().sum())
        && sum_b <= d * b_rank_bound * family.r();

    let audit = DecompositionAudit {
        mode: family.mode,
        r: family.r(),
        per_slot_dim: d,
        reconstruction_error,
        a_consistency_error: a_err,
        worst_band_proportionality: prop,
        b_ranks,
        b_rank_bound,
        a_ranks,
        rank_s,
        chain_holds,
    };
    if reconstruction_error > RECONSTRUCTION_TOL || a_err > RECONSTRUCTION_TOL {
        return Err(Error::Structural(format!(
            "sum of B_rm deviates from S by {reconstruction_error:e} (A_r deviation {a_err:e})"
        )));
    }
    if let Some(max) = audit.b_ranks.iter().flatten().max() {
        if *max > b_rank_bound {
            return Err(Error::Structural(format!(
                "rank(B_rm) = {max} exceeds {b_rank_bound}"
            )));
        }
    }
    Ok(audit)
}

// ---------------------------------------------------------------------------
// Rotation identities (ACS)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PIdentityReport {
    /// Per cell-0 user: `max_m |F e_{m+1} - P F e_m| / max |F|` over odd `m`.
    pub per_user: Vec<f64>,
    pub max_deviation: f64,
}

impl PIdentityReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_deviation <= tol
    }
}

/// Checks `F e_{m+1} = P F e_m` for every odd (1-based) `m` with the
/// realified ratio `F` formed in real arithmetic.
pub fn check_p_identity(inst: &ImacInstance) -> Result<PIdentityReport> {
    let p = rotation_stack(inst.antennas() * inst.subchannels());
    let mut per_user = Vec::with_capacity(inst.users());
    for k in 0..inst.users() {
        let f = channel_ratio(inst, k, Mode::Acs)?;
        let pf = p.mul(&f);
        let scale = f.max_abs();
        let mut worst = 0.0_f64;
        for m in (0..f.cols()).step_by(2) {
            let diff = f.column(m + 1) - pf.column(m);
            worst = worst.max(diff.iter().map(|z| z.norm()).fold(0.0, f64::max) / scale);
        }
        per_user.push(worst);
    }
    let max_deviation = per_user.iter().copied().fold(0.0, f64::max);
    Ok(PIdentityReport {
        per_user,
        max_deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    /// `max |B_{r,m+1} - P~ B_{r,m}| / max |S|` over even (0-based) `m`.
    pub max_pair_residual: f64,
    /// `max |sum_pairs (I + P~) B_{r,m} - A_r| / max |S|`.
    pub max_reconstruction_residual: f64,
    /// `sum_{r, pairs} rank((I + P~) B_{r,m})`
    pub counted_rank: usize,
    pub rank_s: usize,
    /// `2 M^2 L R`
    pub bound: usize,
}

impl PairingReport {
    pub fn counting_holds(&self) -> bool {
        self.rank_s <= self.counted_rank && self.counted_rank <= self.bound
    }
}

/// `P~ = blck_t((b_{t,r,m+1} / b_{t,r,m}) P)`.
fn pairing_operator(family: &AlignedPrecoderFamily, r: usize, m: usize) -> Result<Matrix> {
    let d = family.per_slot_dim();
    let p = rotation_stack(d / 2);
    let ref_scale = family.references.max_abs();
    let mut out = nalgebra::DMatrix::<C64>::zeros(family.dim(), family.dim());
    for t in 0..family.slots {
        let den = b(family, t, r, m);
        if den.norm() <= 1e-12 * ref_scale {
            return Err(Error::Resample(format!(
                "reference {r} has a vanishing entry {m} in slot {t}"
            )));
        }
        let ratio = b(family, t, r, m + 1) / den;
        out.view_mut((t * d, t * d), (d, d))
            .copy_from(&(p.inner() * ratio));
    }
    Ok(Matrix::with_field(out, Field::Real))
}

/// Pairs `B_{r,m}` and `B_{r,m+1}` (`m` even, 0-based) through `P~` and
/// rebuilds `A_r = sum_pairs (I + P~) B_{r,m}`.
pub fn pairing_reduction_check(
    family: &AlignedPrecoderFamily,
    inst: &ImacInstance,
    policy: &RankTolerancePolicy,
) -> Result<PairingReport> {
    if family.mode != Mode::Acs {
        return Err(Error::InvalidParameter(
            "pairing reduction applies to ACS families".into(),
        ));
    }
    let ratios = channel_ratios(family, inst)?;
    let Some(s) = family.signal_matrix(inst)? else {
        return Err(Error::InvalidParameter("family has no streams".into()));
    };
    let scale = s.max_abs();
    let d = family.per_slot_dim();
    let identity = Matrix::identity(family.dim(), Field::Real);
    let mut pair = 0.0_f64;
    let mut recon = 0.0_f64;
    let mut counted = 0;
    for r in 0..family.r() {
        let mut rebuilt = Matrix::zeros(s.rows(), s.cols(), Field::Real);
        for m in (0..d).step_by(2) {
            let p = pairing_operator(family, r, m)?;
            let b_odd = materialize_b(family, &ratios, r, m)?.expect("nonempty family");
            let b_even = materialize_b(family, &ratios, r, m + 1)?.expect("nonempty family");
            pair = pair.max(relative_diff(&b_even, &p.mul(&b_odd), scale));
            let term = Matrix::with_field(identity.inner() + p.inner(), Field::Real).mul(&b_odd);
            counted += numerical_rank(&term, policy)?.rank;
            rebuilt = Matrix::with_field(rebuilt.inner() + term.inner(), Field::Real);
        }
        let a = materialize_a(family, &ratios, r).expect("nonempty family");
        recon = recon.max(relative_diff(&rebuilt, &a, scale));
    }
    Ok(PairingReport {
        max_pair_residual: pair,
        max_reconstruction_residual: recon,
        counted_rank: counted,
        rank_s: numerical_rank(&s, policy)?.rank,
        bound: rank_ratio_bound(family.antennas, family.subchannels, family.r(), Mode::Acs),
    })
}

// ---------------------------------------------------------------------------
// Tightness and falsification

/// A family with `R = 1` and enough single-stream users to fill the
/// channel diversity: `D` users, `T = max(M^2, 2)`.
pub fn tightness_witness(
    m: usize,
    mode: Mode,
    seed: u64,
    policy: &RankTolerancePolicy,
) -> Result<RankRatioWitness> {
    let users = dof_theory::channel_diversity(m, 1, mode);
    let slots = (m * m).max(2);
    let inst = sample_instance(users, m, 1, 1.0, seed)?;
    let family =
        generate_aligned_precoders(&inst, 1, slots, &vec![1; users], derive_seed(seed, 1), mode)?;
    rank_ratio_check(&family, &inst, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationConfig {
    pub mode: Mode,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "R")]
    pub r: usize,
    /// Users available to the search.
    pub users: usize,
    pub slots_range: (usize, usize),
    pub max_streams_per_user: usize,
    pub probes: usize,
    /// Hill-climb steps before a random restart.
    pub restart_every: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub config: FalsificationConfig,
    pub probes: usize,
    pub violations: Vec<RankRatioWitness>,
    /// Best `rank_S / R` seen.
    pub best_ratio: f64,
    pub best: Option<RankRatioWitness>,
}

#[derive(Debug, Clone)]
struct Candidate {
    slots: usize,
    coefficients: Vec<Option<Matrix>>,
    ref_seed: u64,
}

/// Random search with hill climbing over stream counts, extension length
/// and coefficients, maximizing `rank_S / R` at fixed `R`. Each probe is
/// checked against the bound; breaches are collected, not raised.
pub fn falsification_search(
    config: &FalsificationConfig,
    policy: &RankTolerancePolicy,
) -> Result<FalsificationReport> {
    use rand::Rng;

    let (t_lo, t_hi) = config.slots_range;
    if config.users == 0
        || config.r == 0
        || t_lo == 0
        || t_lo > t_hi
        || config.max_streams_per_user == 0
    {
        return Err(Error::InvalidParameter(format!(
            "bad falsification config {config:?}"
        )));
    }
    let field = config.mode.field();
    let inst = sample_instance(config.users, config.m, 1, 1.0, derive_seed(config.seed, 0))?;
    let mut rng = rng_from_seed(derive_seed(config.seed, 1));
    let per_slot = config.mode.real_factor() * config.m;

    let mut fresh_coeffs = |rng: &mut rand_chacha::ChaCha20Rng, n: usize| -> Option<Matrix> {
        (n > 0).then(|| numlin::sample_gaussian(n, config.r, rng.random(), field))
    };
    let random_candidate =
        |rng: &mut rand_chacha::ChaCha20Rng,
         fresh: &mut dyn FnMut(&mut rand_chacha::ChaCha20Rng, usize) -> Option<Matrix>| {
            let slots = rng.random_range(t_lo..=t_hi);
            let coefficients = (0..config.users)
                .map(|_| {
                    let n = rng.random_range(0..=config.max_streams_per_user);
                    fresh(rng, n)
                })
                .collect();
            Candidate {
                slots,
                coefficients,
                ref_seed: rng.random(),
            }
        };

    let evaluate = |c: &Candidate, probe: usize| -> Result<Option<RankRatioWitness>> {
        let dim = per_slot * c.slots;
        if config.r > dim {
            return Ok(None);
        }
        let refs = numlin::sample_gaussian(dim, config.r, c.ref_seed, field);
        let family = build_family(
            &inst,
            config.mode,
            c.slots,
            refs,
            c.coefficients.clone(),
            config.seed,
            format!("probe {probe}"),
        )?;
        match rank_ratio_check(&family, &inst, policy) {
            Ok(w) => Ok(Some(w)),
            Err(Error::ConverseViolation(w)) => Ok(Some(*w)),
            Err(e) => Err(e),
        }
    };

    let mut violations = Vec::new();
    let mut best: Option<RankRatioWitness> = None;
    let mut current = random_candidate(&mut rng, &mut fresh_coeffs);
    let mut current_score = -1.0;
    for probe in 0..config.probes {
        let candidate = if probe % config.restart_every == 0 {
            random_candidate(&mut rng, &mut fresh_coeffs)
        } else {
            let mut c = current.clone();
            let k = rng.random_range(0..config.users);
            match rng.random_range(0..6) {
                // grow or shrink one user's stream count
                0 => {
                    let n = c.coefficients[k].as_ref().map_or(0, |a| a.rows());
                    let n = if rng.random_bool(0.5) {
                        (n + 1).min(config.max_streams_per_user)
                    } else {
                        n.saturating_sub(1)
                    };
                    c.coefficients[k] = fresh_coeffs(&mut rng, n);
                }
                1 => c.slots = rng.random_range(t_lo..=t_hi),
                // perturb coefficients
                2 => {
                    if let Some(a) = &c.coefficients[k] {
                        let noise =
                            numlin::sample_gaussian(a.rows(), a.cols(), rng.random(), field);
                        c.coefficients[k] = Some(Matrix::with_field(
                            a.inner() + noise.inner() * C64::new(0.3, 0.0),
                            field,
                        ));
                    }
                }
                // copy another user's coefficients
                3 => {
                    let src = rng.random_range(0..config.users);
                    c.coefficients[k] = c.coefficients[src].clone();
                }
                // zero out one coefficient row
                4 => {
                    if let Some(a) = &c.coefficients[k] {
                        let mut data = a.inner().clone();
                        let row = rng.random_range(0..a.rows());
                        data.row_mut(row).fill(C64::new(0.0, 0.0));
                        c.coefficients[k] = Some(Matrix::with_field(data, field));
                    }
                }
                _ => c.ref_seed = rng.random(),
            }
            c
        };
        let Some(w) = evaluate(&candidate, probe)? else {
            continue;
        };
        if !w.holds() {
            violations.push(w.clone());
        }
        let score = w.ratio() + 1e-3 * w.rank_s as f64;
        if score >= current_score || probe % config.restart_every == 0 {
            current = candidate;
            current_score = score;
        }
        if best.as_ref().is_none_or(|b| w.ratio() > b.ratio()) {
            best = Some(w);
        }
    }
    Ok(FalsificationReport {
        config: config.clone(),
        probes: config.probes,
        violations,
        best_ratio: best.as_ref().map_or(0.0, |b| b.ratio()),
        best,
    })
}

/// Rank report of the stacked interference images, for diagnostics.
pub fn interference_rank_report(
    family: &AlignedPrecoderFamily,
    inst: &ImacInstance,
    policy: &RankTolerancePolicy,
) -> Result<Option<RankReport>> {
    family
        .interference_matrix(inst)?
        .map(|x| numerical_rank(&x, policy))
        .transpose()
}
