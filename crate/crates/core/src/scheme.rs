//! Closed-form linear IA schemes with symbol extension `T = K_act + 1`, and
//! verification of the zero-forcing / full-rank feasibility conditions.
//!
//! Construction, per cell `c` with other cell `c'`:
//! 1. sample `n` generic reference vectors per cell in the extended space
//!    (`n = ML` for CSS, `2ML` for ACS);
//! 2. precoder column `m` of user `(c, k)` is the solve of the extended
//!    cross channel `(c, k) -> c'` against reference `m` of cell `c'`, so
//!    all cross-cell interference of stream `m` lands on one direction;
//! 3. combiner column `(k, m)` spans the null space of the own-cell
//!    references together with every other intended signal vector.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::channel::{ExtendedChannel, ImacInstance, Mode};
use crate::dof_theory::{self, Rational};
use crate::error::{Error, Result};
use crate::numlin::{
    self, derive_seed, null_space_vector, numerical_rank, CVector, Field, Matrix, RankReport,
    RankTolerancePolicy, C64,
};

pub const SCHEME_SCHEMA_VERSION: u32 = 1;

/// Subseed stream of the reference vectors of cell `c` in draw `d` is
/// `REFERENCE_STREAM + 2 d + c`.
const REFERENCE_STREAM: u64 = 0x5245_4600;

/// `min(K, D)` with `D = M^2 L` (CSS) or `2 M^2 L` (ACS).
pub fn active_user_count(k: usize, m: usize, l: usize, mode: Mode) -> usize {
    k.min(dof_theory::channel_diversity(m, l, mode))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// Extension length; defaults to `K_act + 1`. Other values are for
    /// negative controls.
    pub slots_override: Option<usize>,
    /// Caps the number of active users per cell below `min(K, D)`.
    pub active_users_override: Option<usize>,
    /// Independent reference sets to try; the one with the largest smallest
    /// direct-link gain is kept. Every draw yields an exact scheme.
    pub reference_draws: usize,
    pub policy: RankTolerancePolicy,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            slots_override: None,
            active_users_override: None,
            reference_draws: 1,
            policy: RankTolerancePolicy::default(),
        }
    }
}

/// Per-user precoders and combiners of one scheme. Inactive users carry a
/// single all-zero column and a stream count of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScheme {
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(rename = "T")]
    pub slots: usize,
    #[serde(rename = "K_act")]
    pub active_users: usize,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "L")]
    pub subchannels: usize,
    pub dim: usize,
    /// Power budget the precoders are scaled to.
    #[serde(rename = "P")]
    pub power: f64,
    /// `streams[c][k]`
    pub streams: [Vec<usize>; 2],
    pub precoders: [Vec<Matrix>; 2],
    pub combiners: [Vec<Matrix>; 2],
    /// `dim x n` reference directions of each cell.
    pub reference_vectors: [Matrix; 2],
    /// Index of the reference draw the scheme was built from.
    pub reference_draw: usize,
    /// Combiners picked from a null space of dimension above one.
    pub degenerate_combiners: usize,
}

impl LinearScheme {
    pub fn users(&self) -> usize {
        self.streams[0].len()
    }

    pub fn total_streams(&self) -> usize {
        self.streams.iter().flatten().sum()
    }

    /// `sum n / T` (CSS) or `sum n / (2T)` (ACS).
    pub fn achieved_dof(&self) -> Rational {
        dof_theory::rational(
            self.total_streams() as i64,
            (self.slots * self.mode.real_factor()) as i64,
        )
    }

    fn is_active(&self, cell: usize, user: usize) -> bool {
        self.streams[cell][user] > 0
    }

    /// Precoder restricted to its stream columns.
    pub fn active_precoder(&self, cell: usize, user: usize) -> Option<&Matrix> {
        self.is_active(cell, user)
            .then(|| &self.precoders[cell][user])
    }

    /// Replaces one precoder column by a random vector of the same norm.
    pub fn sabotage_precoder(
        &mut self,
        cell: usize,
        user: usize,
        stream: usize,
        seed: u64,
    ) -> Result<()> {
        let n = self.streams[cell][user];
        if stream >= n {
            return Err(Error::IndexOutOfRange {
                index: stream,
                len: n,
            });
        }
        let field = self.mode.field();
        let v = &self.precoders[cell][user];
        let old_norm = v.column(stream).norm();
        let mut fresh = numlin::sample_gaussian(self.dim, 1, seed, field).column(0);
        fresh *= C64::new(old_norm / fresh.norm(), 0.0);
        let mut data = v.inner().clone();
        data.set_column(stream, &fresh);
        self.precoders[cell][user] = Matrix::with_field(data, field);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scheme: LinearScheme = serde_json::from_str(s)?;
        if scheme.schema_version != SCHEME_SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported scheme schema version {}",
                scheme.schema_version
            )));
        }
        Ok(scheme)
    }
}

fn extended_channels(inst: &ImacInstance, slots: usize, mode: Mode) -> Vec<ExtendedChannel> {
    let mut out = Vec::with_capacity(4 * inst.users());
    for rx in 0..2 {
        for cell in 0..2 {
            for k in 0..inst.users() {
                out.push(inst.extended(rx, cell, k, slots, mode));
            }
        }
    }
    out
}

/// Extended channels of one instance, indexed `(rx, cell, user)`.
struct ChannelBank {
    users: usize,
    channels: Vec<ExtendedChannel>,
}

impl ChannelBank {
    fn new(inst: &ImacInstance, slots: usize, mode: Mode) -> Self {
        Self {
            users: inst.users(),
            channels: extended_channels(inst, slots, mode),
        }
    }

    fn get(&self, rx: usize, cell: usize, user: usize) -> &ExtendedChannel {
        &self.channels[(rx * 2 + cell) * self.users + user]
    }
}

pub fn design(inst: &ImacInstance, mode: Mode, opts: &DesignOptions) -> Result<LinearScheme> {
    let (k, m, l) = (inst.users(), inst.antennas(), inst.subchannels());
    let mut k_act = active_user_count(k, m, l, mode);
    if let Some(cap) = opts.active_users_override {
        k_act = k_act.min(cap);
    }
    let slots = opts.slots_override.unwrap_or(k_act + 1);
    if slots == 0 {
        return Err(Error::InvalidParameter(
            "extension length must be >= 1".into(),
        ));
    }
    if opts.reference_draws == 0 {
        return Err(Error::InvalidParameter(
            "reference_draws must be >= 1".into(),
        ));
    }
    let bank = ChannelBank::new(inst, slots, mode);
    let mut best: Option<(f64, LinearScheme)> = None;
    for draw in 0..opts.reference_draws {
        let scheme = design_draw(inst, mode, k_act, slots, draw, &bank, &opts.policy)?;
        let score = min_direct_gain(&scheme, &bank)?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, scheme));
        }
    }
    Ok(best.expect("at least one draw").1)
}

/// Smallest `|u^H H v|^2 / |u|^2` over all streams, at the design power.
fn min_direct_gain(scheme: &LinearScheme, bank: &ChannelBank) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for c in 0..2 {
        for user in 0..scheme.users() {
            let Some(v) = scheme.active_precoder(c, user) else {
                continue;
            };
            let img = bank.get(c, c, user).apply_matrix(v)?;
            for s in 0..img.cols() {
                let u = scheme.combiners[c][user].column(s);
                worst = worst.min(u.dotc(&img.column(s)).norm_sqr() / u.norm_squared());
            }
        }
    }
    Ok(worst)
}

fn design_draw(
    inst: &ImacInstance,
    mode: Mode,
    k_act: usize,
    slots: usize,
    draw: usize,
    bank: &ChannelBank,
    policy: &RankTolerancePolicy,
) -> Result<LinearScheme> {
    let (k, m, l) = (inst.users(), inst.antennas(), inst.subchannels());
    let per_user = mode.real_factor() * m * l;
    let dim = per_user * slots;
    let field = mode.field();
    let power = inst.power();

    let refs: [Matrix; 2] = [0, 1].map(|c| {
        let stream = REFERENCE_STREAM + 2 * draw as u64 + c;
        numlin::sample_gaussian(dim, per_user, derive_seed(inst.seed(), stream), field)
    });

    let gain = (slots as f64 * power / per_user as f64).sqrt();
    let mut streams = [vec![0; k], vec![0; k]];
    let mut precoders: [Vec<Matrix>; 2] = [Vec::with_capacity(k), Vec::with_capacity(k)];
    for c in 0..2 {
        let other = 1 - c;
        for user in 0..k {
            if user >= k_act {
                precoders[c].push(Matrix::zeros(dim, 1, field));
                continue;
            }
            let cross = bank.get(other, c, user);
            let cols: Result<Vec<CVector>> = (0..per_user)
                .map(|s| {
                    let x = cross.solve(&refs[other].column(s))?;
                    Ok(&x * C64::new(gain / x.norm(), 0.0))
                })
                .collect();
            precoders[c].push(Matrix::from_columns(&cols?, field));
            streams[c][user] = per_user;
        }
    }

    let mut combiners: [Vec<Matrix>; 2] = [Vec::with_capacity(k), Vec::with_capacity(k)];
    let mut degenerate = 0;
    for c in 0..2 {
        // [own references | intended signal vectors of every active user]
        let mut basis: Vec<CVector> = (0..per_user).map(|s| refs[c].column(s)).collect();
        for user in 0..k_act {
            let img = bank.get(c, c, user).apply_matrix(&precoders[c][user])?;
            basis.extend((0..per_user).map(|s| img.column(s)));
        }
        for user in 0..k {
            if user >= k_act {
                combiners[c].push(Matrix::zeros(dim, 1, field));
                continue;
            }
            let mut cols = Vec::with_capacity(per_user);
            for s in 0..per_user {
                let skip = per_user * (user + 1) + s;
                let others: Vec<CVector> = basis
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, v)| v.clone())
                    .collect();
                let constraints = Matrix::from_columns(&others, field).adjoint();
                let nv = null_space_vector(&constraints, policy).map_err(|e| match e {
                    Error::Infeasible {
                        constraints,
                        dim,
                        context,
                    } => Error::Infeasible {
                        constraints,
                        dim,
                        context: format!(
                            "combiner of cell {c} user {user} stream {s} with T={slots}: {context}"
                        ),
                    },
                    other => other,
                })?;
                if nv.nullity > 1 {
                    warn!(
                        "combiner of cell {c} user {user} stream {s}: null space has dimension {}",
                        nv.nullity
                    );
                    degenerate += 1;
                }
                cols.push(nv.vector);
            }
            combiners[c].push(Matrix::from_columns(&cols, field));
        }
    }

    Ok(LinearScheme {
        schema_version: SCHEME_SCHEMA_VERSION,
        mode,
        slots,
        active_users: k_act,
        antennas: m,
        subchannels: l,
        dim,
        power,
        streams,
        precoders,
        combiners,
        reference_vectors: refs,
        reference_draw: draw,
        degenerate_combiners: degenerate,
    })
}

pub fn design_css(inst: &ImacInstance) -> Result<LinearScheme> {
    design(inst, Mode::Css, &DesignOptions::default())
}

pub fn design_acs(inst: &ImacInstance) -> Result<LinearScheme> {
    design(inst, Mode::Acs, &DesignOptions::default())
}

/// Scheme on the `ML`-dimensional per-slot equivalent of an `L >= 2` instance.
pub fn design_parallel(inst: &ImacInstance, mode: Mode) -> Result<LinearScheme> {
    if inst.subchannels() < 2 {
        return Err(Error::InvalidParameter(format!(
            "parallel design needs L >= 2, got L = {}",
            inst.subchannels()
        )));
    }
    design(inst, mode, &DesignOptions::default())
}

// ---------------------------------------------------------------------------
// Verification

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityTolerances {
    /// Cross-link residual threshold, relative to `scale`.
    pub align: f64,
    /// Direct-link minimum singular value threshold, relative to `scale`.
    pub min_singular: f64,
    pub policy: RankTolerancePolicy,
}

impl Default for FeasibilityTolerances {
    fn default() -> Self {
        Self {
            align: 1e-8,
            min_singular: 1e-6,
            policy: RankTolerancePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectLink {
    pub cell: usize,
    pub user: usize,
    pub streams: usize,
    pub rank: usize,
    pub min_singular: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLink {
    /// Receiving user whose combiner is applied.
    pub rx_cell: usize,
    pub rx_user: usize,
    pub tx_cell: usize,
    pub tx_user: usize,
    /// Max-abs entry of `U_rx^H H V_tx`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub schema_version: u32,
    pub direct: Vec<DirectLink>,
    pub cross: Vec<CrossLink>,
    /// Largest max-abs entry over the direct links.
    pub scale: f64,
    pub worst_alignment_residual: f64,
    pub min_direct_singular: f64,
    pub tolerances: FeasibilityTolerances,
    pub pass: bool,
}

impl FeasibilityReport {
    pub fn relative_alignment_residual(&self) -> f64 {
        if self.scale > 0.0 {
            self.worst_alignment_residual / self.scale
        } else {
            0.0
        }
    }

    pub fn relative_min_singular(&self) -> f64 {
        if self.scale > 0.0 {
            self.min_direct_singular / self.scale
        } else {
            f64::INFINITY
        }
    }
}

fn check_compatible(scheme: &LinearScheme, inst: &ImacInstance) -> Result<()> {
    let per_user = scheme.mode.real_factor() * inst.antennas() * inst.subchannels();
    let mismatch = scheme.users() != inst.users()
        || scheme.antennas != inst.antennas()
        || scheme.subchannels != inst.subchannels()
        || scheme.dim != per_user * scheme.slots
        || scheme
            .precoders
            .iter()
            .chain(scheme.combiners.iter())
            .flatten()
            .any(|m| m.rows() != scheme.dim);
    if mismatch {
        return Err(Error::DimensionMismatch(format!(
            "scheme (K={}, M={}, L={}, dim={}) does not fit instance (K={}, M={}, L={})",
            scheme.users(),
            scheme.antennas,
            scheme.subchannels,
            scheme.dim,
            inst.users(),
            inst.antennas(),
            inst.subchannels()
        )));
    }
    Ok(())
}

/// Received images `H_ext^{[rx]}_{cell,user} V_{cell,user}` for all active users.
pub(crate) struct ReceivedImages {
    users: usize,
    images: Vec<Option<Matrix>>,
}

impl ReceivedImages {
    pub(crate) fn new(scheme: &LinearScheme, inst: &ImacInstance) -> Result<Self> {
        check_compatible(scheme, inst)?;
        let k = inst.users();
        let mut images = Vec::with_capacity(4 * k);
        for rx in 0..2 {
            for cell in 0..2 {
                for user in 0..k {
                    images.push(match scheme.active_precoder(cell, user) {
                        Some(v) => Some(
                            inst.extended(rx, cell, user, scheme.slots, scheme.mode)
                                .apply_matrix(v)?,
                        ),
                        None => None,
                    });
                }
            }
        }
        Ok(Self { users: k, images })
    }

    pub(crate) fn get(&self, rx: usize, cell: usize, user: usize) -> Option<&Matrix> {
        self.images[(rx * 2 + cell) * self.users + user].as_ref()
    }
}

pub fn verify_feasibility(
    scheme: &LinearScheme,
    inst: &ImacInstance,
    tol: &FeasibilityTolerances,
) -> Result<FeasibilityReport> {
    let images = ReceivedImages::new(scheme, inst)?;
    let k = inst.users();

    let mut direct = Vec::new();
    for c in 0..2 {
        for user in 0..k {
            let Some(img) = images.get(c, c, user) else {
                continue;
            };
            let g = scheme.combiners[c][user].adjoint().mul(img);
            let rank = numerical_rank(&g, &tol.policy)?;
            direct.push(DirectLink {
                cell: c,
                user,
                streams: scheme.streams[c][user],
                rank: rank.rank,
                min_singular: rank.min_singular(),
                max_abs: g.max_abs(),
            });
        }
    }

    let mut cross = Vec::new();
    for rx_cell in 0..2 {
        for rx_user in 0..k {
            if !scheme.is_active(rx_cell, rx_user) {
                continue;
            }
            let u_h = scheme.combiners[rx_cell][rx_user].adjoint();
            for tx_cell in 0..2 {
                for tx_user in 0..k {
                    if (tx_cell, tx_user) == (rx_cell, rx_user) {
                        continue;
                    }
                    let Some(img) = images.get(rx_cell, tx_cell, tx_user) else {
                        continue;
                    };
                    cross.push(CrossLink {
                        rx_cell,
                        rx_user,
                        tx_cell,
                        tx_user,
                        residual: u_h.mul(img).max_abs(),
                    });
                }
            }
        }
    }

    let scale = direct.iter().map(|d| d.max_abs).fold(0.0, f64::max);
    let worst = cross.iter().map(|x| x.residual).fold(0.0, f64::max);
    let min_sv = direct
        .iter()
        .map(|d| d.min_singular)
        .fold(f64::INFINITY, f64::min);
    let pass = direct
        .iter()
        .all(|d| d.rank == d.streams && d.min_singular > tol.min_singular * scale)
        && cross.iter().all(|x| x.residual < tol.align * scale);

    Ok(FeasibilityReport {
        schema_version: SCHEME_SCHEMA_VERSION,
        direct,
        cross,
        scale,
        worst_alignment_residual: worst,
        min_direct_singular: min_sv,
        tolerances: *tol,
        pass,
    })
}

/// Rank of `[R | S]` for cell 0: the cell's reference vectors next to the
/// intended signal images of its active users at its own receiver.
pub fn verify_lemma1(
    inst: &ImacInstance,
    scheme: &LinearScheme,
    policy: &RankTolerancePolicy,
) -> Result<RankReport> {
    let images = ReceivedImages::new(scheme, inst)?;
    let refs = &scheme.reference_vectors[0];
    let mut cols: Vec<CVector> = (0..refs.cols()).map(|j| refs.column(j)).collect();
    for user in 0..inst.users() {
        if let Some(img) = images.get(0, 0, user) {
            cols.extend((0..img.cols()).map(|j| img.column(j)));
        }
    }
    numerical_rank(&Matrix::from_columns(&cols, scheme.mode.field()), policy)
}

/// Rank of `[r_m, H_ext v_{1,m}, ..., H_ext v_{K_act,m}]` at the receiver of
/// the other cell: 1 when the interference of stream `stream` of `cell` is aligned.
pub fn interference_alignment_rank(
    scheme: &LinearScheme,
    inst: &ImacInstance,
    cell: usize,
    stream: usize,
    policy: &RankTolerancePolicy,
) -> Result<RankReport> {
    let images = ReceivedImages::new(scheme, inst)?;
    let other = 1 - cell;
    let mut cols = vec![scheme.reference_vectors[other].column(stream)];
    for user in 0..inst.users() {
        if let Some(img) = images.get(other, cell, user) {
            cols.push(img.column(stream));
        }
    }
    numerical_rank(&Matrix::from_columns(&cols, scheme.mode.field()), policy)
}

/// Rank of `[vec(F_1) | ... | vec(F_{k_test})]` over cell-0 users.
pub fn check_f_independence(
    inst: &ImacInstance,
    k_test: usize,
    policy: &RankTolerancePolicy,
) -> Result<RankReport> {
    if k_test == 0 || k_test > inst.users() {
        return Err(Error::InvalidParameter(format!(
            "k_test must be in 1..={}, got {k_test}",
            inst.users()
        )));
    }
    let cols: Result<Vec<CVector>> = (0..k_test)
        .map(|k| Ok(crate::channel::channel_ratio(inst, k, Mode::Css)?.vec()))
        .collect();
    numerical_rank(&Matrix::from_columns(&cols?, Field::Complex), policy)
}
