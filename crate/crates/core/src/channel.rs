//! Two-cell MIMO interfering MAC: sampled instances, symbol extension,
//! realification and the parallel-subchannel equivalent.
//!
//! Indexing is 0-based throughout: receiver `rx` and transmitting cell
//! `cell` are in `{0, 1}`, users in `0..K`, subchannels in `0..L`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{self, block_diag, derive_seed, CVector, Field, Matrix, C64};

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

/// Signaling mode: circularly symmetric (complex processing) or asymmetric
/// complex (real processing on the realified channel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Css,
    Acs,
}

impl Mode {
    pub fn field(self) -> Field {
        match self {
            Mode::Css => Field::Complex,
            Mode::Acs => Field::Real,
        }
    }

    /// Real dimensions per complex dimension (1 for CSS, 2 for ACS).
    pub fn real_factor(self) -> usize {
        match self {
            Mode::Css => 1,
            Mode::Acs => 2,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Css => "css",
            Mode::Acs => "acs",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "css" => Ok(Mode::Css),
            "acs" => Ok(Mode::Acs),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

/// Sampled channel state of the two-cell IMAC.
#[derive(Debug, Clone, PartialEq)]
pub struct ImacInstance {
    users: usize,
    antennas: usize,
    subchannels: usize,
    power: f64,
    seed: u64,
    channels: Vec<Matrix>,
}

impl ImacInstance {
    fn index(&self, rx: usize, cell: usize, user: usize, sub: usize) -> usize {
        assert!(rx < 2 && cell < 2, "receiver and cell indices are 0 or 1");
        assert!(user < self.users && sub < self.subchannels);
        ((rx * 2 + cell) * self.users + user) * self.subchannels + sub
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subchannels(&self) -> usize {
        self.subchannels
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix_count(&self) -> usize {
        self.channels.len()
    }

    /// `H^{[rx]}_{cell,user,sub}`, an `M x M` complex matrix.
    pub fn channel(&self, rx: usize, cell: usize, user: usize, sub: usize) -> &Matrix {
        &self.channels[self.index(rx, cell, user, sub)]
    }

    /// Per-slot channel of the equivalent `ML`-antenna system:
    /// `blck(H_1, ..., H_L)`; the channel itself when `L = 1`.
    pub fn per_slot_channel(&self, rx: usize, cell: usize, user: usize) -> Matrix {
        if self.subchannels == 1 {
            return self.channel(rx, cell, user, 0).clone();
        }
        let blocks: Vec<&Matrix> = (0..self.subchannels)
            .map(|l| self.channel(rx, cell, user, l))
            .collect();
        block_diag(&blocks)
    }

    /// Extended channel of `T` slots in the given signaling mode.
    pub fn extended(
        &self,
        rx: usize,
        cell: usize,
        user: usize,
        slots: usize,
        mode: Mode,
    ) -> ExtendedChannel {
        ExtendedChannel::new(
            self.per_slot_channel(rx, cell, user),
            slots,
            self.subchannels,
            mode,
        )
    }

    /// Same instance with the roles of the two cells (and receivers) exchanged.
    pub fn with_cells_swapped(&self) -> ImacInstance {
        let mut out = self.clone();
        for rx in 0..2 {
            for cell in 0..2 {
                for k in 0..self.users {
                    for l in 0..self.subchannels {
                        let dst = out.index(1 - rx, 1 - cell, k, l);
                        out.channels[dst] = self.channel(rx, cell, k, l).clone();
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&InstanceDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// Samples all `2 * 2 * K * L` channel matrices. Matrix number `i` (in
/// `(rx, cell, user, sub)` row-major order) is drawn with subseed
/// `derive_seed(seed, i)`.
pub fn sample_instance(
    users: usize,
    antennas: usize,
    subchannels: usize,
    power: f64,
    seed: u64,
) -> Result<ImacInstance> {
    if users == 0 || antennas == 0 || subchannels == 0 {
        return Err(Error::InvalidParameter(format!(
            "K, M, L must be >= 1 (got K={users}, M={antennas}, L={subchannels})"
        )));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "power must be positive, got {power}"
        )));
    }
    let count = 4 * users * subchannels;
    let channels = (0..count)
        .map(|i| numlin::sample_complex_gaussian(antennas, antennas, derive_seed(seed, i as u64)))
        .collect();
    Ok(ImacInstance {
        users,
        antennas,
        subchannels,
        power,
        seed,
        channels,
    })
}

/// Per-slot equivalent channels for every `(rx, cell, user)`, in that
/// row-major order.
pub fn build_parallel_equivalent(inst: &ImacInstance) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(4 * inst.users);
    for rx in 0..2 {
        for cell in 0..2 {
            for k in 0..inst.users {
                out.push(inst.per_slot_channel(rx, cell, k));
            }
        }
    }
    out
}

/// `F_k = H^{[1]}_{1k} (H^{[2]}_{1k})^{-1}` for cell-0 user `user`, on the
/// per-slot equivalent channel. For ACS the realified blocks are used and the
/// product is formed in real arithmetic.
pub fn channel_ratio(inst: &ImacInstance, user: usize, mode: Mode) -> Result<Matrix> {
    let (direct, cross) = match mode {
        Mode::Css => (
            inst.per_slot_channel(0, 0, user),
            inst.per_slot_channel(1, 0, user),
        ),
        Mode::Acs => (
            realify(&inst.per_slot_channel(0, 0, user)),
            realify(&inst.per_slot_channel(1, 0, user)),
        ),
    };
    // F * cross = direct  <=>  cross^T F^T = direct^T
    Ok(numlin::solve_matrix(&cross.transpose(), &direct.transpose())?.transpose())
}

// ---------------------------------------------------------------------------
// Realification

/// Real `2M x 2M` representation: entry `h_ij` becomes the cell
/// `[[Re, -Im], [Im, Re]]` at rows `2i, 2i+1`, columns `2j, 2j+1`.
pub fn realify(h: &Matrix) -> Matrix {
    let (rows, cols) = h.shape();
    let mut out = DMatrix::<f64>::zeros(2 * rows, 2 * cols);
    for i in 0..rows {
        for j in 0..cols {
            let z = h[(i, j)];
            out[(2 * i, 2 * j)] = z.re;
            out[(2 * i, 2 * j + 1)] = -z.im;
            out[(2 * i + 1, 2 * j)] = z.im;
            out[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    Matrix::real(&out)
}

/// Interleaves real and imaginary parts per entry: `(Re x_1, Im x_1, ...)`.
pub fn realify_vector(x: &CVector) -> CVector {
    CVector::from_iterator(
        2 * x.len(),
        x.iter()
            .flat_map(|z| [C64::new(z.re, 0.0), C64::new(z.im, 0.0)]),
    )
}

/// Inverse of [`realify_vector`]; imaginary parts of the input are ignored.
pub fn complexify_vector(x: &CVector) -> Result<CVector> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::DimensionMismatch(format!(
            "realified vector has odd length {}",
            x.len()
        )));
    }
    Ok(CVector::from_iterator(
        x.len() / 2,
        x.as_slice().chunks(2).map(|p| C64::new(p[0].re, p[1].re)),
    ))
}

/// `blck([[0, -1], [1, 0]], ...)` with `n` rotation blocks; multiplication by
/// `i` in realified coordinates.
pub fn rotation_stack(n: usize) -> Matrix {
    let mut out = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for b in 0..n {
        out[(2 * b, 2 * b + 1)] = -1.0;
        out[(2 * b + 1, 2 * b)] = 1.0;
    }
    Matrix::real(&out)
}

// ---------------------------------------------------------------------------
// Symbol extension

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagonalBlock {
    pub offset: usize,
    pub size: usize,
}

/// Block-diagonal symbol-extended channel, stored as its per-slot block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedChannel {
    base: Matrix,
    block: Matrix,
    slots: usize,
    subchannels: usize,
    mode: Mode,
}

impl ExtendedChannel {
    /// `base` is the complex per-slot channel (itself `blck(H_1..H_L)` when
    /// `subchannels > 1`).
    pub fn new(base: Matrix, slots: usize, subchannels: usize, mode: Mode) -> Self {
        assert!(slots >= 1, "extension length must be >= 1");
        assert_eq!(base.rows(), base.cols(), "channel must be square");
        assert_eq!(base.rows() % subchannels, 0);
        let block = match mode {
            Mode::Css => base.clone(),
            Mode::Acs => realify(&base),
        };
        Self {
            base,
            block,
            slots,
            subchannels,
            mode,
        }
    }

    pub fn base(&self) -> &Matrix {
        &self.base
    }

    /// The per-slot block as seen in this mode (realified for ACS).
    pub fn block(&self) -> &Matrix {
        &self.block
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn block_dim(&self) -> usize {
        self.block.rows()
    }

    pub fn dim(&self) -> usize {
        self.block_dim() * self.slots
    }

    /// The `T * L` diagonal blocks of the materialized matrix.
    pub fn block_structure(&self) -> Vec<DiagonalBlock> {
        let size = self.block_dim() / self.subchannels;
        (0..self.slots * self.subchannels)
            .map(|i| DiagonalBlock {
                offset: i * size,
                size,
            })
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let blocks: Vec<&Matrix> = (0..self.slots).map(|_| &self.block).collect();
        block_diag(&blocks)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {len} applied to extended channel of dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Slot segments of `x` as the columns of a `block_dim x T` matrix.
    fn fold(&self, x: &CVector) -> DMatrix<C64> {
        DMatrix::from_column_slice(self.block_dim(), self.slots, x.as_slice())
    }

    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        self.check_len(x.len())?;
        let y = self.block.inner() * self.fold(x);
        Ok(CVector::from_column_slice(y.as_slice()))
    }

    /// Applies the channel to every column of `x`.
    pub fn apply_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let cols: Result<Vec<CVector>> = (0..x.cols()).map(|j| self.apply(&x.column(j))).collect();
        Ok(Matrix::from_columns(
            &cols?,
            self.block.field().join(x.field()),
        ))
    }

    /// Solves `H_ext * x = rhs` slot by slot with one factorization of the block.
    pub fn solve(&self, rhs: &CVector) -> Result<CVector> {
        self.check_len(rhs.len())?;
        let field = if rhs.iter().all(|z| z.im == 0.0) {
            Field::Real
        } else {
            Field::Complex
        };
        let folded = Matrix::with_field(self.fold(rhs), field);
        let x = numlin::solve_matrix(&self.block, &folded)?;
        Ok(CVector::from_column_slice(x.as_slice()))
    }
}

/// `blck(H, ..., H)` with `T` copies.
pub fn extend_css(h: &Matrix, slots: usize) -> ExtendedChannel {
    ExtendedChannel::new(h.clone(), slots, 1, Mode::Css)
}

/// `blck(realify(H), ..., realify(H))` with `T` copies.
pub fn extend_acs(h: &Matrix, slots: usize) -> ExtendedChannel {
    ExtendedChannel::new(h.clone(), slots, 1, Mode::Acs)
}

/// Segment of slot `slot` (0-based) of a stacked signal.
pub fn segment(x: &CVector, slot: usize, per_slot_dim: usize) -> Result<CVector> {
    if per_slot_dim == 0 || !x.len().is_multiple_of(per_slot_dim) {
        return Err(Error::DimensionMismatch(format!(
            "length {} is not a multiple of per-slot dimension {per_slot_dim}",
            x.len()
        )));
    }
    let slots = x.len() / per_slot_dim;
    if slot >= slots {
        return Err(Error::IndexOutOfRange {
            index: slot,
            len: slots,
        });
    }
    Ok(x.rows(slot * per_slot_dim, per_slot_dim).into_owned())
}

/// Stacks per-slot segments in slot order.
pub fn stack(segments: &[CVector]) -> CVector {
    CVector::from_iterator(
        segments.iter().map(|s| s.len()).sum(),
        segments.iter().flat_map(|s| s.iter().copied()),
    )
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Serialize, Deserialize)]
struct MatrixDoc {
    rx: usize,
    cell: usize,
    user: usize,
    subchannel: usize,
    entries: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    schema_version: u32,
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "M")]
    antennas: usize,
    #[serde(rename = "L")]
    subchannels: usize,
    #[serde(rename = "P")]
    power: f64,
    seed: u64,
    matrices: Vec<MatrixDoc>,
}

impl From<&ImacInstance> for InstanceDoc {
    fn from(inst: &ImacInstance) -> Self {
        let mut matrices = Vec::with_capacity(inst.channels.len());
        for rx in 0..2 {
            for cell in 0..2 {
                for user in 0..inst.users {
                    for subchannel in 0..inst.subchannels {
                        let h = inst.channel(rx, cell, user, subchannel);
                        let entries = (0..h.rows())
                            .flat_map(|i| (0..h.cols()).map(move |j| (i, j)))
                            .map(|(i, j)| [h[(i, j)].re, h[(i, j)].im])
                            .collect();
                        matrices.push(MatrixDoc {
                            rx,
                            cell,
                            user,
                            subchannel,
                            entries,
                        });
                    }
                }
            }
        }
        Self {
            schema_version: INSTANCE_SCHEMA_VERSION,
            users: inst.users,
            antennas: inst.antennas,
            subchannels: inst.subchannels,
            power: inst.power,
            seed: inst.seed,
            matrices,
        }
    }
}

impl TryFrom<InstanceDoc> for ImacInstance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        if doc.schema_version != INSTANCE_SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported instance schema version {}",
                doc.schema_version
            )));
        }
        let m = doc.antennas;
        let expected = 4 * doc.users * doc.subchannels;
        if m == 0 || doc.matrices.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} matrices, found {}",
                doc.matrices.len()
            )));
        }
        let mut inst = ImacInstance {
            users: doc.users,
            antennas: m,
            subchannels: doc.subchannels,
            power: doc.power,
            seed: doc.seed,
            channels: vec![Matrix::zeros(m, m, Field::Complex); expected],
        };
        for md in doc.matrices {
            if md.rx > 1
                || md.cell > 1
                || md.user >= inst.users
                || md.subchannel >= inst.subchannels
            {
                return Err(Error::InvalidParameter(format!(
                    "matrix index out of range: rx={} cell={} user={} subchannel={}",
                    md.rx, md.cell, md.user, md.subchannel
                )));
            }
            if md.entries.len() != m * m {
                return Err(Error::DimensionMismatch(format!(
                    "matrix has {} entries, expected {}",
                    md.entries.len(),
                    m * m
                )));
            }
            let entries: Vec<C64> = md
                .entries
                .iter()
                .map(|[re, im]| C64::new(*re, *im))
                .collect();
            let idx = inst.index(md.rx, md.cell, md.user, md.subchannel);
            inst.channels[idx] = Matrix::complex(DMatrix::from_row_slice(m, m, &entries));
        }
        Ok(inst)
    }
}
