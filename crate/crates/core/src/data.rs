//! Data containers and candidate moment sets.
//!
//! Moment conditions are indexed `0..p+q`: the `p` baseline conditions
//! (instruments assumed valid) come first, followed by the `q` suspect ones.
//! A candidate specification is a [`MomentSet`], i.e. an ordered list of
//! those indices, and its [`SelectionMatrix`] picks the corresponding rows
//! out of a full moment vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Outcome, regressors, baseline instruments and suspect instruments.
///
/// Variables are used as given: no intercept is added, so constants must be
/// supplied as a column (or projected out) by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z1: DMatrix<f64>,
    z2: DMatrix<f64>,
}

impl Dataset {
    /// Builds a dataset, checking dimensions, finiteness and the rank
    /// conditions needed for the valid estimator to exist.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z1: DMatrix<f64>, z2: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        for (name, rows) in [("X", x.nrows()), ("Z1", z1.nrows()), ("Z2", z2.nrows())] {
            if rows != n {
                return Err(Error::Dimension(format!("{name} has {rows} rows, y has {n}")));
            }
        }
        let (r, p, q) = (x.ncols(), z1.ncols(), z2.ncols());
        if r == 0 {
            return Err(Error::Dimension("no regressors".into()));
        }
        if p < r {
            return Err(Error::Rank(format!(
                "{p} baseline instruments cannot identify {r} coefficients"
            )));
        }
        if n <= p + q {
            return Err(Error::Dimension(format!("n = {n} must exceed p + q = {}", p + q)));
        }
        let finite = y.iter().chain(x.iter()).chain(z1.iter()).chain(z2.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invariant("non-finite value in data".into()));
        }
        linalg::check_full_column_rank(&x, "regressor matrix X")?;
        linalg::check_full_column_rank(&linalg::hcat(&z1, &z2), "instrument matrix [Z1 | Z2]")?;
        Ok(Self { y, x, z1, z2 })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z1(&self) -> &DMatrix<f64> {
        &self.z1
    }

    pub fn z2(&self) -> &DMatrix<f64> {
        &self.z2
    }

    /// Full instrument matrix `[Z1 | Z2]`.
    pub fn z(&self) -> DMatrix<f64> {
        linalg::hcat(&self.z1, &self.z2)
    }

    /// Instruments belonging to a moment set, `Z Ξ_S'`.
    pub fn z_subset(&self, s: &MomentSet) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(self.n(), s.len(), |i, j| {
            let k = s.included()[j];
            if k < p {
                self.z1[(i, k)]
            } else {
                self.z2[(i, k - p)]
            }
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.z1.ncols()
    }

    pub fn q(&self) -> usize {
        self.z2.ncols()
    }
}

/// How a candidate turns its moment conditions into an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CandidateKind {
    /// Regressors act as their own instruments.
    OlsCandidate,
    /// TSLS on the baseline instruments only.
    TslsCandidate,
    /// TSLS on the baseline plus a subset of suspect instruments.
    IvSubset,
}

/// A candidate specification: which of the `p + q` moment conditions it uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MomentSet {
    id: String,
    included: Vec<usize>,
    kind: CandidateKind,
}

impl MomentSet {
    pub fn new(id: impl Into<String>, included: Vec<usize>, kind: CandidateKind) -> Result<Self> {
        if included.is_empty() {
            return Err(Error::Config("moment set must include at least one condition".into()));
        }
        if included.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "moment indices must be strictly increasing, got {included:?}"
            )));
        }
        Ok(Self { id: id.into(), included, kind })
    }

    /// Baseline conditions only.
    pub fn valid(p: usize) -> Self {
        Self { id: "valid".into(), included: (0..p).collect(), kind: CandidateKind::IvSubset }
    }

    /// Every available condition.
    pub fn full(p: usize, q: usize) -> Self {
        Self { id: "full".into(), included: (0..p + q).collect(), kind: CandidateKind::IvSubset }
    }

    /// OLS in the OLS-versus-TSLS wiring, where the single suspect moment is
    /// `E[x ε] = 0` at index `p`.
    pub fn ols_candidate(p: usize) -> Self {
        Self { id: "OLS".into(), included: vec![p], kind: CandidateKind::OlsCandidate }
    }

    pub fn tsls_candidate(p: usize) -> Self {
        Self { id: "TSLS".into(), included: (0..p).collect(), kind: CandidateKind::TslsCandidate }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn included(&self) -> &[usize] {
        &self.included
    }

    pub fn kind(&self) -> CandidateKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    /// Number of suspect conditions included.
    pub fn suspect_count(&self, p: usize) -> usize {
        self.included.iter().filter(|&&k| k >= p).count()
    }

    /// Checks the set against problem dimensions.
    pub fn validate(&self, p: usize, q: usize, r: usize) -> Result<()> {
        if let Some(&k) = self.included.iter().find(|&&k| k >= p + q) {
            return Err(Error::Dimension(format!(
                "moment set {}: index {k} outside 0..{}",
                self.id,
                p + q
            )));
        }
        if self.len() < r {
            return Err(Error::Config(format!(
                "moment set {} has {} conditions but {r} parameters",
                self.id,
                self.len()
            )));
        }
        if self.kind == CandidateKind::IvSubset && (0..p).any(|k| !self.included.contains(&k)) {
            return Err(Error::Config(format!(
                "IV subset {} must include every baseline condition",
                self.id
            )));
        }
        Ok(())
    }
}

/// The 0/1 matrix `Ξ_S` extracting the moments of `S` from the full vector.
///
/// Stored sparsely: `columns[k]` is the position of the single 1 in row `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    columns: Vec<usize>,
    cols: usize,
}

impl SelectionMatrix {
    pub fn rows(&self) -> usize {
        self.columns.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols);
        for (row, &col) in self.columns.iter().enumerate() {
            m[(row, col)] = 1.0;
        }
        m
    }

    /// `Ξ_S v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.cols, "selection matrix applied to wrong length");
        DVector::from_iterator(self.rows(), self.columns.iter().map(|&c| v[c]))
    }

    /// `Ξ_S' w`: scatters a `|S|`-vector into the full moment space.
    pub fn scatter(&self, w: &DVector<f64>) -> DVector<f64> {
        assert_eq!(w.len(), self.rows(), "scatter length mismatch");
        let mut out = DVector::zeros(self.cols);
        for (k, &c) in self.columns.iter().enumerate() {
            out[c] = w[k];
        }
        out
    }

    /// `Ξ_S A Ξ_S'`.
    pub fn sandwich(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::select_square(a, &self.columns)
    }
}

/// Builds `Ξ_S` for a moment set over `p + q` conditions.
pub fn selection_matrix(s: &MomentSet, p: usize, q: usize) -> Result<SelectionMatrix> {
    if let Some(&k) = s.included().iter().find(|&&k| k >= p + q) {
        return Err(Error::Dimension(format!(
            "moment index {k} out of range for p + q = {}",
            p + q
        )));
    }
    Ok(SelectionMatrix { columns: s.included().to_vec(), cols: p + q })
}

/// A named group of suspect instruments, indexed within `0..q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectBlock {
    pub name: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidateMode {
    /// Every subset of the suspect instruments.
    AllSubsets,
    /// Every union of whole blocks.
    Blocks(Vec<SuspectBlock>),
}

/// Enumerates IV-subset candidates. The valid set comes first and the full
/// set last; in between, subsets are ordered by their bitmask.
pub fn candidate_lattice(p: usize, q: usize, mode: &CandidateMode) -> Result<Vec<MomentSet>> {
    if q == 0 {
        return Err(Error::Config("candidate lattice needs at least one suspect instrument".into()));
    }
    let blocks: Vec<SuspectBlock> = match mode {
        CandidateMode::AllSubsets => (0..q)
            .map(|j| SuspectBlock { name: format!("h{j}"), indices: vec![j] })
            .collect(),
        CandidateMode::Blocks(blocks) => {
            let mut seen = vec![false; q];
            for b in blocks {
                if b.indices.is_empty() {
                    return Err(Error::Config(format!("block {} is empty", b.name)));
                }
                for &j in &b.indices {
                    if j >= q || seen[j] {
                        return Err(Error::Config(format!(
                            "blocks do not partition the {q} suspect instruments (index {j} in {})",
                            b.name
                        )));
                    }
                    seen[j] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Config("blocks do not cover every suspect instrument".into()));
            }
            blocks.clone()
        }
    };
    let nb = blocks.len();
    if nb >= 31 {
        return Err(Error::Config(format!("{nb} blocks give too many candidates")));
    }
    let full_mask = (1usize << nb) - 1;
    let mut out = Vec::with_capacity(1 << nb);
    for mask in 0..=full_mask {
        let mut included: Vec<usize> = (0..p).collect();
        let mut names = Vec::new();
        for (b, block) in blocks.iter().enumerate() {
            if mask & (1 << b) != 0 {
                included.extend(block.indices.iter().map(|j| p + j));
                names.push(block.name.as_str());
            }
        }
        included.sort_unstable();
        let id = if mask == 0 {
            "valid".to_string()
        } else if mask == full_mask {
            "full".to_string()
        } else {
            format!("valid+{}", names.join("+"))
        };
        out.push(MomentSet::new(id, included, CandidateKind::IvSubset)?);
    }
    Ok(out)
}

/// Matrix bundle consumed by the generic FMSC formula for one candidate.
///
/// `k_s` follows the sign convention `√n(θ̂_S − θ₀) ≈ −K_S Ξ_S √n f_n(θ₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponents {
    pub grad_mu: DVector<f64>,
    pub k_s: DMatrix<f64>,
    pub xi_s: SelectionMatrix,
    pub omega: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub n: usize,
}

impl GmmComponents {
    pub fn new(
        grad_mu: DVector<f64>,
        k_s: DMatrix<f64>,
        xi_s: SelectionMatrix,
        omega: DMatrix<f64>,
        psi: DMatrix<f64>,
        tau: DVector<f64>,
        n: usize,
    ) -> Result<Self> {
        let r = grad_mu.len();
        let m = xi_s.cols();
        let q = tau.len();
        if k_s.nrows() != r || k_s.ncols() != xi_s.rows() {
            return Err(Error::Dimension(format!(
                "K_S is {}x{}, expected {r}x{}",
                k_s.nrows(),
                k_s.ncols(),
                xi_s.rows()
            )));
        }
        if omega.nrows() != m || omega.ncols() != m {
            return Err(Error::Dimension(format!("Omega must be {m}x{m}")));
        }
        if q > m || psi.nrows() != q || psi.ncols() != m {
            return Err(Error::Dimension(format!("Psi must be {q}x{m}")));
        }
        let scale = omega.abs().max().max(1.0);
        if (&omega - omega.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::Invariant("Omega is not symmetric".into()));
        }
        let right = psi.columns(m - q, q);
        if right != DMatrix::identity(q, q) {
            return Err(Error::Invariant("right block of Psi must be the identity".into()));
        }
        Ok(Self { grad_mu, k_s, xi_s, omega, psi, tau, n })
    }

    /// Number of baseline conditions.
    pub fn p(&self) -> usize {
        self.xi_s.cols() - self.tau.len()
    }

    /// `−∇μ' K_S Ξ_S` as a vector over all `p + q` moments; the limit of
    /// `√n(μ̂_S − μ₀)` is this vector dotted with `M + (0, τ)`.
    pub fn influence(&self) -> DVector<f64> {
        let row = -(self.k_s.transpose() * &self.grad_mu);
        self.xi_s.scatter(&row)
    }
}

/// Point estimates and homoskedastic inference for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub beta: Vec<f64>,
    /// Already divided by `n`.
    pub vcov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    #[serde(skip)]
    pub residuals: DVector<f64>,
    pub moment_set: String,
}

impl EstimateResult {
    pub(crate) fn from_parts(
        beta: DVector<f64>,
        vcov: DMatrix<f64>,
        residuals: DVector<f64>,
        moment_set: impl Into<String>,
    ) -> Self {
        let se = vcov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
        Self {
            beta: beta.iter().cloned().collect(),
            vcov: vcov.row_iter().map(|r| r.iter().cloned().collect()).collect(),
            se,
            residuals,
            moment_set: moment_set.into(),
        }
    }

    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }
}
