//! Data-driven orthonormal polynomial bases.
//!
//! Each parameter gets a univariate family built from the raw moments of its
//! prior by solving the Hankel moment system for monic orthogonal
//! polynomials, then normalizing. Families are tensorized over a total-degree
//! multi-index set to form the multivariate basis.
//!
//! Internally every family lives in the standardized coordinate
//! `z = (x - mean) / std_dev`; the monomial coefficients in the original
//! coordinate are derived from that form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{ParameterSpace, Prior1D};
use crate::stats::{rel_close, round_significant};

/// Orthonormal polynomials `ψ_0 .. ψ_n` for one prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateFamily {
    shift: f64,
    scale: f64,
    /// `standardized[k][j]` is the coefficient of `z^j` in `ψ_k`.
    standardized: Vec<Vec<f64>>,
    /// Norm of the monic polynomial, i.e. `ψ_k = monic_k / norms[k]`.
    norms: Vec<f64>,
}

/// Builds the orthonormal family up to `max_degree` from the prior's moments.
pub fn build_family(prior: &Prior1D, max_degree: usize) -> Result<UnivariateFamily> {
    let n_moments = 2 * max_degree + 1;
    let moments = (0..n_moments)
        .map(|k| prior.standardized_moment(k))
        .collect::<Result<Vec<_>>>()?;

    let mut standardized = vec![vec![1.0]];
    let mut norms = vec![1.0];
    for degree in 1..=max_degree {
        let hankel = DMatrix::from_fn(degree, degree, |i, j| moments[i + j]);
        let rhs = DVector::from_fn(degree, |i, _| -moments[i + degree]);
        let singular = || Error::SingularMoments {
            parameter: String::new(),
            degree,
        };
        let chol = hankel.cholesky().ok_or_else(singular)?;
        let lower = chol.solve(&rhs);
        let mut monic: Vec<f64> = lower.iter().copied().collect();
        monic.push(1.0);

        let mut norm_sq = 0.0;
        let mut magnitude = 0.0;
        for (i, ci) in monic.iter().enumerate() {
            for (j, cj) in monic.iter().enumerate() {
                let t = ci * cj * moments[i + j];
                norm_sq += t;
                magnitude += t.abs();
            }
        }
        if !norm_sq.is_finite() || norm_sq <= 1e-12 * magnitude {
            return Err(singular());
        }
        let norm = norm_sq.sqrt();
        standardized.push(monic.iter().map(|c| c / norm).collect());
        norms.push(norm);
    }

    Ok(UnivariateFamily {
        shift: prior.mean(),
        scale: prior.std_dev(),
        standardized,
        norms,
    })
}

impl UnivariateFamily {
    pub fn max_degree(&self) -> usize {
        self.standardized.len() - 1
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    /// Coefficients of `ψ_k` in the standardized coordinate.
    pub fn standardized_coefficients(&self, degree: usize) -> &[f64] {
        &self.standardized[degree]
    }

    /// Monomial coefficients of `ψ_k` in the original coordinate, lowest
    /// degree first.
    pub fn coefficients(&self, degree: usize) -> Vec<f64> {
        let zc = &self.standardized[degree];
        let mut out = vec![0.0; zc.len()];
        // (x - shift)^j / scale^j expanded binomially
        for (j, &c) in zc.iter().enumerate() {
            let inv = c / self.scale.powi(j as i32);
            let mut binom = 1.0;
            for (m, slot) in out.iter_mut().enumerate().take(j + 1) {
                *slot += inv * binom * (-self.shift).powi((j - m) as i32);
                binom = binom * (j - m) as f64 / (m + 1) as f64;
            }
        }
        out
    }

    pub fn evaluate(&self, degree: usize, x: f64) -> f64 {
        horner(&self.standardized[degree], self.standardize(x))
    }

    /// `[ψ_0(x), .., ψ_max(x)]`.
    pub fn evaluate_all(&self, x: f64, max_degree: usize) -> Vec<f64> {
        let z = self.standardize(x);
        self.standardized[..=max_degree].iter().map(|c| horner(c, z)).collect()
    }

    /// Real roots of `ψ_k`, ascending.
    ///
    /// Eigenvalues of the companion matrix of the monic polynomial, each
    /// followed by one Newton step.
    pub fn roots(&self, degree: usize) -> Result<Vec<f64>> {
        if degree == 0 || degree > self.max_degree() {
            return Err(Error::InvalidArgument(format!(
                "root degree must be in 1..={}, got {degree}",
                self.max_degree()
            )));
        }
        let coeffs = &self.standardized[degree];
        let lead = coeffs[degree];
        let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
        let fail = || Error::RootFinding {
            coefficients: self.coefficients(degree),
        };

        let mut roots_z: Vec<f64> = if degree == 1 {
            vec![-monic[0]]
        } else {
            let companion = DMatrix::from_fn(degree, degree, |i, j| {
                if j == degree - 1 {
                    -monic[i]
                } else if i == j + 1 {
                    1.0
                } else {
                    0.0
                }
            });
            let eig = companion.complex_eigenvalues();
            let mut out = Vec::with_capacity(degree);
            for ev in eig.iter() {
                if !ev.re.is_finite() || ev.im.abs() > 1e-8 * (1.0 + ev.re.abs()) {
                    return Err(fail());
                }
                out.push(ev.re);
            }
            out
        };

        let derivative: Vec<f64> = monic.iter().enumerate().skip(1).map(|(j, c)| j as f64 * c).collect();
        let coef_scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        for r in roots_z.iter_mut() {
            let d = horner(&derivative, *r);
            if d != 0.0 {
                *r -= horner(&monic, *r) / d;
            }
            if horner(coeffs, *r).abs() >= 1e-10 * coef_scale.max(1.0) {
                return Err(fail());
            }
        }
        roots_z.sort_by(f64::total_cmp);
        Ok(roots_z.into_iter().map(|z| self.shift + self.scale * z).collect())
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Number of basis terms `D + 1 = (N_p + d)! / (N_p! d!)`.
pub fn basis_size(n_params: usize, degree: usize) -> usize {
    // C(n + d, d) computed incrementally; exact in integers
    let mut acc: u128 = 1;
    for i in 1..=degree as u128 {
        acc = acc * (n_params as u128 + i) / i;
    }
    acc as usize
}

/// Total-degree multi-indices, graded by total degree with the zero index
/// first; within a grade, reverse-lexicographic (`[1,0] before [0,1]`).
pub fn total_degree_indices(n_params: usize, degree: usize) -> Vec<Vec<usize>> {
    fn fill(pos: usize, remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining;
            out.push(cur.clone());
            return;
        }
        for v in (0..=remaining).rev() {
            cur[pos] = v;
            fill(pos + 1, remaining - v, cur, out);
        }
    }
    let mut out = Vec::with_capacity(basis_size(n_params, degree));
    let mut cur = vec![0; n_params];
    for total in 0..=degree {
        fill(0, total, &mut cur, &mut out);
    }
    out
}

/// Tensorized orthonormal basis `Ψ_α(ω) = Π ψ_{α_i}(ω_i)` over `|α| <= d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateBasis {
    names: Vec<String>,
    families: Vec<UnivariateFamily>,
    indices: Vec<Vec<usize>>,
    degree: usize,
}

impl MultivariateBasis {
    /// Builds families up to degree `d + 1` (the extra degree supplies the
    /// collocation roots) and the degree-`d` index set.
    pub fn new(space: &ParameterSpace, degree: usize) -> Result<Self> {
        let families = space
            .names()
            .iter()
            .zip(space.priors())
            .map(|(name, prior)| {
                build_family(prior, degree + 1).map_err(|e| match e {
                    Error::SingularMoments { degree, .. } => Error::SingularMoments {
                        parameter: name.clone(),
                        degree,
                    },
                    Error::MomentOrder { order, samples, max } => Error::InvalidPrior(format!(
                        "parameter '{name}': degree {} needs moments up to order {order}, \
                         but {samples} samples support only order {max}",
                        degree + 1
                    )),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: space.names().to_vec(),
            families,
            indices: total_degree_indices(space.len(), degree),
            degree,
        })
    }

    /// Reassembles a basis from its stored parts.
    pub fn from_parts(
        names: Vec<String>,
        families: Vec<UnivariateFamily>,
        indices: Vec<Vec<usize>>,
        degree: usize,
    ) -> Result<Self> {
        if names.len() != families.len() || names.is_empty() {
            return Err(Error::Shape("basis names and families disagree".into()));
        }
        for idx in &indices {
            if idx.len() != names.len()
                || idx.iter().sum::<usize>() > degree
                || idx.iter().zip(&families).any(|(&a, f)| a > f.max_degree())
            {
                return Err(Error::Shape(format!("invalid multi-index {idx:?}")));
            }
        }
        if indices.first().map(|i| i.iter().any(|&a| a != 0)).unwrap_or(true) {
            return Err(Error::Shape("first multi-index must be zero".into()));
        }
        Ok(Self {
            names,
            families,
            indices,
            degree,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_params(&self) -> usize {
        self.families.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn families(&self) -> &[UnivariateFamily] {
        &self.families
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Number of terms, `D + 1`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `D` in the usual notation: number of terms minus the constant.
    pub fn expansion_size(&self) -> usize {
        self.len() - 1
    }

    /// Values of all basis terms at one point.
    pub fn evaluate_row(&self, point: &[f64]) -> Vec<f64> {
        let uni: Vec<Vec<f64>> = self
            .families
            .iter()
            .zip(point)
            .map(|(f, &x)| f.evaluate_all(x, self.degree))
            .collect();
        self.indices
            .iter()
            .map(|alpha| alpha.iter().enumerate().map(|(i, &a)| uni[i][a]).product())
            .collect()
    }

    /// Design matrix with one row per point (rows of `points`).
    pub fn design_matrix(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(points.nrows(), self.len());
        let mut buf = vec![0.0; points.ncols()];
        for r in 0..points.nrows() {
            for (c, b) in buf.iter_mut().enumerate() {
                *b = points[(r, c)];
            }
            for (c, v) in self.evaluate_row(&buf).into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }
}

/// Where a collocation point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Initial,
    BapcUpdate,
}

/// Relative per-coordinate tolerance under which two points count as equal.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// Ordered parameter vectors at which the original model was evaluated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    points: Vec<Vec<f64>>,
    provenance: Vec<Provenance>,
}

impl CollocationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Vec<f64>>, provenance: Vec<Provenance>) -> Result<Self> {
        if points.len() != provenance.len() {
            return Err(Error::Shape("points and provenance lengths differ".into()));
        }
        let mut set = Self::new();
        for (p, prov) in points.into_iter().zip(provenance) {
            set.push(p, prov)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, point: Vec<f64>, provenance: Provenance) -> Result<()> {
        if let Some(first) = self.points.first() {
            if first.len() != point.len() {
                return Err(Error::Shape(format!(
                    "collocation point has {} coordinates, expected {}",
                    point.len(),
                    first.len()
                )));
            }
        }
        if let Some(i) = self.find_near(&point, DUPLICATE_TOLERANCE) {
            return Err(Error::Collocation(format!(
                "point {point:?} duplicates collocation point {i}"
            )));
        }
        self.points.push(point);
        self.provenance.push(provenance);
        Ok(())
    }

    /// Index of an existing point agreeing with `point` in every coordinate
    /// within relative tolerance `rel`.
    pub fn find_near(&self, point: &[f64], rel: f64) -> Option<usize> {
        self.points
            .iter()
            .position(|p| p.len() == point.len() && p.iter().zip(point).all(|(&a, &b)| rel_close(a, b, rel)))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// `P × N_p` matrix of the points.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let cols = self.points.first().map_or(0, Vec::len);
        DMatrix::from_fn(self.points.len(), cols, |r, c| self.points[r][c])
    }

    /// Copy without point `index`.
    pub fn without(&self, index: usize) -> Self {
        let mut out = self.clone();
        out.points.remove(index);
        out.provenance.remove(index);
        out
    }
}

/// Initial collocation points drawn from the tensor grid of the degree-`d+1`
/// roots of every univariate family.
///
/// Candidates are ranked by descending joint prior density, then ascending
/// distance to the prior mean in standardized coordinates, then
/// lexicographically. Selection walks that ranking and first takes the
/// candidates that raise the rank of the design matrix until it is full; the
/// remaining slots are filled from the ranking in order. The result is
/// returned in ranking order.
pub fn initial_collocation(basis: &MultivariateBasis, space: &ParameterSpace, count: usize) -> Result<CollocationSet> {
    if basis.n_params() != space.len() {
        return Err(Error::Shape("basis and parameter space dimensions differ".into()));
    }
    let node_degree = basis.degree() + 1;
    let nodes = basis
        .families()
        .iter()
        .map(|f| f.roots(node_degree))
        .collect::<Result<Vec<_>>>()?;
    let n_candidates = nodes
        .iter()
        .try_fold(1usize, |acc, n| acc.checked_mul(n.len()))
        .ok_or_else(|| Error::Collocation("candidate grid too large".into()))?;
    if count < basis.len() {
        return Err(Error::Collocation(format!(
            "need at least {} collocation points for {} basis terms, requested {count}",
            basis.len(),
            basis.len()
        )));
    }
    if count > n_candidates {
        return Err(Error::Collocation(format!(
            "requested {count} collocation points but the root grid has only {n_candidates}"
        )));
    }

    let means = space.means();
    let sds = space.std_devs();
    let n_params = space.len();
    let mut candidates: Vec<(f64, f64, Vec<f64>)> = Vec::with_capacity(n_candidates);
    let mut digits = vec![0usize; n_params];
    for _ in 0..n_candidates {
        let point: Vec<f64> = digits.iter().enumerate().map(|(i, &d)| nodes[i][d]).collect();
        let density = space.density(&point)?;
        let dist: f64 = point
            .iter()
            .zip(means.iter().zip(&sds))
            .map(|(x, (m, s))| ((x - m) / s).powi(2))
            .sum();
        candidates.push((round_significant(density, 12), round_significant(dist, 9), point));
        // odometer increment over the grid
        for d in (0..n_params).rev() {
            digits[d] += 1;
            if digits[d] < nodes[d].len() {
                break;
            }
            digits[d] = 0;
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then_with(|| {
            a.2.iter()
                .zip(&b.2)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    // Greedy rank-raising pass (modified Gram-Schmidt on design rows).
    let mut chosen = vec![false; candidates.len()];
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    let mut n_chosen = 0;
    for (i, cand) in candidates.iter().enumerate() {
        if ortho.len() == basis.len() || n_chosen == count {
            break;
        }
        let row = basis.evaluate_row(&cand.2);
        let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut res = row;
        for _ in 0..2 {
            for q in &ortho {
                let dot: f64 = q.iter().zip(&res).map(|(a, b)| a * b).sum();
                res.iter_mut().zip(q).for_each(|(r, qv)| *r -= dot * qv);
            }
        }
        let res_norm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res_norm > 1e-8 * row_norm {
            ortho.push(res.into_iter().map(|v| v / res_norm).collect());
            chosen[i] = true;
            n_chosen += 1;
        }
    }
    if ortho.len() < basis.len() {
        return Err(Error::Collocation(format!(
            "root grid supports only rank {} of {} basis terms",
            ortho.len(),
            basis.len()
        )));
    }
    for flag in chosen.iter_mut() {
        if n_chosen == count {
            break;
        }
        if !*flag {
            *flag = true;
            n_chosen += 1;
        }
    }

    let mut set = CollocationSet::new();
    for (cand, _) in candidates.into_iter().zip(&chosen).filter(|(_, &c)| c) {
        set.push(cand.2, Provenance::Initial)?;
    }
    Ok(set)
}
