//! Post-training subgroup refinement.
//!
//! Subgroups whose importance rows point the same way (cosine similarity at
//! least `h`) are merged transitively: the groups are the connected
//! components of the graph joining every such pair. Merging sums the member
//! assignment probabilities, so a merge of identical rows leaves every
//! prediction unchanged.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalRecord;
use crate::diffcore::Matrix;
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::model::{AdhamModel, ImportanceMatrix};

/// Symmetric `C x C` cosine similarities of importance rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub size: usize,
    pub rho: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn from_vec(size: usize, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != size * size {
            return Err(Error::ShapeMismatch {
                context: "correlation matrix",
                expected: size * size,
                found: rho.len(),
            });
        }
        Ok(Self { size, rho })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rho[i * self.size..(i + 1) * self.size]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementPlan {
    /// Disjoint member lists covering `0..C`, each sorted, ordered by first member.
    pub groups: Vec<Vec<usize>>,
    pub threshold: f64,
}

impl RefinementPlan {
    pub fn identity(size: usize, threshold: f64) -> Self {
        Self {
            groups: (0..size).map(|c| vec![c]).collect(),
            threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    /// Number of subgroups the plan covers.
    pub fn size(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    fn check_partition(&self, size: usize) -> Result<()> {
        let mut seen = vec![false; size];
        for g in &self.groups {
            if g.is_empty() {
                return Err(invalid("refinement plan has an empty group"));
            }
            for &c in g {
                if c >= size || seen[c] {
                    return Err(invalid("refinement plan is not a partition of the subgroups"));
                }
                seen[c] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(invalid("refinement plan does not cover every subgroup"))
        }
    }
}

pub fn correlation_matrix(importance: &ImportanceMatrix) -> Result<CorrelationMatrix> {
    correlation_of_rows(&importance.beta())
}

/// Cosine similarity between the rows of a nonnegative matrix.
pub fn correlation_of_rows(beta: &Matrix) -> Result<CorrelationMatrix> {
    let c = beta.rows;
    if c == 0 {
        return Err(invalid("no subgroups"));
    }
    let norms: Vec<f64> = (0..c)
        .map(|i| math::sqrt(beta.row(i).iter().map(|v| v * v).sum()))
        .collect();
    if norms.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
        return Err(invalid("importance row with zero norm"));
    }
    let mut rho = vec![0.0; c * c];
    for i in 0..c {
        rho[i * c + i] = 1.0;
        for j in i + 1..c {
            let v = if beta.row(i) == beta.row(j) {
                1.0
            } else {
                let dot: f64 = beta.row(i).iter().zip(beta.row(j)).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(0.0, 1.0)
            };
            rho[i * c + j] = v;
            rho[j * c + i] = v;
        }
    }
    Ok(CorrelationMatrix { size: c, rho })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index as root keeps group order canonical.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of `{(i, j) : i != j, rho_ij >= h}`.
pub fn combine_clusters(rho: &CorrelationMatrix, h: f64) -> Result<RefinementPlan> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(invalid(alloc::format!("threshold must lie in (0, 1], got {h}")));
    }
    let n = rho.size;
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if rho.get(i, j) >= h || rho.get(j, i) >= h {
                uf.union(i, j);
            }
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for c in 0..n {
        let r = uf.find(c);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(c);
    }
    Ok(RefinementPlan {
        groups,
        threshold: h,
    })
}

/// Mean assignment probability of each current subgroup over `sample`.
pub fn assignment_mass(model: &AdhamModel, sample: &[SurvivalRecord]) -> Result<Vec<f64>> {
    let c = model.subgroups();
    let mut mass = vec![0.0; c];
    if sample.is_empty() {
        return Ok(mass);
    }
    let xs: Vec<&[f64]> = sample.iter().map(|r| r.x.as_slice()).collect();
    let f = model.assignment_batch(&xs)?;
    for r in 0..f.rows {
        for (m, v) in mass.iter_mut().zip(f.row(r)) {
            *m += v;
        }
    }
    for m in &mut mass {
        *m /= sample.len() as f64;
    }
    Ok(mass)
}

/// Model with the plan's groups merged.
///
/// A merged importance row is the average of its members weighted by their
/// assignment mass over `sample`, renormalised. Members with identical rows
/// need no sample; otherwise an empty sample is an error.
pub fn apply_merge(
    model: &AdhamModel,
    plan: &RefinementPlan,
    sample: &[SurvivalRecord],
) -> Result<AdhamModel> {
    let c = model.subgroups();
    plan.check_partition(c)?;
    if plan.is_identity() {
        return Ok(model.clone());
    }
    let beta = model.importance.beta();
    let dim = model.dim();
    let needs_mass = plan
        .groups
        .iter()
        .any(|g| g.iter().any(|&m| beta.row(m) != beta.row(g[0])));
    let mass = if needs_mass {
        if sample.is_empty() {
            return Err(Error::InsufficientData(
                "merging subgroups with different importance rows needs a sample".into(),
            ));
        }
        assignment_mass(model, sample)?
    } else {
        vec![0.0; c]
    };

    let mut logits = Vec::with_capacity(plan.len() * dim);
    for g in &plan.groups {
        if g.len() == 1 {
            let k = g[0];
            logits.extend_from_slice(&model.importance.logits[k * dim..(k + 1) * dim]);
            continue;
        }
        let total: f64 = g.iter().map(|&k| mass[k]).sum();
        let weight = |k: usize| {
            if total > 0.0 {
                mass[k] / total
            } else {
                1.0 / g.len() as f64
            }
        };
        let mut row = vec![0.0; dim];
        for &k in g {
            let w = weight(k);
            for (o, b) in row.iter_mut().zip(beta.row(k)) {
                *o += w * b;
            }
        }
        let s: f64 = row.iter().sum();
        logits.extend(row.iter().map(|v| math::ln((v / s).max(math::TINY))));
    }

    // Compose with any earlier merge so groups always index raw outputs.
    let raw_groups: Vec<Vec<usize>> = match &model.assignment.groups {
        None => plan.groups.clone(),
        Some(old) => plan
            .groups
            .iter()
            .map(|g| {
                let mut members: Vec<usize> = g.iter().flat_map(|&k| old[k].iter().copied()).collect();
                members.sort_unstable();
                members
            })
            .collect(),
    };

    let mut out = model.clone();
    out.assignment.groups = Some(raw_groups);
    out.importance = ImportanceMatrix {
        subgroups: plan.len(),
        covariates: dim,
        logits,
    };
    out.validate()?;
    Ok(out)
}

/// Correlation, clustering and merge in one call.
pub fn refine(
    model: &AdhamModel,
    h: f64,
    sample: &[SurvivalRecord],
) -> Result<(RefinementPlan, AdhamModel)> {
    let rho = correlation_matrix(&model.importance)?;
    let plan = combine_clusters(&rho, h)?;
    let merged = apply_merge(model, &plan, sample)?;
    Ok((plan, merged))
}
