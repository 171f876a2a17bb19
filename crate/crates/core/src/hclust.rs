//! Average-linkage clustering and the hierarchical correlation filters.
//!
//! [`hcal`] replaces every off-diagonal entry `(i, j)` of a matrix by
//! `1 − ρ`, where `ρ` is the average-linkage distance of the merge that first
//! joins `i` and `j` on the distance `D = 1 − M`. [`k_hcal`] applies the same
//! filter recursively to the residue `C − C<` and accumulates the filtered
//! residues.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{clip_negative_eigenvalues, MatrixRole, SymmetricMatrix};

/// One agglomeration step. Leaves have ids `0..n`; the cluster created by
/// merge `s` has id `n + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    /// Smaller of the two merged cluster ids.
    pub left: usize,
    /// Larger of the two merged cluster ids.
    pub right: usize,
    /// Average-linkage distance between the two clusters.
    pub height: f64,
    pub id: usize,
    pub left_members: Vec<usize>,
    pub right_members: Vec<usize>,
}

impl Merge {
    pub fn size(&self) -> usize {
        self.left_members.len() + self.right_members.len()
    }

    pub fn members(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .left_members
            .iter()
            .chain(&self.right_members)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Merge order as `(left, right)` id pairs; equal for identical genealogies.
    pub fn structure(&self) -> Vec<(usize, usize)> {
        self.merges.iter().map(|m| (m.left, m.right)).collect()
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// CSV with columns `merge,left,right,height,size`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["merge", "left", "right", "height", "size"])
            .map_err(crate::matrix::csv_write_err)?;
        for (s, m) in self.merges.iter().enumerate() {
            w.write_record([
                s.to_string(),
                m.left.to_string(),
                m.right.to_string(),
                format!("{}", m.height),
                m.size().to_string(),
            ])
            .map_err(crate::matrix::csv_write_err)?;
        }
        w.flush().map_err(|e| Error::io("<dendrogram csv>", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    dist: f64,
    lo: usize,
    hi: usize,
    slot: usize,
}

impl Candidate {
    fn key_cmp(&self, other: &Candidate) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

/// Average-linkage agglomeration of a distance matrix. Only off-diagonal
/// entries are read.
///
/// Cluster distances are kept as sums of member distances, so each height
/// is the plain average of the original distances. Among equally distant
/// pairs the one with the lexicographically smallest `(min id, max id)` is
/// merged first.
pub fn average_linkage(dist: &SymmetricMatrix) -> Result<Dendrogram> {
    let n = dist.dim();
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
        });
    }
    if !dist.is_finite() {
        return Err(Error::NonFinite);
    }
    let d = dist.as_matrix();
    // sums[a * n + b]: sum of leaf distances between the clusters in slots a, b.
    let mut sums: Vec<f64> = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            sums.push(if a == b { 0.0 } else { d[(a, b)] });
        }
    }
    let mut active = vec![true; n];
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    let candidate = |sums: &[f64], ids: &[usize], sizes: &[usize], a: usize, b: usize| Candidate {
        dist: sums[a * n + b] / (sizes[a] * sizes[b]) as f64,
        lo: ids[a].min(ids[b]),
        hi: ids[a].max(ids[b]),
        slot: b,
    };
    let nearest = |sums: &[f64], ids: &[usize], sizes: &[usize], active: &[bool], a: usize| {
        let mut best: Option<Candidate> = None;
        for b in 0..n {
            if b == a || !active[b] {
                continue;
            }
            let c = candidate(sums, ids, sizes, a, b);
            if best.as_ref().is_none_or(|x| c.key_cmp(x) == Ordering::Less) {
                best = Some(c);
            }
        }
        best
    };

    let mut nn: Vec<Option<Candidate>> = (0..n)
        .map(|a| nearest(&sums, &ids, &sizes, &active, a))
        .collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let (a, best) = (0..n)
            .filter(|&a| active[a])
            .filter_map(|a| nn[a].map(|c| (a, c)))
            .min_by(|x, y| x.1.key_cmp(&y.1))
            .expect("at least two active clusters");
        let b = best.slot;
        let (keep, gone) = if a < b { (a, b) } else { (b, a) };
        let (left_slot, right_slot) = if ids[a] < ids[b] { (a, b) } else { (b, a) };
        let new_id = n + step;
        merges.push(Merge {
            left: ids[left_slot],
            right: ids[right_slot],
            height: best.dist,
            id: new_id,
            left_members: members[left_slot].clone(),
            right_members: members[right_slot].clone(),
        });

        for x in 0..n {
            if active[x] && x != keep && x != gone {
                let s = sums[keep * n + x] + sums[gone * n + x];
                sums[keep * n + x] = s;
                sums[x * n + keep] = s;
            }
        }
        let moved = std::mem::take(&mut members[gone]);
        members[keep].extend(moved);
        members[keep].sort_unstable();
        sizes[keep] += sizes[gone];
        ids[keep] = new_id;
        active[gone] = false;
        nn[gone] = None;

        for x in 0..n {
            if !active[x] || x == keep {
                continue;
            }
            let stale = nn[x].is_none_or(|c| c.slot == keep || c.slot == gone);
            if stale {
                nn[x] = nearest(&sums, &ids, &sizes, &active, x);
            } else {
                let c = candidate(&sums, &ids, &sizes, x, keep);
                if nn[x].is_none_or(|cur| c.key_cmp(&cur) == Ordering::Less) {
                    nn[x] = Some(c);
                }
            }
        }
        nn[keep] = nearest(&sums, &ids, &sizes, &active, keep);
    }

    Ok(Dendrogram { n_leaves: n, merges })
}

/// Distance `1 − M` used by the filters.
pub fn similarity_distance(m: &SymmetricMatrix) -> SymmetricMatrix {
    let data = m.as_matrix().map(|x| 1.0 - x);
    SymmetricMatrix::from_upper(data, MatrixRole::Generic).expect("square input")
}

/// Average-linkage filter together with the dendrogram it was built from.
pub fn hcal_with_dendrogram(m: &SymmetricMatrix) -> Result<(SymmetricMatrix, Dendrogram)> {
    let dendrogram = average_linkage(&similarity_distance(m))?;
    let n = m.dim();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = m.get(i, i);
    }
    for merge in &dendrogram.merges {
        let value = 1.0 - merge.height;
        for &i in &merge.left_members {
            for &j in &merge.right_members {
                out[(i, j)] = value;
                out[(j, i)] = value;
            }
        }
    }
    let filtered = SymmetricMatrix::from_upper(out, m.role())?;
    Ok((filtered, dendrogram))
}

/// Hierarchical clustering average-linkage filter. The diagonal is copied
/// from the input.
pub fn hcal(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    hcal_with_dendrogram(m).map(|(f, _)| f)
}

/// Output of the order-`k` recursive filter.
#[derive(Debug, Clone)]
pub struct FilteredCorrelation {
    pub matrix: SymmetricMatrix,
    pub order: usize,
    /// Negative eigenvalues were set to zero.
    pub clipped: bool,
}

impl FilteredCorrelation {
    /// Largest deviation of the diagonal from one; non-zero only after clipping.
    pub fn diagonal_drift(&self) -> f64 {
        self.matrix.unit_diagonal_deviation()
    }
}

/// Order-`k` recursive filter of a correlation matrix.
///
/// `k = 1` is exactly [`hcal`]. For `k > 1` the assembled matrix has its
/// negative eigenvalues set to zero.
pub fn k_hcal(corr: &SymmetricMatrix, k: usize) -> Result<FilteredCorrelation> {
    let mut out = k_hcal_orders(corr, &[k])?;
    Ok(out.pop().expect("one order requested"))
}

/// Filters of several orders from one recursion. Results follow the order
/// of `orders`; the recursion runs up to the largest requested order.
///
/// The residue at each step is taken against the unclipped accumulated
/// matrix; clipping only touches the returned copies.
pub fn k_hcal_orders(corr: &SymmetricMatrix, orders: &[usize]) -> Result<Vec<FilteredCorrelation>> {
    if let Some(&bad) = orders.iter().find(|&&k| k < 1) {
        return Err(Error::InvalidInput(format!("filter order must be >= 1, got {bad}")));
    }
    let Some(&max_k) = orders.iter().max() else {
        return Ok(Vec::new());
    };
    if corr.dim() == 1 {
        // Nothing to cluster: a single asset is its own filtered matrix.
        return Ok(orders
            .iter()
            .map(|&order| FilteredCorrelation {
                matrix: corr.clone(),
                order,
                clipped: false,
            })
            .collect());
    }
    let c = corr.as_matrix();
    let mut accumulated = DMatrix::zeros(c.nrows(), c.ncols());
    let mut snapshots: Vec<Option<FilteredCorrelation>> = vec![None; orders.len()];

    for order in 1..=max_k {
        let residue = SymmetricMatrix::from_upper(c - &accumulated, MatrixRole::Residue)?;
        let filtered = hcal(&residue)?;
        accumulated += filtered.as_matrix();

        for (slot, _) in orders.iter().enumerate().filter(|(_, &k)| k == order) {
            let assembled = SymmetricMatrix::from_upper(accumulated.clone(), corr.role())?;
            snapshots[slot] = Some(if order == 1 {
                FilteredCorrelation {
                    matrix: assembled,
                    order,
                    clipped: false,
                }
            } else {
                let clip = clip_negative_eigenvalues(&assembled)?;
                FilteredCorrelation {
                    matrix: clip.matrix,
                    order,
                    clipped: clip.clipped,
                }
            });
        }
    }
    Ok(snapshots.into_iter().map(|s| s.expect("order computed")).collect())
}
