//! Dirichlet label-skew partitioning.
//!
//! For every class `k` a proportion vector `p_k ~ Dir(alpha, ..., alpha)` over
//! the `Q` clients is drawn from a substream keyed by `(seed, k)`. The class's
//! samples are shuffled with the same substream and cut into contiguous runs
//! whose lengths are the largest-remainder roundings of `n_k * p_k`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletSpec {
    /// Concentration; smaller means stronger label skew.
    pub alpha: f64,
    pub clients: usize,
    pub seed: u64,
}

impl DirichletSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "Dirichlet alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if self.clients == 0 {
            return Err(Error::config("client count must be at least 1"));
        }
        Ok(())
    }
}

/// Client to sample-index assignment. Lists are sorted, pairwise disjoint and
/// together cover every sample of the parent dataset exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    /// Validate and wrap an assignment for a dataset of `n` samples.
    pub fn new(mut assignments: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (q, list) in assignments.iter_mut().enumerate() {
            list.sort_unstable();
            for &i in list.iter() {
                if i >= n {
                    return Err(Error::data(format!("client {q} holds index {i} >= {n}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::data(format!("sample {i} assigned twice")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::data(format!(
                "sample {i} not assigned to any client"
            )));
        }
        Ok(Self { assignments })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Sorted sample indices of client `q` (zero-based).
    pub fn client(&self, q: usize) -> &[usize] {
        &self.assignments[q]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// First client with no samples, if any.
    pub fn first_empty(&self) -> Option<usize> {
        self.assignments.iter().position(Vec::is_empty)
    }

    /// Give every empty client one sample taken from the currently largest
    /// client (lowest id on ties; the donor gives up its highest index).
    pub fn rebalance_min_one(mut self) -> Result<Self> {
        let n: usize = self.assignments.iter().map(Vec::len).sum();
        if n < self.assignments.len() {
            return Err(Error::config(format!(
                "cannot give each of {} clients a sample: only {n} samples",
                self.assignments.len()
            )));
        }
        while let Some(empty) = self.first_empty() {
            let donor = (0..self.assignments.len())
                .max_by(|&a, &b| {
                    self.assignments[a]
                        .len()
                        .cmp(&self.assignments[b].len())
                        .then(b.cmp(&a))
                })
                .expect("at least one client");
            let sample = self.assignments[donor].pop().expect("donor is non-empty");
            self.assignments[empty].push(sample);
        }
        Ok(self)
    }
}

/// Draw `p ~ Dir(alpha, ..., alpha)` of length `dim`.
///
/// Gamma variates are handled in log space (`G(a) = G(a + 1) * U^(1/a)` for
/// `a < 1`) so tiny concentrations never underflow to an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let log_gammas: Vec<f64> = (0..dim)
        .map(|_| {
            if alpha < 1.0 {
                let g = Gamma::new(alpha + 1.0, 1.0)
                    .expect("valid shape")
                    .sample(rng);
                let u: f64 = Open01.sample(rng);
                g.ln() + u.ln() / alpha
            } else {
                Gamma::new(alpha, 1.0)
                    .expect("valid shape")
                    .sample(rng)
                    .ln()
            }
        })
        .collect();
    let max = log_gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_gammas.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / sum).collect()
}

/// Integer counts summing to exactly `total`, proportional to `fractions`.
/// Leftover units go to the largest fractional parts, lowest index first on
/// ties.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    // Floors can only overshoot through rounding when fractions sum above 1.
    while assigned > total {
        let q = (0..counts.len())
            .max_by_key(|&q| counts[q])
            .expect("non-empty");
        counts[q] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &q in order.iter().cycle().take(total - assigned) {
        counts[q] += 1;
    }
    counts
}

/// Split `data` across `spec.clients` clients with Dirichlet label skew.
pub fn dirichlet_partition(data: &Dataset, spec: &DirichletSpec) -> Result<Partition> {
    spec.validate()?;
    let mut assignments = vec![Vec::new(); spec.clients];
    for (k, mut members) in data.indices_by_class().into_iter().enumerate() {
        let mut rng = seed::stream(spec.seed, seed::tags::DIRICHLET_CLASS, &[k as u64]);
        let proportions = sample_dirichlet(spec.alpha, spec.clients, &mut rng);
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), &proportions);
        let mut start = 0;
        for (q, c) in counts.into_iter().enumerate() {
            assignments[q].extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    Partition::new(assignments, data.len())
}

/// Per-client class counts: row `q`, column `k - 1` holds the number of
/// class-`k` samples on client `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionReport {
    pub counts: Vec<Vec<usize>>,
}

impl PartitionReport {
    pub fn num_classes(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    /// Largest class share of each client (0 for empty clients).
    pub fn max_class_fractions(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    *row.iter().max().expect("non-empty row") as f64 / n as f64
                }
            })
            .collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.num_classes()];
        for row in &self.counts {
            for (s, c) in sums.iter_mut().zip(row) {
                *s += c;
            }
        }
        sums
    }

    /// CSV with header `client,class_1,...,class_K`; client ids start at 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("client");
        for k in 1..=self.num_classes() {
            out.push_str(&format!(",class_{k}"));
        }
        out.push('\n');
        for (q, row) in self.counts.iter().enumerate() {
            out.push_str(&q.to_string());
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn partition_report(partition: &Partition, data: &Dataset) -> PartitionReport {
    let counts = partition
        .assignments()
        .iter()
        .map(|list| {
            let mut row = vec![0; data.num_classes()];
            for &i in list {
                row[data.label(i) as usize - 1] += 1;
            }
            row
        })
        .collect();
    PartitionReport { counts }
}
