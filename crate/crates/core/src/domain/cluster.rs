use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distribution::{wasserstein1, IntensityDistribution};
use crate::error::{Error, Result};

/// Symmetric matrix of pairwise distances with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub ids: Vec<String>,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation(format!("distance matrix must be {n}x{n}")));
        }
        let d: Vec<f64> = rows.into_iter().flatten().collect();
        let m = Self { ids, d };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(Error::validation(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::validation(format!("entry ({i},{j}) = {v} is not a finite distance")));
                }
                if v != self.get(j, i) {
                    return Err(Error::validation(format!(
                        "distance matrix is not symmetric at ({i},{j}): {v} vs {}",
                        self.get(j, i)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.len() + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.len().max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// Tab-separated table with a header row of ids.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("id\t{}\n", self.ids.join("\t"));
        for (i, id) in self.ids.iter().enumerate() {
            let row: Vec<String> = (0..self.len()).map(|j| format!("{:.9}", self.get(i, j))).collect();
            out.push_str(&format!("{id}\t{}\n", row.join("\t")));
        }
        out
    }
}

/// All pairwise 1-Wasserstein distances.
pub fn pairwise_distances(dists: &[IntensityDistribution]) -> Result<DistanceMatrix> {
    let n = dists.len();
    if n < 2 {
        return Err(Error::validation(format!(
            "pairwise distances need at least 2 distributions, got {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| wasserstein1(&dists[i], &dists[j]))
        .collect();
    let mut rows = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        rows[i][j] = v;
        rows[j][i] = v;
    }
    DistanceMatrix::new(dists.iter().map(|d| d.source_id.clone()).collect(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

/// One agglomeration step. Leaves are `0..n`; the cluster formed by merge `s`
/// has id `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Flat cluster label per leaf after cutting into `k` clusters. Labels are
    /// numbered by first appearance in leaf order.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.leaves.len();
        if k == 0 || k > n {
            return Err(Error::validation(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        for (s, m) in self.merges.iter().take(n - k).enumerate() {
            let id = n + s;
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra] = id;
            parent[rb] = id;
        }
        let mut labels = Vec::with_capacity(n);
        let mut seen: Vec<usize> = Vec::new();
        for leaf in 0..n {
            let root = find(&mut parent, leaf);
            let label = match seen.iter().position(|&r| r == root) {
                Some(l) => l,
                None => {
                    seen.push(root);
                    seen.len() - 1
                }
            };
            labels.push(label);
        }
        Ok(labels)
    }

    /// Height of the merge that would join the last two groups of a `k`-cut.
    pub fn separation_height(&self, k: usize) -> Option<f64> {
        let n = self.leaves.len();
        (k >= 2 && k <= n).then(|| self.merges[n - k].height)
    }

    /// One line per merge: `a b height size`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("a\tb\theight\tsize\n");
        for m in &self.merges {
            out.push_str(&format!("{}\t{}\t{:.9}\t{}\n", m.a, m.b, m.height, m.size));
        }
        out
    }
}

/// Agglomerative clustering with Lance-Williams updates. Among equally close
/// pairs the one whose (smallest leaf, smallest leaf) indices sort first is merged.
pub fn hierarchical_cluster(m: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    m.validate()?;
    let n = m.len();
    if n < 2 {
        return Err(Error::validation(format!("clustering needs at least 2 samples, got {n}")));
    }
    struct Cluster {
        id: usize,
        rep: usize,
        size: usize,
    }
    let mut active: Vec<Cluster> = (0..n).map(|i| Cluster { id: i, rep: i, size: 1 }).collect();
    let mut d: Vec<Vec<f64>> = m.rows();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let dist = d[i][j];
                let key = {
                    let (a, b) = (active[i].rep, active[j].rep);
                    (a.min(b), a.max(b))
                };
                let better = match best {
                    None => true,
                    Some((bd, bk, _, _)) => dist < bd || (dist == bd && key < bk),
                };
                if better {
                    best = Some((dist, key, i, j));
                }
            }
        }
        let (height, _, i, j) = best.expect("at least two active clusters");
        let (si, sj) = (active[i].size as f64, active[j].size as f64);
        let merged_row: Vec<f64> = (0..active.len())
            .map(|t| match linkage {
                Linkage::Single => d[i][t].min(d[j][t]),
                Linkage::Complete => d[i][t].max(d[j][t]),
                Linkage::Average => (si * d[i][t] + sj * d[j][t]) / (si + sj),
            })
            .collect();
        let (a, b) = (active[i].id.min(active[j].id), active[i].id.max(active[j].id));
        merges.push(Merge {
            a,
            b,
            height,
            size: active[i].size + active[j].size,
        });
        // Replace cluster i by the merge, drop cluster j.
        for t in 0..active.len() {
            d[i][t] = merged_row[t];
            d[t][i] = merged_row[t];
        }
        d[i][i] = 0.0;
        active[i] = Cluster {
            id: n + step,
            rep: active[i].rep.min(active[j].rep),
            size: active[i].size + active[j].size,
        };
        active.remove(j);
        d.remove(j);
        for row in d.iter_mut() {
            row.remove(j);
        }
    }
    Ok(Dendrogram {
        leaves: m.ids.clone(),
        merges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    use crate::oracles;

    fn point_masses(xs: &[f64]) -> Vec<IntensityDistribution> {
        xs.iter()
            .enumerate()
            .map(|(i, &x)| IntensityDistribution::from_samples(vec![x], format!("s{i}")).unwrap())
            .collect()
    }

    #[test]
    fn point_mass_matrix() {
        let m = pairwise_distances(&point_masses(&[0.0, 1.0, 3.0])).unwrap();
        assert_eq!(m.rows(), vec![vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 2.0], vec![3.0, 2.0, 0.0]]);
        let same = pairwise_distances(&point_masses(&[4.0, 4.0])).unwrap();
        assert_eq!(same.rows(), vec![vec![0.0; 2]; 2]);
        assert!(pairwise_distances(&point_masses(&[1.0])).is_err());
    }

    #[test]
    fn two_leaves_merge_once() {
        let m = pairwise_distances(&point_masses(&[0.0, 2.5])).unwrap();
        let d = hierarchical_cluster(&m, Linkage::Average).unwrap();
        assert_eq!(d.merges, vec![Merge { a: 0, b: 1, height: 2.5, size: 2 }]);
    }

    #[test]
    fn tight_groups_split_at_the_top_under_every_linkage() {
        let m = pairwise_distances(&point_masses(&[0.0, 10.0, 0.1, 10.1])).unwrap();
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let d = hierarchical_cluster(&m, linkage).unwrap();
            assert_eq!(d.cut(2).unwrap(), vec![0, 1, 0, 1], "{linkage:?}");
            assert!(d.merges.windows(2).all(|w| w[0].height <= w[1].height));
        }
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let err = DistanceMatrix::new(vec!["a".into(), "b".into()], vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        let m = pairwise_distances(&point_masses(&[0.0, 1.0, 2.0])).unwrap();
        let d = hierarchical_cluster(&m, Linkage::Single).unwrap();
        assert_eq!((d.merges[0].a, d.merges[0].b), (0, 1));
    }

    fn random_matrix(n: usize, seed: u64) -> DistanceMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(0.1..10.0);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        DistanceMatrix::new((0..n).map(|i| format!("s{i}")).collect(), rows).unwrap()
    }

    #[test]
    fn single_linkage_follows_the_minimum_spanning_tree() {
        for seed in 0..20 {
            let m = random_matrix(4, seed);
            let d = hierarchical_cluster(&m, Linkage::Single).unwrap();
            let heights: Vec<f64> = d.merges.iter().map(|m| m.height).collect();
            assert_eq!(heights, oracles::mst_weights(&m.rows()));
        }
    }

    fn partition(d: &Dendrogram, k: usize) -> BTreeSet<BTreeSet<String>> {
        let labels = d.cut(k).unwrap();
        let groups = labels.iter().max().unwrap() + 1;
        (0..groups)
            .map(|g| {
                labels
                    .iter()
                    .zip(&d.leaves)
                    .filter(|(l, _)| **l == g)
                    .map(|(_, id)| id.clone())
                    .collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn partitions_are_permutation_invariant(n in 2usize..9, seed in any::<u64>(), link in 0usize..3) {
            let linkage = [Linkage::Average, Linkage::Complete, Linkage::Single][link];
            let m = random_matrix(n, seed);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
            let rows = m.rows();
            let shuffled = DistanceMatrix::new(
                order.iter().map(|&i| m.ids[i].clone()).collect(),
                order.iter().map(|&i| order.iter().map(|&j| rows[i][j]).collect()).collect(),
            ).unwrap();
            let a = hierarchical_cluster(&m, linkage).unwrap();
            let b = hierarchical_cluster(&shuffled, linkage).unwrap();
            prop_assert_eq!(a.merges.len(), n - 1);
            for k in 1..=n {
                prop_assert_eq!(partition(&a, k), partition(&b, k));
            }
        }

        #[test]
        fn triangle_inequality_on_random_samples(
            a in prop::collection::vec(-3.0f64..3.0, 1..8),
            b in prop::collection::vec(-3.0f64..3.0, 1..8),
            c in prop::collection::vec(-3.0f64..3.0, 1..8),
        ) {
            let ds: Vec<IntensityDistribution> = [a, b, c].into_iter().enumerate()
                .map(|(i, v)| IntensityDistribution::from_samples(v, format!("d{i}")).unwrap())
                .collect();
            let m = pairwise_distances(&ds).unwrap();
            for i in 0..3 { for j in 0..3 { for k in 0..3 {
                prop_assert!(m.get(i, j) <= m.get(i, k) + m.get(k, j) + 1e-12);
            }}}
        }
    }
}
