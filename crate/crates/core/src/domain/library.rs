use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cluster::{DistanceMatrix, Dendrogram};
use crate::error::{Error, Result};
use crate::volume::Plane;

/// Reference to one 2D slice of a library volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceRef {
    pub plane: Plane,
    pub index: usize,
}

/// Training samples whose appearance defines the target style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleLibrary {
    pub members: Vec<String>,
    pub inventories: BTreeMap<String, Vec<SliceRef>>,
    pub k: usize,
    /// Mean distance from the library to the test samples.
    pub mean_test_distance: f64,
}

impl StyleLibrary {
    /// Lists every slice of a member volume along all three planes.
    pub fn record_inventory(&mut self, id: &str, shape: [usize; 3]) -> Result<()> {
        if !self.members.iter().any(|m| m == id) {
            return Err(Error::Library(format!("{id} is not a library member")));
        }
        let slices = Plane::ALL
            .iter()
            .flat_map(|&plane| (0..shape[plane.normal_axis()]).map(move |index| SliceRef { plane, index }))
            .collect();
        self.inventories.insert(id.to_string(), slices);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.iter().any(|m| m == id)
    }
}

/// Cuts the dendrogram into `k` clusters and keeps the training-only cluster
/// that serves as the style library. With several candidates the largest wins,
/// then the one farther (on average) from the test samples, then the one whose
/// first leaf comes first.
pub fn build_style_library(
    dend: &Dendrogram,
    distances: &DistanceMatrix,
    k: usize,
    train_ids: &[String],
    test_ids: &[String],
) -> Result<StyleLibrary> {
    if dend.leaves != distances.ids {
        return Err(Error::validation("dendrogram leaves and distance matrix ids differ"));
    }
    let index = |id: &String| {
        dend.leaves
            .iter()
            .position(|l| l == id)
            .ok_or_else(|| Error::validation(format!("sample {id} is not a dendrogram leaf")))
    };
    let train: Vec<usize> = train_ids.iter().map(index).collect::<Result<_>>()?;
    let test: Vec<usize> = test_ids.iter().map(index).collect::<Result<_>>()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Library("need at least one training and one test sample".into()));
    }
    if let Some(id) = train_ids.iter().find(|id| test_ids.contains(id)) {
        return Err(Error::Library(format!("{id} is listed as both training and test sample")));
    }

    let labels = dend.cut(k)?;
    if dend.separation_height(k).is_some_and(|h| h <= 0.0) {
        return Err(Error::Library(format!(
            "cutting at k = {k} separates samples at distance 0; the samples are indistinguishable, try a smaller k"
        )));
    }
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for g in 0..groups {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
        if members.iter().any(|i| test.contains(i)) || !members.iter().any(|i| train.contains(i)) {
            continue;
        }
        let members: Vec<usize> = members.into_iter().filter(|i| train.contains(i)).collect();
        let mean = members
            .iter()
            .flat_map(|&i| test.iter().map(move |&j| distances.get(i, j)))
            .sum::<f64>()
            / (members.len() * test.len()) as f64;
        let better = match &best {
            None => true,
            Some((size, d, _)) => members.len() > *size || (members.len() == *size && mean > *d),
        };
        if better {
            best = Some((members.len(), mean, members));
        }
    }
    let Some((_, mean_test_distance, members)) = best else {
        return Err(Error::Library(format!(
            "no cluster at k = {k} contains training samples only; try a different cluster count"
        )));
    };
    Ok(StyleLibrary {
        members: members.into_iter().map(|i| dend.leaves[i].clone()).collect(),
        inventories: BTreeMap::new(),
        k,
        mean_test_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{hierarchical_cluster, pairwise_distances, IntensityDistribution, Linkage};

    fn setup(points: &[(&str, f64)]) -> (DistanceMatrix, Dendrogram) {
        let dists: Vec<_> = points
            .iter()
            .map(|(id, x)| IntensityDistribution::from_samples(vec![*x], *id).unwrap())
            .collect();
        let m = pairwise_distances(&dists).unwrap();
        let d = hierarchical_cluster(&m, Linkage::Average).unwrap();
        (m, d)
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn picks_the_training_only_cluster() {
        let (m, d) = setup(&[("a1", 0.0), ("b1", 5.0), ("a2", 0.2), ("t1", 5.1), ("b2", 4.9), ("t2", 5.2)]);
        let lib = build_style_library(&d, &m, 2, &ids(&["a1", "a2", "b1", "b2"]), &ids(&["t1", "t2"])).unwrap();
        assert_eq!(lib.members, ids(&["a1", "a2"]));
        assert!(lib.mean_test_distance > 4.0);
    }

    #[test]
    fn identical_samples_cannot_be_separated() {
        let (m, d) = setup(&[("a", 1.0), ("b", 1.0), ("t", 1.0)]);
        let err = build_style_library(&d, &m, 2, &ids(&["a", "b"]), &ids(&["t"]));
        assert!(matches!(err, Err(Error::Library(_))));
    }

    #[test]
    fn mixed_clusters_give_a_library_error() {
        let (m, d) = setup(&[("a", 0.0), ("t", 0.1), ("b", 9.0), ("u", 9.1)]);
        let err = build_style_library(&d, &m, 2, &ids(&["a", "b"]), &ids(&["t", "u"]));
        assert!(matches!(err, Err(Error::Library(_))));
    }

    #[test]
    fn largest_candidate_wins() {
        let (m, d) = setup(&[("a", 0.0), ("b", 0.1), ("c", 20.0), ("t", 10.0)]);
        let lib = build_style_library(&d, &m, 3, &ids(&["a", "b", "c"]), &ids(&["t"])).unwrap();
        assert_eq!(lib.members, ids(&["a", "b"]));
    }

    #[test]
    fn ten_plus_ten_layout_never_admits_a_test_sample() {
        let mut points: Vec<(String, f64)> = Vec::new();
        for i in 0..10 {
            points.push((format!("train{i}"), if i < 6 { i as f64 * 0.05 } else { 3.0 + i as f64 * 0.05 }));
            points.push((format!("test{i}"), 3.1 + i as f64 * 0.04));
        }
        let refs: Vec<(&str, f64)> = points.iter().map(|(s, x)| (s.as_str(), *x)).collect();
        let (m, d) = setup(&refs);
        let train: Vec<String> = (0..10).map(|i| format!("train{i}")).collect();
        let test: Vec<String> = (0..10).map(|i| format!("test{i}")).collect();
        let lib = build_style_library(&d, &m, 2, &train, &test).unwrap();
        assert!(lib.members.iter().all(|m| !test.contains(m)));
        assert_eq!(lib.members, train[..6].to_vec());
    }

    #[test]
    fn inventory_covers_every_plane() {
        let (m, d) = setup(&[("a", 0.0), ("t", 3.0)]);
        let mut lib = build_style_library(&d, &m, 2, &ids(&["a"]), &ids(&["t"])).unwrap();
        lib.record_inventory("a", [2, 3, 4]).unwrap();
        assert_eq!(lib.inventories["a"].len(), 2 + 3 + 4);
        assert!(lib.record_inventory("t", [2, 3, 4]).is_err());
    }
}
