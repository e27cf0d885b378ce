use ndarray::Zip;

use super::distribution::{IntensityDistribution, LabelCondition};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume, NUM_CLASSES};

/// Overall and per-label intensity histograms on shared bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedHistograms {
    pub edges: Vec<f64>,
    pub overall: Vec<f64>,
    pub per_label: [Vec<f64>; NUM_CLASSES],
    pub source_id: String,
}

impl ConditionedHistograms {
    /// True when no voxel carries `label`.
    pub fn is_empty(&self, label: u8) -> bool {
        self.per_label[label as usize].iter().all(|&c| c == 0.0)
    }

    pub fn distribution(&self, condition: LabelCondition) -> Result<IntensityDistribution> {
        let counts = match condition {
            LabelCondition::All => &self.overall,
            LabelCondition::Label(l) => self
                .per_label
                .get(l as usize)
                .ok_or_else(|| Error::validation(format!("label {l} out of range")))?,
        };
        Ok(IntensityDistribution::from_histogram(self.edges.clone(), counts, self.source_id.clone())?
            .with_condition(condition))
    }

    /// Sum over bins of the smaller of the two normalised label histograms:
    /// 0 for disjoint supports, 1 for identical histograms.
    pub fn overlap(&self, a: u8, b: u8) -> f64 {
        let (ha, hb) = (&self.per_label[a as usize], &self.per_label[b as usize]);
        let (ta, tb) = (ha.iter().sum::<f64>(), hb.iter().sum::<f64>());
        if ta == 0.0 || tb == 0.0 {
            return 0.0;
        }
        ha.iter().zip(hb).map(|(x, y)| (x / ta).min(y / tb)).sum()
    }

    /// `bin_lo bin_hi overall background myocardium blood_pool` per bin.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin_lo\tbin_hi\toverall\tbackground\tmyocardium\tblood_pool\n");
        for i in 0..self.overall.len() {
            out.push_str(&format!(
                "{:.6}\t{:.6}\t{}\t{}\t{}\t{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.overall[i],
                self.per_label[0][i],
                self.per_label[1][i],
                self.per_label[2][i]
            ));
        }
        out
    }
}

/// Histograms with `bins` equal-width bins spanning the volume's range.
pub fn label_conditioned_histograms(v: &Volume, l: &LabelVolume, bins: usize) -> Result<ConditionedHistograms> {
    l.check_pairs_with(v)?;
    if bins == 0 {
        return Err(Error::validation("histogram needs at least one bin"));
    }
    let (lo, hi) = crate::volume::min_max(v.data.iter().copied());
    let (lo, hi) = (lo as f64, if hi > lo { hi as f64 } else { lo as f64 + 1.0 });
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut per_label: [Vec<f64>; NUM_CLASSES] = std::array::from_fn(|_| vec![0.0; bins]);
    Zip::from(&v.data).and(&l.data).for_each(|&x, &lab| {
        let b = (((x as f64 - lo) / width) as usize).min(bins - 1);
        per_label[lab as usize][b] += 1.0;
    });
    let overall = (0..bins).map(|b| per_label.iter().map(|h| h[b]).sum()).collect();
    Ok(ConditionedHistograms {
        edges,
        overall,
        per_label,
        source_id: v.id.clone(),
    })
}
