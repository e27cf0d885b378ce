//! Overlap and surface-distance metrics, and the per-variant report.

mod edt;

use std::fmt::Write as _;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BLOOD_POOL, MYOCARDIUM};

pub use edt::squared_distance_transform;

/// Dice coefficient. Two empty masks count as perfect agreement.
pub fn dice(a: &Array3<bool>, b: &Array3<bool>) -> Result<f64> {
    check_shapes(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    Zip::from(a).and(b).for_each(|&x, &y| {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    });
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 })
}

fn check_shapes(a: &Array3<bool>, b: &Array3<bool>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!("mask shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Which neighbours decide whether a foreground voxel lies on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    #[default]
    #[serde(rename = "6")]
    Six,
    /// Faces, edges and corners.
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
                    if nonzero == 1 || (self == Connectivity::TwentySix && nonzero > 1) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Foreground voxels with a neighbour that is background or off the grid.
pub fn boundary(mask: &Array3<bool>, connectivity: Connectivity) -> Array3<bool> {
    let (nx, ny, nz) = mask.dim();
    let offsets = connectivity.offsets();
    Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
        mask[[x, y, z]]
            && offsets.iter().any(|d| {
                let p = [x as isize + d[0], y as isize + d[1], z as isize + d[2]];
                let inside = p[0] >= 0
                    && p[1] >= 0
                    && p[2] >= 0
                    && (p[0] as usize) < nx
                    && (p[1] as usize) < ny
                    && (p[2] as usize) < nz;
                !inside || !mask[[p[0] as usize, p[1] as usize, p[2] as usize]]
            })
    })
}

/// Average symmetric boundary distance and Hausdorff distance, in the units
/// of `spacing`. Both are zero for two empty masks; exactly one empty mask is
/// an error rather than a silent number.
pub fn boundary_distances(a: &Array3<bool>, b: &Array3<bool>, spacing: [f64; 3]) -> Result<(f64, f64)> {
    boundary_distances_with(a, b, spacing, Connectivity::Six)
}

pub fn boundary_distances_with(
    a: &Array3<bool>,
    b: &Array3<bool>,
    spacing: [f64; 3],
    connectivity: Connectivity,
) -> Result<(f64, f64)> {
    check_shapes(a, b)?;
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::validation(format!("spacing must be positive, got {spacing:?}")));
    }
    let ba = boundary(a, connectivity);
    let bb = boundary(b, connectivity);
    let ca = ba.iter().filter(|&&v| v).count();
    let cb = bb.iter().filter(|&&v| v).count();
    match (ca, cb) {
        (0, 0) => return Ok((0.0, 0.0)),
        (0, _) | (_, 0) => {
            return Err(Error::EmptyMask(format!(
                "surface distance undefined: {} boundary voxels vs {}",
                ca, cb
            )))
        }
        _ => {}
    }
    let directed = |from: &Array3<bool>, to: &Array3<bool>| -> (f64, f64) {
        let d2 = squared_distance_transform(to, spacing);
        let mut sum = 0.0;
        let mut max = 0.0f64;
        Zip::from(from).and(&d2).for_each(|&f, &d| {
            if f {
                let d = d.sqrt();
                sum += d;
                max = max.max(d);
            }
        });
        (sum, max)
    };
    let (sab, mab) = directed(&ba, &bb);
    let (sba, mba) = directed(&bb, &ba);
    Ok((0.5 * (sab / ca as f64 + sba / cb as f64), mab.max(mba)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Myocardium,
    BloodPool,
}

impl Structure {
    pub const ALL: [Structure; 2] = [Structure::Myocardium, Structure::BloodPool];

    pub fn label(self) -> u8 {
        match self {
            Structure::Myocardium => MYOCARDIUM,
            Structure::BloodPool => BLOOD_POOL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Myocardium => "myocardium",
            Structure::BloodPool => "blood_pool",
        }
    }
}

/// Metrics for one structure in one case. Distances are `None` when exactly
/// one of the two masks is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureMetrics {
    pub structure: Structure,
    pub dice: f64,
    pub adb: Option<f64>,
    pub hausdorff: Option<f64>,
}

impl StructureMetrics {
    pub fn compute(
        pred: &Array3<u8>,
        truth: &Array3<u8>,
        structure: Structure,
        spacing: [f64; 3],
        connectivity: Connectivity,
    ) -> Result<Self> {
        let l = structure.label();
        let a = pred.mapv(|v| v == l);
        let b = truth.mapv(|v| v == l);
        let dice = dice(&a, &b)?;
        let (adb, hausdorff) = match boundary_distances_with(&a, &b, spacing, connectivity) {
            Ok((m, h)) => (Some(m), Some(h)),
            Err(Error::EmptyMask(_)) => (None, None),
            Err(e) => return Err(e),
        };
        Ok(Self { structure, dice, adb, hausdorff })
    }
}

pub const DICE_WEIGHT: f64 = 0.5;
pub const ADB_WEIGHT: f64 = -0.25;
pub const HAUSDORFF_WEIGHT: f64 = -0.03;

/// Sum over the two structures of `0.5 * Dice - 0.25 * ADB - 0.03 * Hausdorff`,
/// with Dice as a fraction and distances in millimetres. A perfect result
/// scores 1.
pub fn overall_score(m: &[StructureMetrics]) -> Result<f64> {
    for s in Structure::ALL {
        if m.iter().filter(|x| x.structure == s).count() != 1 {
            return Err(Error::validation(format!("overall score needs exactly one {} entry", s.as_str())));
        }
    }
    let mut total = 0.0;
    for x in m {
        let (Some(a), Some(h)) = (x.adb, x.hausdorff) else {
            return Err(Error::EmptyMask(format!(
                "overall score undefined: {} distances are missing",
                x.structure.as_str()
            )));
        };
        // Reward minus penalties keeps round-number inputs exact.
        total += DICE_WEIGHT * x.dice - (-ADB_WEIGHT * a + -HAUSDORFF_WEIGHT * h);
    }
    Ok(total)
}

/// Metrics for one test case under one prediction variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub structures: Vec<StructureMetrics>,
    pub overall: Option<f64>,
}

pub fn evaluate_case(
    case_id: &str,
    pred: &Array3<u8>,
    truth: &Array3<u8>,
    spacing: [f64; 3],
    connectivity: Connectivity,
) -> Result<CaseMetrics> {
    if pred.dim() != truth.dim() {
        return Err(Error::validation(format!(
            "{case_id}: prediction shape {:?} does not match labels {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let structures = Structure::ALL
        .iter()
        .map(|&s| StructureMetrics::compute(pred, truth, s, spacing, connectivity))
        .collect::<Result<Vec<_>>>()?;
    let overall = match overall_score(&structures) {
        Ok(v) => Some(v),
        Err(Error::EmptyMask(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(CaseMetrics { case_id: case_id.to_string(), structures, overall })
}

/// Mean and sample standard deviation of the defined values, plus how many
/// were undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub undefined: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        let n = defined.len();
        let mean = if n == 0 { f64::NAN } else { defined.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (defined.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n, undefined }
    }
}

/// One report row: a prediction variant summarised over all test cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub cases: Vec<CaseMetrics>,
}

impl ReportRow {
    pub fn summary(&self, structure: Structure, field: Field) -> Summary {
        Summary::of(self.cases.iter().map(|c| {
            c.structures
                .iter()
                .find(|s| s.structure == structure)
                .and_then(|s| match field {
                    Field::Dice => Some(s.dice),
                    Field::Adb => s.adb,
                    Field::Hausdorff => s.hausdorff,
                })
        }))
    }

    pub fn overall(&self) -> Summary {
        Summary::of(self.cases.iter().map(|c| c.overall))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Dice,
    Adb,
    Hausdorff,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn row(&self, variant: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Tab-separated summary, one line per variant. Undefined distances are
    /// counted in the `*_undefined` columns rather than averaged in.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tcases");
        for s in Structure::ALL {
            for f in ["dice", "adb_mm", "hd_mm"] {
                let _ = write!(out, "\t{0}_{f}_mean\t{0}_{f}_std", s.as_str());
            }
            let _ = write!(out, "\t{}_undefined", s.as_str());
        }
        out.push_str("\toverall_mean\toverall_std\n");
        for r in &self.rows {
            let _ = write!(out, "{}\t{}", r.variant, r.cases.len());
            for s in Structure::ALL {
                for f in [Field::Dice, Field::Adb, Field::Hausdorff] {
                    let m = r.summary(s, f);
                    let _ = write!(out, "\t{:.6}\t{:.6}", m.mean, m.std);
                }
                let _ = write!(out, "\t{}", r.summary(s, Field::Adb).undefined);
            }
            let o = r.overall();
            let _ = writeln!(out, "\t{:.6}\t{:.6}", o.mean, o.std);
        }
        out
    }

    /// Per-case long format: variant, case, structure, dice, adb, hd, overall.
    pub fn cases_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut out = String::from("variant\tcase\tstructure\tdice\tadb_mm\thd_mm\toverall\n");
        for r in &self.rows {
            for c in &r.cases {
                for s in &c.structures {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
                        r.variant,
                        c.case_id,
                        s.structure.as_str(),
                        s.dice,
                        fmt(s.adb),
                        fmt(s.hausdorff),
                        fmt(c.overall)
                    );
                }
            }
        }
        out
    }
}
