//! Domain analysis: pairwise Wasserstein distances, clustering and the style library.

use cardioseg::domain::{
    build_style_library, hierarchical_cluster, label_conditioned_histograms, pairwise_distances, sample_distribution,
};
use cardioseg::rng::{derive_seed, tag};
use cardioseg::volume::{BACKGROUND, BLOOD_POOL, MYOCARDIUM};
use cardioseg::Result;
use rayon::prelude::*;

use super::data::{cases, load, Role};
use super::{write_file, write_json, Pipeline, Stage, StageOutput};

pub const LIBRARY: &str = "library.json";

pub(super) fn run(p: &Pipeline) -> Result<StageOutput> {
    let cfg = &p.cfg.analysis;
    let dir = p.stage_dir(Stage::Analyze);
    let cases = cases(p)?;
    let loaded = cases
        .par_iter()
        .map(|c| load(p, c))
        .collect::<Result<Vec<_>>>()?;
    let dists = loaded
        .iter()
        .enumerate()
        .map(|(i, (v, _))| sample_distribution(v, None, cfg.subsample, derive_seed(p.cfg.seed, &[tag("analyze"), i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let matrix = pairwise_distances(&dists)?;
    let dend = hierarchical_cluster(&matrix, cfg.linkage)?;
    let clusters = dend.cut(cfg.clusters)?;
    let ids = |role: Role| cases.iter().filter(|c| c.role == role).map(|c| c.id.clone()).collect::<Vec<_>>();
    let mut library = build_style_library(&dend, &matrix, cfg.clusters, &ids(Role::Train), &ids(Role::Test))?;
    for c in &cases {
        if library.contains(&c.id) {
            library.record_inventory(&c.id, c.shape)?;
        }
    }

    let mut files = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, text.as_bytes())?;
        files.push(path);
        Ok(())
    };
    put("distances.tsv", matrix.to_tsv())?;
    put("dendrogram.tsv", dend.to_tsv())?;
    let mut table = String::from("id\trole\tcluster\tin_library\n");
    for (c, k) in cases.iter().zip(&clusters) {
        let role = match c.role {
            Role::Train => "train",
            Role::Test => "test",
        };
        table.push_str(&format!("{}\t{role}\t{k}\t{}\n", c.id, library.contains(&c.id)));
    }
    put("clusters.tsv", table)?;

    if p.diagnostics {
        let mut overlap = String::from("id\tmyocardium_background\tmyocardium_blood_pool\n");
        for (c, (v, l)) in cases.iter().zip(&loaded) {
            let Some(l) = l else { continue };
            let h = label_conditioned_histograms(v, l, cfg.histogram_bins)?;
            overlap.push_str(&format!(
                "{}\t{:.6}\t{:.6}\n",
                c.id,
                h.overlap(MYOCARDIUM, BACKGROUND),
                h.overlap(MYOCARDIUM, BLOOD_POOL)
            ));
            put(&format!("histograms/{}.tsv", c.id), h.to_tsv())?;
        }
        put("overlap.tsv", overlap)?;
    }
    let lib_path = dir.join(LIBRARY);
    write_json(&lib_path, &library)?;
    files.push(lib_path);

    let test_clusters: std::collections::BTreeSet<usize> = cases
        .iter()
        .zip(&clusters)
        .filter(|(c, _)| c.role == Role::Test)
        .map(|(_, &k)| k)
        .collect();
    log::info!(
        "analyze: library of {} training samples; test samples span {} cluster(s)",
        library.members.len(),
        test_clusters.len()
    );
    Ok(StageOutput {
        files,
        summary: serde_json::json!({
            "library": library.members,
            "test_clusters": test_clusters.len(),
            "separation_height": dend.separation_height(cfg.clusters),
        }),
    })
}
