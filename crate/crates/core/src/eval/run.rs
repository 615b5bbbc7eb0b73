use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::metrics::{evaluate, EvalReport, GallerySplit};
use crate::data::{frame_matrix, Dataset, SequenceSample};
use crate::error::{Error, Result};
use crate::reid::ReidNet;
use crate::seed;
use crate::synth::Split;
use crate::temporal::stack;

pub const REPORT_FILE: &str = "eval_report.json";
pub const CMC_FILE: &str = "cmc.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

const TAG_EVAL: u64 = 31;

/// Sequence embeddings of every sample, using at most the model's maximum
/// sequence length of leading frames.
pub fn embed_sequences(model: &ReidNet<f32>, samples: &[SequenceSample], points: usize, seed: u64) -> Result<Vec<Array1<f32>>> {
    let max_len = model.temporal.max_len;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let frames = s
                .frames
                .iter()
                .take(max_len)
                .enumerate()
                .map(|(j, f)| frame_matrix(f, points, &mut seed::rng(seed, &[TAG_EVAL, i as u64, j as u64])))
                .collect::<Result<Vec<Array2<f32>>>>()?;
            model.embed(&frames)
        })
        .collect()
}

/// Evaluated embeddings with their labels.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub split: GallerySplit,
    pub samples: Vec<(usize, usize, usize)>,
    pub embeddings: Array2<f32>,
}

/// Embeds the split's sequences with `model` and scores retrieval.
pub fn evaluate_model(model: &ReidNet<f32>, dataset: &Dataset, split: Split, points: usize, seed: u64) -> Result<Evaluation> {
    let samples = dataset.sequences(split)?;
    if samples.is_empty() {
        return Err(Error::invalid("no sequences to evaluate"));
    }
    let embeddings = stack(&embed_sequences(model, &samples, points, seed)?)?;
    let ids: Vec<usize> = samples.iter().map(|s| s.identity).collect();
    let views: Vec<usize> = samples.iter().map(|s| s.view).collect();
    let gallery = GallerySplit::first_per_identity(&ids, &views)?;
    let report = evaluate(&gallery, embeddings.view())?;
    Ok(Evaluation {
        report,
        split: gallery,
        samples: samples.iter().map(|s| (s.identity, s.sequence, s.view)).collect(),
        embeddings,
    })
}

/// Writes the JSON report, the CMC curve and the embeddings under `dir`.
pub fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_string_pretty(&eval.report)?;
    json.push('\n');
    write(dir.join(REPORT_FILE), &json)?;

    let mut cmc = String::from("rank,hit_rate\n");
    for (r, h) in eval.report.cmc.iter().enumerate() {
        writeln!(cmc, "{},{h}", r + 1).expect("writing to a String");
    }
    write(dir.join(CMC_FILE), &cmc)?;

    let mut csv = String::from("sample,identity,sequence,view");
    for c in 0..eval.embeddings.ncols() {
        write!(csv, ",e{c}").expect("writing to a String");
    }
    csv.push('\n');
    for (i, ((id, seq, view), row)) in eval.samples.iter().zip(eval.embeddings.rows()).enumerate() {
        write!(csv, "{i},{id},{seq},{view}").expect("writing to a String");
        for v in row {
            write!(csv, ",{v}").expect("writing to a String");
        }
        csv.push('\n');
    }
    write(dir.join(EMBEDDINGS_FILE), &csv)
}

fn write(path: std::path::PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}
