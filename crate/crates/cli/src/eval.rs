//! Sample discovery and metric tables for `dsct eval`.

use std::path::{Path, PathBuf};

use dsct::dataset::tensor::read_as_f64;
use dsct::metrics::{AveragedReport, MetricReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::CliError;

/// Bone and water file stems inside a sample directory.
#[derive(Clone, Debug)]
pub struct ChannelFiles {
    pub f: String,
    pub g: String,
}

impl std::str::FromStr for ChannelFiles {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(',') {
            Some((f, g)) if !f.is_empty() && !g.is_empty() && !g.contains(',') => Ok(ChannelFiles {
                f: f.to_string(),
                g: g.to_string(),
            }),
            _ => Err(format!("expected BONE,WATER file stems, got {s:?}")),
        }
    }
}

impl ChannelFiles {
    fn paths(&self, dir: &Path) -> (PathBuf, PathBuf) {
        (dir.join(format!("{}.tsr", self.f)), dir.join(format!("{}.tsr", self.g)))
    }
}

/// A prediction set: `NAME=DIR`, or a bare `DIR` named after its last component.
#[derive(Clone, Debug)]
pub struct PredSpec {
    pub name: String,
    pub dir: PathBuf,
}

impl std::str::FromStr for PredSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((name, dir)) = s.split_once('=') {
            if name.is_empty() || dir.is_empty() {
                return Err(format!("expected NAME=DIR, got {s:?}"));
            }
            return Ok(PredSpec {
                name: name.to_string(),
                dir: PathBuf::from(dir),
            });
        }
        let dir = PathBuf::from(s);
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| s.to_string());
        Ok(PredSpec { name, dir })
    }
}

/// Relative paths of every directory under `root` holding the bone file, sorted.
pub fn find_samples(root: &Path, files: &ChannelFiles) -> Result<Vec<PathBuf>, CliError> {
    fn walk(root: &Path, rel: &Path, stem: &str, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
        let dir = root.join(rel);
        if dir.join(format!("{stem}.tsr")).is_file() {
            out.push(rel.to_path_buf());
        }
        let mut subdirs = Vec::new();
        let entries = std::fs::read_dir(&dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
            if entry.path().is_dir() {
                subdirs.push(entry.file_name());
            }
        }
        subdirs.sort();
        for name in subdirs {
            walk(root, &rel.join(name), stem, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, Path::new(""), &files.f, &mut out)?;
    if out.is_empty() {
        return Err(CliError::Validation(format!(
            "no {}.tsr found under {}",
            files.f,
            root.display()
        )));
    }
    Ok(out)
}

fn load_pair(dir: &Path, files: &ChannelFiles) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let (fp, gp) = files.paths(dir);
    let (sf, f) = read_as_f64(&fp)?;
    let (sg, g) = read_as_f64(&gp)?;
    if sf != sg || sf.len() != 2 || sf[0] != sf[1] {
        return Err(CliError::Validation(format!(
            "{}: channel shapes {sf:?} and {sg:?} are not one square image",
            dir.display()
        )));
    }
    Ok((f, g))
}

#[derive(Serialize)]
pub struct SampleReport {
    pub model: String,
    pub sample: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Serialize)]
pub struct EvalOutput {
    pub models: Vec<AveragedReport>,
    pub samples: Vec<SampleReport>,
}

pub fn evaluate(
    truth_root: &Path,
    truth_files: &ChannelFiles,
    preds: &[PredSpec],
    pred_files: &ChannelFiles,
) -> Result<EvalOutput, CliError> {
    let samples = find_samples(truth_root, truth_files)?;
    let mut models = Vec::with_capacity(preds.len());
    let mut per_sample = Vec::new();
    for pred in preds {
        let reports: Vec<MetricReport> = samples
            .par_iter()
            .map(|rel| -> Result<MetricReport, CliError> {
                let (tf, tg) = load_pair(&truth_root.join(rel), truth_files)?;
                let (pf, pg) = load_pair(&pred.dir.join(rel), pred_files)?;
                if pf.len() != tf.len() {
                    return Err(CliError::Validation(format!(
                        "{}: prediction and truth sizes differ",
                        rel.display()
                    )));
                }
                Ok(MetricReport::compute(&pf, &pg, &tf, &tg)?)
            })
            .collect::<Result<_, _>>()?;
        models.push(AveragedReport::from_reports(pred.name.clone(), &reports)?);
        per_sample.extend(samples.iter().zip(reports).map(|(rel, report)| SampleReport {
            model: pred.name.clone(),
            sample: rel.to_string_lossy().into_owned(),
            report,
        }));
    }
    Ok(EvalOutput {
        models,
        samples: per_sample,
    })
}
