use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, BootstrapCI, ClassReport};
use crate::error::{Error, Result};
use crate::stats::{mean, std_dev};

/// Mean ± SD of a set of values with a bootstrap CI of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci: BootstrapCI,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class_id: u32,
    pub name: String,
    /// Dice over the subjects where it is defined.
    pub dice: Option<Aggregate>,
    pub mean_assd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub subjects: usize,
    pub bootstrap_method: String,
    pub classes: Vec<ClassSummary>,
    /// Over the per-class mean Dice values.
    pub macro_over_classes: Option<Aggregate>,
    /// Over the per-subject macro Dice values.
    pub macro_over_subjects: Option<Aggregate>,
}

fn aggregate(values: &[f64], iterations: usize, level: f64, seed: u64) -> Result<Option<Aggregate>> {
    if values.is_empty() {
        return Ok(None);
    }
    let ci = bootstrap_ci(values, iterations, level, seed)?;
    Ok(Some(Aggregate { n: values.len(), mean: ci.mean, sd: std_dev(values), ci }))
}

/// Aggregates per-subject reports that share one class list.
pub fn summarize(reports: &[ClassReport], iterations: usize, level: f64, seed: u64) -> Result<EvalSummary> {
    let first = reports.first().ok_or_else(|| Error::invalid("no reports to summarize"))?;
    let ids: Vec<u32> = first.classes.iter().map(|c| c.class_id).collect();
    for r in reports {
        if !r.classes.iter().map(|c| c.class_id).eq(ids.iter().copied()) {
            return Err(Error::invalid("reports disagree on the class list"));
        }
    }
    let mut classes = Vec::with_capacity(ids.len());
    let mut class_means = Vec::new();
    for (ci, c) in first.classes.iter().enumerate() {
        let dice: Vec<f64> = reports.iter().filter_map(|r| r.classes[ci].dice).collect();
        let assd: Vec<f64> = reports.iter().filter_map(|r| r.classes[ci].assd).collect();
        let agg = aggregate(&dice, iterations, level, seed)?;
        if let Some(a) = &agg {
            class_means.push(a.mean);
        }
        classes.push(ClassSummary {
            class_id: c.class_id,
            name: c.name.clone(),
            dice: agg,
            mean_assd: (!assd.is_empty()).then(|| mean(&assd)),
        });
    }
    let per_subject: Vec<f64> = reports.iter().filter_map(|r| r.macro_dice).collect();
    Ok(EvalSummary {
        subjects: reports.len(),
        bootstrap_method: super::BOOTSTRAP_METHOD.to_string(),
        classes,
        macro_over_classes: aggregate(&class_means, iterations, level, seed)?,
        macro_over_subjects: aggregate(&per_subject, iterations, level, seed)?,
    })
}
