use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{dice, mean_boundary_distance, pixel_accuracy, wilcoxon_signed_rank};
use crate::imgio::{read_mask, Manifest};
use crate::{BinaryMask, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub dice: f64,
    /// Pixels; the frame diagonal when the prediction is empty.
    pub mean_distance: f64,
    pub accuracy: f64,
}

impl SampleMetrics {
    pub fn compute(id: impl Into<String>, pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        let (h, w) = truth.shape();
        let mean_distance = if pred.count_foreground() == 0 {
            ((h * h + w * w) as f64).sqrt()
        } else {
            mean_boundary_distance(pred, truth)?
        };
        Ok(Self {
            id: id.into(),
            dice: dice(pred, truth)?,
            mean_distance,
            accuracy: pixel_accuracy(pred, truth)?,
        })
    }
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Wilcoxon statistic and p-value per metric; `None` when too few pairs differ.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedComparison {
    pub against: String,
    pub dice: Option<(f64, f64)>,
    pub mean_distance: Option<(f64, f64)>,
    pub accuracy: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub samples: Vec<SampleMetrics>,
    pub dice: Aggregate,
    pub mean_distance: Aggregate,
    pub accuracy: Aggregate,
    pub comparison: Option<PairedComparison>,
}

const HEADER: &str = "id\tdice\tmean_distance\taccuracy";

fn paired(x: &[f64], y: &[f64]) -> Result<Option<(f64, f64)>> {
    match wilcoxon_signed_rank(x, y) {
        Ok(r) => Ok(Some((r.statistic, r.p_value))),
        Err(Error::TooFewSamples(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl EvalReport {
    pub fn from_samples(method: impl Into<String>, samples: Vec<SampleMetrics>) -> Self {
        Self {
            method: method.into(),
            dice: Aggregate::of(samples.iter().map(|s| s.dice)),
            mean_distance: Aggregate::of(samples.iter().map(|s| s.mean_distance)),
            accuracy: Aggregate::of(samples.iter().map(|s| s.accuracy)),
            samples,
            comparison: None,
        }
    }

    fn column(&self, f: impl Fn(&SampleMetrics) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }

    /// Paired signed-rank tests of this report against `other` (same ids, same order).
    pub fn compare_with(&mut self, other: &EvalReport) -> Result<()> {
        let ids = |r: &EvalReport| r.samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        if ids(self) != ids(other) {
            return Err(Error::ManifestMismatch("compared reports cover different samples".into()));
        }
        self.comparison = Some(PairedComparison {
            against: other.method.clone(),
            dice: paired(&self.column(|s| s.dice), &other.column(|s| s.dice))?,
            mean_distance: paired(&self.column(|s| s.mean_distance), &other.column(|s| s.mean_distance))?,
            accuracy: paired(&self.column(|s| s.accuracy), &other.column(|s| s.accuracy))?,
        });
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#method\t{}", self.method);
        let _ = writeln!(s, "{HEADER}");
        for r in &self.samples {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.id, r.dice, r.mean_distance, r.accuracy);
        }
        for (name, a) in [("dice", self.dice), ("mean_distance", self.mean_distance), ("accuracy", self.accuracy)] {
            let _ = writeln!(s, "#aggregate\t{name}\t{}\t{}", a.mean, a.std);
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(s, "#compare\t{}", c.against);
            for (name, v) in [("dice", c.dice), ("mean_distance", c.mean_distance), ("accuracy", c.accuracy)] {
                match v {
                    Some((stat, p)) => {
                        let _ = writeln!(s, "#paired\t{name}\t{stat}\t{p}");
                    }
                    None => {
                        let _ = writeln!(s, "#paired\t{name}\tNA\tNA");
                    }
                }
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::MalformedHeader(format!("report line {line}: {what}"));
        let num = |line: usize, t: &str| t.parse::<f64>().map_err(|_| bad(line, "bad number"));
        let mut method = None;
        let mut samples = Vec::new();
        let mut aggs: HashMap<String, Aggregate> = HashMap::new();
        let mut against = None;
        let mut pairs: HashMap<String, Option<(f64, f64)>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let f: Vec<&str> = line.split('\t').collect();
            match f[0] {
                "#method" if f.len() == 2 => method = Some(f[1].to_owned()),
                "#aggregate" if f.len() == 4 => {
                    aggs.insert(f[1].to_owned(), Aggregate { mean: num(n, f[2])?, std: num(n, f[3])? });
                }
                "#compare" if f.len() == 2 => against = Some(f[1].to_owned()),
                "#paired" if f.len() == 4 => {
                    let v = if f[2] == "NA" { None } else { Some((num(n, f[2])?, num(n, f[3])?)) };
                    pairs.insert(f[1].to_owned(), v);
                }
                "id" if line == HEADER => {}
                _ if !f[0].starts_with('#') && f.len() == 4 => samples.push(SampleMetrics {
                    id: f[0].to_owned(),
                    dice: num(n, f[1])?,
                    mean_distance: num(n, f[2])?,
                    accuracy: num(n, f[3])?,
                }),
                _ => return Err(bad(n, "unrecognised line")),
            }
        }
        let agg = |k: &str| aggs.get(k).copied().ok_or_else(|| Error::MalformedHeader(format!("report lacks {k} aggregate")));
        let comparison = match against {
            Some(against) => {
                let get = |k: &str| pairs.get(k).copied().ok_or_else(|| Error::MalformedHeader(format!("report lacks paired {k}")));
                Some(PairedComparison {
                    against,
                    dice: get("dice")?,
                    mean_distance: get("mean_distance")?,
                    accuracy: get("accuracy")?,
                })
            }
            None => None,
        };
        Ok(Self {
            method: method.ok_or_else(|| Error::MalformedHeader("report lacks #method".into()))?,
            samples,
            dice: agg("dice")?,
            mean_distance: agg("mean_distance")?,
            accuracy: agg("accuracy")?,
            comparison,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Human-readable summary in the layout of a results table.
    pub fn summary_table(&self) -> String {
        let p = |v: Option<(f64, f64)>| v.map_or("-".to_owned(), |(_, p)| format!("{p:.3e}"));
        let c = self.comparison.as_ref();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>18} {:>10} {:>18} {:>10} {:>20} {:>10}",
            "method", "dice mean±std", "p", "mean dist ±std", "p", "accuracy mean±std", "p"
        );
        let _ = writeln!(
            s,
            "{:<14} {:>18} {:>10} {:>18} {:>10} {:>20} {:>10}",
            self.method,
            format!("{:.3} ± {:.3}", self.dice.mean, self.dice.std),
            p(c.and_then(|c| c.dice)),
            format!("{:.2} ± {:.2}", self.mean_distance.mean, self.mean_distance.std),
            p(c.and_then(|c| c.mean_distance)),
            format!("{:.4} ± {:.4}", self.accuracy.mean, self.accuracy.std),
            p(c.and_then(|c| c.accuracy)),
        );
        if let Some(c) = c {
            let _ = writeln!(s, "(p-values: paired Wilcoxon signed-rank vs {})", c.against);
        }
        s
    }
}

/// Metrics for in-memory `(id, prediction, truth)` triples.
pub fn evaluate_masks<'a>(
    method: &str,
    items: impl IntoIterator<Item = (&'a str, &'a BinaryMask, &'a BinaryMask)>,
) -> Result<EvalReport> {
    let samples = items
        .into_iter()
        .map(|(id, pred, truth)| SampleMetrics::compute(id, pred, truth))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_samples(method, samples))
}

/// Scores every mask listed in `pred` against the record with the same id in
/// `truth`.
pub fn evaluate(method: &str, pred: &Manifest, truth: &Manifest) -> Result<EvalReport> {
    if pred.records.is_empty() {
        return Err(Error::ManifestMismatch("prediction manifest is empty".into()));
    }
    let by_id: HashMap<&str, _> = truth.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut samples = Vec::with_capacity(pred.records.len());
    for p in &pred.records {
        let t = by_id
            .get(p.id.as_str())
            .ok_or_else(|| Error::ManifestMismatch(format!("id {} has no ground truth", p.id)))?;
        let pm = read_mask(&pred.resolve(&p.mask_path))?;
        let tm = read_mask(&truth.resolve(&t.mask_path))?;
        samples.push(SampleMetrics::compute(p.id.clone(), &pm, &tm)?);
    }
    Ok(EvalReport::from_samples(method, samples))
}
