//! Results CSV and the accuracy-vs-budget report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::read_to_string;

pub const HEADER: &str =
    "run_id,seed,method,cycle,annotation_budget,test_accuracy,mean_sigma_generated,pseudo_label_accuracy,wall_ms";
pub const ABORTED: &str = "# ABORTED";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub cycle: usize,
    pub annotation_budget: usize,
    pub test_accuracy: f64,
    /// Empty when the cycle generated nothing.
    pub mean_sigma_generated: Option<f64>,
    pub pseudo_label_accuracy: Option<f64>,
    pub wall_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.method,
            self.cycle,
            self.annotation_budget,
            self.test_accuracy,
            opt(self.mean_sigma_generated),
            opt(self.pseudo_label_accuracy),
            self.wall_ms
        )
    }

    /// Everything except `run_id`, `method` and `wall_ms`.
    pub fn same_outcome(&self, other: &ResultRow) -> bool {
        self.seed == other.seed
            && self.cycle == other.cycle
            && self.annotation_budget == other.annotation_budget
            && self.test_accuracy.to_bits() == other.test_accuracy.to_bits()
            && self.mean_sigma_generated.map(f64::to_bits) == other.mean_sigma_generated.map(f64::to_bits)
            && self.pseudo_label_accuracy.map(f64::to_bits) == other.pseudo_label_accuracy.map(f64::to_bits)
    }
}

pub fn render(rows: &[ResultRow], aborted: Option<&str>) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    if let Some(msg) = aborted {
        writeln!(s, "{ABORTED}: {}", msg.replace('\n', " ")).unwrap();
    }
    s
}

pub fn parse(path: &Path, text: &str) -> Result<Vec<ResultRow>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(err(1, "missing results header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err(n, format!("expected 9 fields, got {}", f.len())));
        }
        let num = |j: usize| -> Result<f64> { f[j].parse().map_err(|e| err(n, format!("field {j}: {e}"))) };
        let opt_num = |j: usize| -> Result<Option<f64>> { if f[j].is_empty() { Ok(None) } else { num(j).map(Some) } };
        let int = |j: usize| -> Result<u64> { f[j].parse().map_err(|e| err(n, format!("field {j}: {e}"))) };
        rows.push(ResultRow {
            run_id: f[0].to_string(),
            seed: int(1)?,
            method: f[2].to_string(),
            cycle: int(3)? as usize,
            annotation_budget: int(4)? as usize,
            test_accuracy: num(5)?,
            mean_sigma_generated: opt_num(6)?,
            pseudo_label_accuracy: opt_num(7)?,
            wall_ms: int(8)?,
        });
    }
    Ok(rows)
}

pub fn read(path: &Path) -> Result<Vec<ResultRow>> {
    parse(path, &read_to_string(path)?)
}

/// Mean test accuracy per method and cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub cycles: Vec<usize>,
    /// Budget shown for each cycle column (from annotating methods), if any.
    pub budgets: Vec<Option<usize>>,
    pub methods: Vec<(String, Vec<Option<f64>>)>,
    pub improvement: Option<Vec<Option<f64>>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn is_galot(method: &str) -> bool {
    method.starts_with("joint:")
}

fn is_baseline(method: &str) -> bool {
    !method.starts_with("joint") && method != "full"
}

pub fn report(rows: &[ResultRow]) -> Report {
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut budgets: BTreeMap<usize, usize> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.method) {
            order.push(r.method.clone());
        }
        cells.entry((r.method.clone(), r.cycle)).or_default().push(r.test_accuracy);
        if r.annotation_budget > 0 && r.method != "full" {
            budgets.entry(r.cycle).or_insert(r.annotation_budget);
        }
    }
    let mut cycles: Vec<usize> = rows.iter().map(|r| r.cycle).collect();
    cycles.sort_unstable();
    cycles.dedup();
    let methods: Vec<(String, Vec<Option<f64>>)> = order
        .iter()
        .map(|m| (m.clone(), cycles.iter().map(|c| cells.get(&(m.clone(), *c)).map(|v| mean(v))).collect()))
        .collect();
    let best = |pred: fn(&str) -> bool, j: usize| {
        methods
            .iter()
            .filter(|(m, _)| pred(m))
            .filter_map(|(_, v)| v[j])
            .fold(None, |a: Option<f64>, x| Some(a.map_or(x, |a| a.max(x))))
    };
    let improvement = (methods.iter().any(|(m, _)| is_galot(m)) && methods.iter().any(|(m, _)| is_baseline(m))).then(|| {
        (0..cycles.len())
            .map(|j| Some(best(is_galot, j)? - best(is_baseline, j)?))
            .collect()
    });
    Report {
        budgets: cycles.iter().map(|c| budgets.get(c).copied()).collect(),
        cycles,
        methods,
        improvement,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row_mean(v: &[Option<f64>]) -> Option<f64> {
    let xs: Vec<f64> = v.iter().flatten().copied().collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

impl Report {
    /// CSV matrix: one column per cycle (labelled by budget when known), a
    /// trailing per-method mean, and an `Improvement` row.
    pub fn render(&self) -> String {
        let mut s = String::from("method");
        for (c, b) in self.cycles.iter().zip(&self.budgets) {
            match b {
                Some(b) => write!(s, ",{b}").unwrap(),
                None => write!(s, ",cycle{c}").unwrap(),
            }
        }
        s.push_str(",mean\n");
        for (m, v) in &self.methods {
            s.push_str(m);
            for x in v {
                write!(s, ",{}", cell(*x)).unwrap();
            }
            writeln!(s, ",{}", cell(row_mean(v))).unwrap();
        }
        if let Some(imp) = &self.improvement {
            s.push_str("Improvement");
            for x in imp {
                write!(s, ",{}", cell(*x)).unwrap();
            }
            writeln!(s, ",{}", cell(row_mean(imp))).unwrap();
        }
        s
    }
}
