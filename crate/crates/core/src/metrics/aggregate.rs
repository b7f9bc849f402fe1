use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores of one processed utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub noise_name: String,
    pub snr_db: f64,
    pub method: String,
    pub stoi: f64,
    pub fwsnrseg_db: f64,
    /// Filled only from an external scorer's output.
    pub pesq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Stoi,
    Fwsnrseg,
    Pesq,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Stoi => "stoi",
            Metric::Fwsnrseg => "fwsnrseg",
            Metric::Pesq => "pesq",
        }
    }

    pub fn of(self, r: &EvalRecord) -> Option<f64> {
        match self {
            Metric::Stoi => Some(r.stoi),
            Metric::Fwsnrseg => Some(r.fwsnrseg_db),
            Metric::Pesq => r.pesq,
        }
    }
}

/// SNR key with a stable textual form (`-5`, `0`, `2.5`).
fn snr_label(snr: f64) -> String {
    if snr.fract() == 0.0 {
        format!("{}", snr as i64)
    } else {
        format!("{snr}")
    }
}

/// Mean scores by method (rows) and (noise, SNR) condition (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub metric: &'static str,
    pub methods: Vec<String>,
    /// `(noise, snr_db)` in column order: noises alphabetically, SNRs ascending.
    pub conditions: Vec<(String, f64)>,
    /// `cells[method][condition]`; `None` where no record exists.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Mean of each row's populated cells.
    pub averages: Vec<f64>,
}

impl ResultTable {
    pub fn cell(&self, method: &str, noise: &str, snr_db: f64) -> Option<f64> {
        let r = self.methods.iter().position(|m| m == method)?;
        let c = self.conditions.iter().position(|(n, s)| n == noise && *s == snr_db)?;
        self.cells[r][c]
    }

    pub fn average(&self, method: &str) -> Option<f64> {
        let r = self.methods.iter().position(|m| m == method)?;
        Some(self.averages[r])
    }

    /// Two header rows (noise groups, then SNRs) followed by one row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for (n, _) in &self.conditions {
            let _ = write!(out, ",{n}");
        }
        out.push_str(",Average\nsnr_db");
        for (_, s) in &self.conditions {
            let _ = write!(out, ",{}", snr_label(*s));
        }
        out.push_str(",\n");
        for (r, m) in self.methods.iter().enumerate() {
            out.push_str(m);
            for c in &self.cells[r] {
                match c {
                    Some(v) => {
                        let _ = write!(out, ",{v:.4}");
                    }
                    None => out.push(','),
                }
            }
            let _ = writeln!(out, ",{:.4}", self.averages[r]);
        }
        out
    }
}

/// Groups records into a method x (noise, SNR) table of mean `metric` values.
pub fn aggregate(records: &[EvalRecord], metric: Metric) -> Result<ResultTable> {
    if records.is_empty() {
        return Err(Error::DegenerateInput("no evaluation records".into()));
    }
    let mut methods: Vec<String> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let noises: BTreeSet<&str> = records.iter().map(|r| r.noise_name.as_str()).collect();
    let mut conditions = Vec::new();
    for n in noises {
        let mut snrs: Vec<f64> = records.iter().filter(|r| r.noise_name == n).map(|r| r.snr_db).collect();
        snrs.sort_by(f64::total_cmp);
        snrs.dedup();
        conditions.extend(snrs.into_iter().map(|s| (n.to_string(), s)));
    }
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        let Some(v) = metric.of(r) else { continue };
        let row = methods.iter().position(|m| *m == r.method).expect("collected above");
        let col = conditions
            .iter()
            .position(|(n, s)| *n == r.noise_name && *s == r.snr_db)
            .expect("collected above");
        let e = sums.entry((row, col)).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let cells: Vec<Vec<Option<f64>>> = (0..methods.len())
        .map(|r| {
            (0..conditions.len())
                .map(|c| sums.get(&(r, c)).map(|(s, k)| s / *k as f64))
                .collect()
        })
        .collect();
    let averages = cells
        .iter()
        .map(|row| {
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    Ok(ResultTable {
        metric: metric.name(),
        methods,
        conditions,
        cells,
        averages,
    })
}

/// Per-utterance results, columns `id,noise,snr_db,method,stoi,fwsnrseg,pesq`.
pub fn results_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("id,noise,snr_db,method,stoi,fwsnrseg,pesq\n");
    for r in records {
        let pesq = r.pesq.map(|p| format!("{p:.4}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.4},{}",
            r.id,
            r.noise_name,
            snr_label(r.snr_db),
            r.method,
            r.stoi,
            r.fwsnrseg_db,
            pesq
        );
    }
    out
}

/// Reads externally computed PESQ scores, one `id score` pair per line.
pub fn read_pesq_scores(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(score), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Config(format!("{}:{}: expected \"id score\"", path.display(), i + 1)));
        };
        let score: f64 = score
            .parse()
            .map_err(|_| Error::Config(format!("{}:{}: bad score {score:?}", path.display(), i + 1)))?;
        out.insert(id.to_string(), score);
    }
    Ok(out)
}
