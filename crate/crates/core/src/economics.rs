//! Effort-accuracy model: how many expert person-hours an achieved accuracy
//! is worth, given exponential decay of the remaining error with effort.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EconomicsError {
    #[error("invalid effort model: need 0 < epsilon < q0 <= 1 (q0 = {q0}, epsilon = {epsilon})")]
    InvalidModel { q0: f64, epsilon: f64 },
    #[error("accuracy {accuracy} is beyond the operational maximum {max}")]
    BeyondOperationalMaximum { accuracy: f64, max: f64 },
    #[error("accuracy {accuracy} is below the starting accuracy {min}")]
    BelowStart { accuracy: f64, min: f64 },
    #[error("negative effort {0}")]
    NegativeEffort(f64),
    #[error("task table: {0}")]
    Table(String),
}

/// Remaining error `q(H) = q0 * exp(-k H)`, with `k` calibrated so that the
/// full effort `H_tot` brings the error down to `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortModel {
    q0: f64,
    epsilon: f64,
}

impl Default for EffortModel {
    fn default() -> Self {
        Self { q0: 1.0, epsilon: 1e-3 }
    }
}

impl EffortModel {
    pub fn new(q0: f64, epsilon: f64) -> Result<Self, EconomicsError> {
        if !(epsilon > 0.0 && epsilon < q0 && q0 <= 1.0) {
            return Err(EconomicsError::InvalidModel { q0, epsilon });
        }
        Ok(Self { q0, epsilon })
    }

    pub fn q0(&self) -> f64 {
        self.q0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The decay rate `k` for a task whose full effort is `h_tot` hours.
    pub fn decay_rate(&self, h_tot: f64) -> f64 {
        (self.q0 / self.epsilon).ln() / h_tot
    }

    pub fn remaining_error(&self, hours: f64, h_tot: f64) -> Result<f64, EconomicsError> {
        if hours < 0.0 {
            return Err(EconomicsError::NegativeEffort(hours));
        }
        Ok(self.q0 * (-self.decay_rate(h_tot) * hours).exp())
    }

    /// Share of the full effort needed to reach accuracy `a`:
    /// `ln(q0 / (1 - a)) / ln(q0 / epsilon)`.
    pub fn effort_ratio(&self, a: f64) -> Result<f64, EconomicsError> {
        let max = 1.0 - self.epsilon;
        if a > max + 1e-12 {
            return Err(EconomicsError::BeyondOperationalMaximum { accuracy: a, max });
        }
        let min = 1.0 - self.q0;
        if a < min - 1e-12 {
            return Err(EconomicsError::BelowStart { accuracy: a, min });
        }
        let ratio = (self.q0 / (1.0 - a)).ln() / (self.q0 / self.epsilon).ln();
        Ok(ratio.clamp(0.0, 1.0))
    }

    pub fn effort_hours(&self, a: f64, h_tot: f64) -> Result<f64, EconomicsError> {
        Ok(self.effort_ratio(a)? * h_tot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Achieved {
    Accuracy(f64),
    /// Infeasible by hand; no valuation.
    MachineOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Person-hours for near-perfect manual completion.
    pub h_tot: Option<u64>,
    pub achieved: Achieved,
    /// Rows sharing a group get a subtotal.
    pub group: Option<String>,
    /// The accuracy is an assumption rather than a measurement.
    pub assumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskValuation {
    pub name: String,
    pub h_tot: Option<u64>,
    pub accuracy: Option<f64>,
    pub effort_ratio: Option<f64>,
    pub valuation: Option<u64>,
    pub machine_only: bool,
    pub assumed: bool,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtotal {
    pub group: String,
    pub h_tot: u64,
    pub valuation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationTable {
    pub rows: Vec<TaskValuation>,
    pub subtotals: Vec<Subtotal>,
    pub total_h_tot: u64,
    pub total_valuation: u64,
}

fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale + 0.5 + 1e-9).floor() / scale
}

/// Values every task. The effort ratio is rounded half-up to
/// `ratio_decimals` places when given (the table shows three), each
/// valuation is `round(H_tot * ratio)`, and subtotals and the grand total
/// are sums of the rounded rows.
pub fn build_valuation_table(
    tasks: &[TaskSpec],
    model: &EffortModel,
    ratio_decimals: Option<u32>,
) -> Result<ValuationTable, EconomicsError> {
    let mut rows = Vec::with_capacity(tasks.len());
    for t in tasks {
        let row = match t.achieved {
            Achieved::MachineOnly => TaskValuation {
                name: t.name.clone(),
                h_tot: t.h_tot,
                accuracy: None,
                effort_ratio: None,
                valuation: None,
                machine_only: true,
                assumed: t.assumed,
                group: t.group.clone(),
            },
            Achieved::Accuracy(a) => {
                let h = t.h_tot.ok_or_else(|| EconomicsError::Table(format!("task `{}` lacks h_tot", t.name)))?;
                let raw = model.effort_ratio(a)?;
                let ratio = ratio_decimals.map_or(raw, |d| round_half_up(raw, d));
                TaskValuation {
                    name: t.name.clone(),
                    h_tot: Some(h),
                    accuracy: Some(a),
                    effort_ratio: Some(ratio),
                    valuation: Some(round_half_up(h as f64 * ratio, 0) as u64),
                    machine_only: false,
                    assumed: t.assumed,
                    group: t.group.clone(),
                }
            }
        };
        rows.push(row);
    }
    let mut subtotals: Vec<Subtotal> = Vec::new();
    for r in &rows {
        let Some(g) = &r.group else { continue };
        let idx = match subtotals.iter().position(|s| &s.group == g) {
            Some(i) => i,
            None => {
                subtotals.push(Subtotal { group: g.clone(), h_tot: 0, valuation: 0 });
                subtotals.len() - 1
            }
        };
        subtotals[idx].h_tot += r.h_tot.unwrap_or(0);
        subtotals[idx].valuation += r.valuation.unwrap_or(0);
    }
    Ok(ValuationTable {
        total_h_tot: rows.iter().filter_map(|r| r.h_tot).sum(),
        total_valuation: rows.iter().filter_map(|r| r.valuation).sum(),
        rows,
        subtotals,
    })
}

#[derive(Debug, Deserialize)]
struct TaskRow {
    task: String,
    #[serde(default)]
    h_tot: Option<String>,
    accuracy: String,
    #[serde(default)]
    group: Option<String>,
    #[serde(default)]
    assumed: Option<String>,
}

/// Reads tasks from CSV with header `task,h_tot,accuracy[,group][,assumed]`.
/// `accuracy` is a fraction, a percentage (`93.4%`), or `MACHINE`;
/// `h_tot` may contain thousands separators.
pub fn parse_tasks(csv_text: &str) -> Result<Vec<TaskSpec>, EconomicsError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(csv_text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<TaskRow>().enumerate() {
        let row = row.map_err(|e| EconomicsError::Table(format!("row {}: {e}", i + 1)))?;
        let bad = |what: &str| EconomicsError::Table(format!("row {} (`{}`): bad {what}", i + 1, row.task));
        let h_tot = match row.h_tot.as_deref().map(|s| s.replace(',', "")) {
            Some(s) if !s.is_empty() => Some(s.parse::<u64>().map_err(|_| bad("h_tot"))?),
            _ => None,
        };
        let achieved = if row.accuracy.eq_ignore_ascii_case("machine") {
            Achieved::MachineOnly
        } else if let Some(p) = row.accuracy.strip_suffix('%') {
            Achieved::Accuracy(p.trim().parse::<f64>().map_err(|_| bad("accuracy"))? / 100.0)
        } else {
            Achieved::Accuracy(row.accuracy.parse::<f64>().map_err(|_| bad("accuracy"))?)
        };
        let assumed = matches!(row.assumed.as_deref(), Some("true" | "yes" | "assumed" | "1"));
        out.push(TaskSpec {
            name: row.task.clone(),
            h_tot,
            achieved,
            group: row.group.filter(|g| !g.is_empty()),
            assumed,
        });
    }
    Ok(out)
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, EconomicsError> {
    let text = std::fs::read_to_string(path).map_err(|e| EconomicsError::Table(format!("{}: {e}", path.display())))?;
    parse_tasks(&text)
}

fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn render_table(table: &ValuationTable, model: &EffortModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Valuation in equivalent person-hours (q0 = {}, epsilon = {})", model.q0(), model.epsilon());
    let _ = writeln!(out, "{:<32}{:>12}{:>18}{:>8}{:>12}", "task", "H_tot", "accuracy", "ratio", "valuation");
    for r in &table.rows {
        if r.machine_only {
            let _ = writeln!(out, "{:<32}  machine-based, no manual valuation", r.name);
            continue;
        }
        let acc = r
            .accuracy
            .map(|a| format!("{:.1}%{}", a * 100.0, if r.assumed { " (assumed)" } else { "" }))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<32}{:>12}{:>18}{:>8.3}{:>12}",
            r.name,
            r.h_tot.map(thousands).unwrap_or_default(),
            acc,
            r.effort_ratio.unwrap_or(0.0),
            r.valuation.map(thousands).unwrap_or_default()
        );
    }
    for s in &table.subtotals {
        let _ = writeln!(
            out,
            "{:<32}{:>12}{:>18}{:>8}{:>12}",
            format!("Subtotal ({})", s.group),
            thousands(s.h_tot),
            "",
            "",
            thousands(s.valuation)
        );
    }
    let _ = writeln!(
        out,
        "{:<32}{:>12}{:>18}{:>8}{:>12}",
        "Grand total",
        thousands(table.total_h_tot),
        "",
        "",
        thousands(table.total_valuation)
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn remaining_error_examples() {
        let m = EffortModel::default();
        assert_eq!(m.remaining_error(0.0, 100.0).unwrap(), 1.0);
        assert!((m.remaining_error(100.0, 100.0).unwrap() - 1e-3).abs() < 1e-15);
        assert!((m.remaining_error(50.0, 100.0).unwrap() - 10f64.powf(-1.5)).abs() < 1e-12);
        assert!(m.remaining_error(-1.0, 100.0).is_err());
    }

    #[test]
    fn effort_ratio_examples() {
        let m = EffortModel::default();
        assert!((m.effort_ratio(0.8).unwrap() - 0.233).abs() <= 0.0005);
        assert_eq!(m.effort_ratio(0.0).unwrap(), 0.0);
        assert!((m.effort_ratio(0.934).unwrap() - 0.393).abs() <= 0.001);
        assert!((m.effort_ratio(0.999).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(m.effort_ratio(0.9995), Err(EconomicsError::BeyondOperationalMaximum { .. })));
    }

    #[test]
    fn model_invariants() {
        assert!(EffortModel::new(1.0, 0.0).is_err());
        assert!(EffortModel::new(0.5, 0.6).is_err());
        assert!(EffortModel::new(1.1, 0.1).is_err());
        let m = EffortModel::new(0.5, 0.01).unwrap();
        assert!(m.effort_ratio(0.4).is_err());
        assert_eq!(m.effort_ratio(0.5).unwrap(), 0.0);
    }

    #[test]
    fn single_task_at_maximum_is_full_effort() {
        let tasks = [TaskSpec {
            name: "t".into(),
            h_tot: Some(1234),
            achieved: Achieved::Accuracy(0.999),
            group: None,
            assumed: false,
        }];
        let t = build_valuation_table(&tasks, &EffortModel::default(), None).unwrap();
        assert_eq!(t.rows[0].valuation, Some(1234));
    }

    #[test]
    fn machine_rows_and_groups() {
        let csv = "task,h_tot,accuracy,group,assumed\nA,\"1,000\",90%,g,\nB,,MACHINE,g,\nC,500,0.5,,yes\n";
        let tasks = parse_tasks(csv).unwrap();
        assert_eq!(tasks[0].h_tot, Some(1000));
        assert_eq!(tasks[1].achieved, Achieved::MachineOnly);
        assert!(tasks[2].assumed);
        let t = build_valuation_table(&tasks, &EffortModel::default(), Some(3)).unwrap();
        // ln(10)/ln(1000) = 1/3 -> 0.333; ln(2)/ln(1000) = 0.1003 -> 0.100
        assert_eq!(t.rows[0].valuation, Some(333));
        assert_eq!(t.rows[1].valuation, None);
        assert_eq!(t.rows[2].valuation, Some(50));
        assert_eq!(t.subtotals, vec![Subtotal { group: "g".into(), h_tot: 1000, valuation: 333 }]);
        assert_eq!((t.total_h_tot, t.total_valuation), (1500, 383));
        let text = render_table(&t, &EffortModel::default());
        assert!(text.contains("machine-based") && text.contains("(assumed)") && text.contains("1,500"));
    }

    proptest! {
        #[test]
        fn ratio_monotone_and_round_trips(a in 0.0f64..0.998, da in 1e-6f64..1e-3) {
            let m = EffortModel::default();
            let r1 = m.effort_ratio(a).unwrap();
            let r2 = m.effort_ratio((a + da).min(0.999)).unwrap();
            prop_assert!(r2 > r1);
            let h_tot = 1000.0;
            let q = m.remaining_error(m.effort_hours(a, h_tot).unwrap(), h_tot).unwrap();
            prop_assert!((q - (1.0 - a)).abs() < 1e-12);
        }
    }
}
