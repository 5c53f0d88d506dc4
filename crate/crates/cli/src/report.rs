//! Bound reports and their table, JSON and CSV renderings.

use serde::Serialize;
use sosexit_sdp::{Residuals, Status};

/// Outcome of one `(r, sense)` relaxation.
#[derive(Debug, Clone, Serialize)]
pub struct SideResult {
    /// Optimal value of the moment relaxation.
    pub bound: Option<f64>,
    /// Value of the dual (SOS) problem at the returned point.
    pub dual_bound: Option<f64>,
    pub status: String,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Residuals>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSummary>,
}

impl SideResult {
    pub fn failed(&self) -> bool {
        self.bound.is_none()
    }

    pub fn from_error(message: String) -> Self {
        SideResult {
            bound: None,
            dual_bound: None,
            status: "error".into(),
            iterations: 0,
            residuals: None,
            error: Some(message),
            certificate: None,
        }
    }

    pub fn from_status(status: Status, bound: f64, dual: f64, iterations: usize, residuals: Residuals) -> Self {
        let ok = status.is_usable();
        let hint = match status {
            Status::Infeasible => Some(
                "relaxation infeasible: check that the boundary pieces lie in the closure of the interior and contain the exit set"
                    .to_string(),
            ),
            Status::Unbounded => Some("relaxation unbounded: the domain description may not be bounded".to_string()),
            Status::MaxIters => Some("solver hit the iteration limit before reaching the tolerance".to_string()),
            _ => None,
        };
        SideResult {
            bound: ok.then_some(bound),
            dual_bound: ok.then_some(dual),
            status: status_name(status).to_string(),
            iterations,
            residuals: Some(residuals),
            error: hint,
            certificate: None,
        }
    }
}

pub fn status_name(status: Status) -> &'static str {
    match status {
        Status::Optimal => "optimal",
        Status::NearOptimal => "near_optimal",
        Status::Infeasible => "infeasible",
        Status::Unbounded => "unbounded",
        Status::MaxIters => "max_iters",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary {
    pub pass: bool,
    pub certified_value: f64,
    pub min_gram_eigenvalue: f64,
    pub max_identity_residual: f64,
    pub worst_interior_value: f64,
    pub worst_boundary_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub r: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<SideResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<SideResult>,
    pub gap: Option<f64>,
    /// `lower <= upper + tolerance`, or `true` when only one side was solved.
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemMeta {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSettingsMeta {
    pub degrees: Vec<u32>,
    pub sense: String,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_samples: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RowTiming {
    pub r: u32,
    pub lower_seconds: Option<f64>,
    pub upper_seconds: Option<f64>,
}

/// Wall-clock data, kept apart so the rest of the report is reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub rows: Vec<RowTiming>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub tool: String,
    pub version: String,
    pub problem: ProblemMeta,
    pub settings: SolveSettingsMeta,
    pub rows: Vec<BoundRow>,
    pub timing: Timing,
}

impl BoundReport {
    pub fn any_failed(&self) -> bool {
        self.rows
            .iter()
            .flat_map(|r| [&r.lower, &r.upper])
            .flatten()
            .any(SideResult::failed)
    }

    pub fn any_certificate_failed(&self) -> bool {
        self.rows
            .iter()
            .flat_map(|r| [&r.lower, &r.upper])
            .flatten()
            .filter_map(|s| s.certificate.as_ref())
            .any(|c| !c.pass)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "r",
            "lower",
            "upper",
            "gap",
            "lower_status",
            "upper_status",
            "lower_seconds",
            "upper_seconds",
        ])?;
        let num = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
        for (row, t) in self.rows.iter().zip(&self.timing.rows) {
            let side = |s: &Option<SideResult>| s.as_ref().map(|s| (s.bound, s.status.clone()));
            let (lo, lo_status) = side(&row.lower).unwrap_or((None, String::new()));
            let (up, up_status) = side(&row.upper).unwrap_or((None, String::new()));
            w.write_record([
                row.r.to_string(),
                num(lo),
                num(up),
                num(row.gap),
                lo_status,
                up_status,
                num(t.lower_seconds),
                num(t.upper_seconds),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width table with one row per degree.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>4}  {:>12}  {:>12}  {:>11}  {:>12}  {:>12}  {:>8}\n",
            "r", "lower", "upper", "gap", "min status", "max status", "seconds"
        ));
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"));
        for (row, t) in self.rows.iter().zip(&self.timing.rows) {
            let status = |s: &Option<SideResult>| s.as_ref().map_or("-".to_string(), |s| s.status.clone());
            let secs = t.lower_seconds.unwrap_or(0.0) + t.upper_seconds.unwrap_or(0.0);
            out.push_str(&format!(
                "{:>4}  {:>12}  {:>12}  {:>11}  {:>12}  {:>12}  {:>8.3}\n",
                row.r,
                num(row.lower.as_ref().and_then(|s| s.bound)),
                num(row.upper.as_ref().and_then(|s| s.bound)),
                row.gap.map_or_else(|| "-".to_string(), |g| format!("{g:.3e}")),
                status(&row.lower),
                status(&row.upper),
                secs
            ));
        }
        for row in &self.rows {
            for (name, side) in [("lower", &row.lower), ("upper", &row.upper)] {
                if let Some(s) = side {
                    if let Some(e) = &s.error {
                        out.push_str(&format!("r = {} {name}: {e}\n", row.r));
                    }
                    if let Some(c) = &s.certificate {
                        out.push_str(&format!(
                            "r = {} {name}: certificate {} (value {:.8}, min Gram eigenvalue {:.2e}, identity residual {:.2e})\n",
                            row.r,
                            if c.pass { "pass" } else { "FAIL" },
                            c.certified_value,
                            c.min_gram_eigenvalue,
                            c.max_identity_residual
                        ));
                    }
                }
            }
            if !row.consistent {
                out.push_str(&format!("r = {}: warning, lower bound exceeds upper bound\n", row.r));
            }
        }
        out
    }
}
