//! Per-image metric rows with mean ± std aggregation, rendered as a text
//! table or CSV.

use serde::{Deserialize, Serialize};

/// PSNR value substituted for +∞ in CSV output and aggregates.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub delta_e: f64,
}

impl MetricsRow {
    fn columns(&self) -> [f64; 4] {
        [self.psnr.min(PSNR_CAP), self.ssim, self.mae, self.delta_e]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr: Stat,
    pub ssim: Stat,
    pub mae: Stat,
    pub delta_e: Stat,
}

/// Mean and population standard deviation. Values are summed in sorted order
/// so the result does not depend on row order.
pub fn mean_std(values: &[f64]) -> Stat {
    if values.is_empty() {
        return Stat { mean: f64::NAN, std: f64::NAN };
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    Stat { mean, std: (sq.iter().sum::<f64>() / n).sqrt() }
}

pub const TABLE_HEADER: [&str; 4] = ["PSNR↑", "SSIM↑", "MAE↓", "ΔE↓"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub direction: String,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn new(method: impl Into<String>, direction: impl Into<String>, rows: Vec<MetricsRow>) -> Self {
        MetricsReport { method: method.into(), direction: direction.into(), rows }
    }

    pub fn aggregates(&self) -> Aggregates {
        let col = |i: usize| mean_std(&self.rows.iter().map(|r| r.columns()[i]).collect::<Vec<_>>());
        Aggregates { psnr: col(0), ssim: col(1), mae: col(2), delta_e: col(3) }
    }

    /// One row holding this report's column means, named after the method.
    pub fn summary_row(&self, name: impl Into<String>) -> MetricsRow {
        let a = self.aggregates();
        MetricsRow { name: name.into(), psnr: a.psnr.mean, ssim: a.ssim.mean, mae: a.mae.mean, delta_e: a.delta_e.mean }
    }

    /// Aligned text table: one line per image then the mean ± std line.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# {} ({}); SSIM: K1=0.01 K2=0.03, 11x11 Gaussian σ=1.5\n",
            self.method, self.direction
        );
        let name_w = self.rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(self.method.chars().count()).max(6);
        out.push_str(&format!("{:<name_w$}", "image"));
        for h in TABLE_HEADER {
            out.push_str(&format!("  {h:>15}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<name_w$}", r.name));
            let psnr = if r.psnr.is_infinite() { "∞".to_string() } else { format!("{:.2}", r.psnr) };
            out.push_str(&format!("  {psnr:>15}  {:>15.4}  {:>15.4}  {:>15.2}\n", r.ssim, r.mae, r.delta_e));
        }
        out.push_str(&format!("{:<name_w$}", self.method));
        out.push_str(&format_summary(&self.aggregates()));
        out.push('\n');
        out
    }

    /// CSV with PSNR capped at 99, followed by `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,direction,image,psnr,ssim,mae,delta_e\n");
        let mut line = |name: &str, c: [f64; 4]| {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                self.method, self.direction, name, c[0], c[1], c[2], c[3]
            ));
        };
        for r in &self.rows {
            line(&r.name, r.columns());
        }
        let a = self.aggregates();
        line("mean", [a.psnr.mean, a.ssim.mean, a.mae.mean, a.delta_e.mean]);
        line("std", [a.psnr.std, a.ssim.std, a.mae.std, a.delta_e.std]);
        out
    }
}

fn format_summary(a: &Aggregates) -> String {
    format!(
        "  {:>15}  {:>15}  {:>15}  {:>15}",
        format!("{:.2} ± {:.2}", a.psnr.mean, a.psnr.std),
        format!("{:.4} ± {:.4}", a.ssim.mean, a.ssim.std),
        format!("{:.4} ± {:.4}", a.mae.mean, a.mae.std),
        format!("{:.2} ± {:.2}", a.delta_e.mean, a.delta_e.std),
    )
}

/// Several methods side by side, one mean ± std line each.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let name_w = reports.iter().map(|r| r.method.chars().count()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<name_w$}", "method");
    for h in TABLE_HEADER {
        out.push_str(&format!("  {h:>15}"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{:<name_w$}{}\n", r.method, format_summary(&r.aggregates())));
    }
    out
}
