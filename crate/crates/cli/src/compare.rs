//! Refinement comparison between two runs of the same preset at different
//! grid spacings: observed convergence orders for blow-up time estimates,
//! residuals, and measured check constants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::pipeline::{RunManifest, RunReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TOrder {
    pub a: f64,
    pub t_fine: f64,
    pub t_coarse: f64,
    /// Observed order against the closed-form blow-up time; absent for
    /// presets with no analytic reference.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantChange {
    pub name: String,
    pub fine: Option<f64>,
    pub coarse: Option<f64>,
    pub rel_change: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// True when both manifests have the same h: all orders degenerate.
    pub degenerate: bool,
    pub h_fine: f64,
    pub h_coarse: f64,
    pub t_orders: Vec<TOrder>,
    pub equation_residual_order: Option<f64>,
    pub shatah_defect_order: Option<f64>,
    pub dissipation_defect_order: Option<f64>,
    pub constants: Vec<ConstantChange>,
}

fn load_run(manifest_path: &Path) -> Result<(RunManifest, RunReport)> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let report_text = std::fs::read_to_string(dir.join("report.json"))
        .map_err(|e| CliError::Compare(format!("cannot read report next to manifest: {e}")))?;
    Ok((manifest, serde_json::from_str(&report_text)?))
}

fn decay_order(fine: Option<f64>, coarse: Option<f64>, h_ratio: f64) -> Option<f64> {
    match (fine, coarse) {
        (Some(f), Some(c)) if f > 0.0 && c > 0.0 && h_ratio > 1.0 => Some((c / f).ln() / h_ratio.ln()),
        _ => None,
    }
}

/// Compare two manifests of the same preset at different resolutions.
pub fn compare(manifest_a: &Path, manifest_b: &Path) -> Result<ComparisonReport> {
    let (man_a, rep_a) = load_run(manifest_a)?;
    let (man_b, rep_b) = load_run(manifest_b)?;
    if man_a.config.preset != man_b.config.preset {
        return Err(CliError::Compare("manifests use different presets".into()));
    }
    let degenerate = man_a.config.h == man_b.config.h;
    let (fine, coarse) = if man_a.config.h <= man_b.config.h {
        ((man_a, rep_a), (man_b, rep_b))
    } else {
        ((man_b, rep_b), (man_a, rep_a))
    };
    let h_ratio = coarse.0.config.h / fine.0.config.h;
    let mut t_orders = Vec::new();
    for tf in &fine.1.targets {
        let Some(tc) = coarse.1.targets.iter().find(|t| (t.a - tf.a).abs() < 1e-9) else {
            continue;
        };
        let order = if degenerate {
            None
        } else {
            fine.0.config.preset.analytic_t(tf.a).and_then(|t_true| {
                decay_order(
                    Some((tf.t_estimate - t_true).abs()),
                    Some((tc.t_estimate - t_true).abs()),
                    h_ratio,
                )
            })
        };
        t_orders.push(TOrder { a: tf.a, t_fine: tf.t_estimate, t_coarse: tc.t_estimate, order });
    }
    let diag_order = |f: Option<f64>, c: Option<f64>| {
        if degenerate {
            None
        } else {
            decay_order(f, c, h_ratio)
        }
    };
    let mut constants = Vec::new();
    for cf in &fine.1.checks {
        let Some(cc) = coarse.1.checks.iter().find(|c| c.name == cf.name) else {
            continue;
        };
        let rel_change = match (cf.measured_constant, cc.measured_constant) {
            (Some(f), Some(c)) if f.abs() > 0.0 => Some((c - f).abs() / f.abs()),
            _ => None,
        };
        constants.push(ConstantChange {
            name: cf.name.clone(),
            fine: cf.measured_constant,
            coarse: cc.measured_constant,
            rel_change,
        });
    }
    Ok(ComparisonReport {
        degenerate,
        h_fine: fine.0.config.h,
        h_coarse: coarse.0.config.h,
        t_orders,
        equation_residual_order: diag_order(
            fine.1.diagnostics.equation_residual,
            coarse.1.diagnostics.equation_residual,
        ),
        shatah_defect_order: diag_order(fine.1.diagnostics.shatah_defect, coarse.1.diagnostics.shatah_defect),
        dissipation_defect_order: diag_order(
            fine.1.diagnostics.dissipation_defect,
            coarse.1.diagnostics.dissipation_defect,
        ),
        constants,
    })
}
