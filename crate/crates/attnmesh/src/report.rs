//! Versioned JSON reports and the two markdown tables: compute cost per
//! submodel and variant, and normalized error per region and variant.

use std::fmt::Write as _;

use attnmesh_core::cost::{MacReport, Variant};
use attnmesh_core::eval::EvalReport;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Reference latency pair (unified ms, cascade ms) and its ratio.
pub const REFERENCE_UNIFIED_MS: f64 = 16.6;
pub const REFERENCE_CASCADE_MS: f64 = 22.4;
pub const MAC_RATIO_LIMIT: f64 = 0.85;

pub fn reference_ratio() -> f64 {
    REFERENCE_UNIFIED_MS / REFERENCE_CASCADE_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub variant: Variant,
    pub images: usize,
    pub repetitions: usize,
    /// Milliseconds per image.
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub image_encodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostReport {
    pub config: String,
    pub macs: MacReport,
    pub timing: Vec<Timing>,
    pub reference_ratio: f64,
    pub ratio_limit: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl CostReport {
    pub fn new(config: &str, macs: MacReport, timing: Vec<Timing>) -> CostReport {
        CostReport {
            config: config.to_string(),
            pass: macs.ratio <= MAC_RATIO_LIMIT,
            macs,
            timing,
            reference_ratio: reference_ratio(),
            ratio_limit: MAC_RATIO_LIMIT,
            notes: vec![String::from(
                "host timings are informational; the device-side CPU-GPU synchronization saving is not modeled",
            )],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub evals: Vec<EvalReport>,
    pub cost: Option<CostReport>,
}

impl Default for ReportDoc {
    fn default() -> Self {
        ReportDoc { schema_version: SCHEMA_VERSION, evals: Vec::new(), cost: None }
    }
}

impl ReportDoc {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<ReportDoc> {
        let doc: ReportDoc =
            serde_json::from_str(text).map_err(|e| Error::format("<report>", e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Mismatch(format!(
                "report schema {} is not supported (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if let Some(c) = &self.cost {
            out.push_str(&cost_markdown(c));
        }
        if !self.evals.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&nme_markdown(&self.evals));
        }
        out
    }
}

fn mmacs(m: u64) -> String {
    format!("{:.3}", m as f64 / 1e6)
}

/// Per-submodel cost table; the cascade row is the sum of the three above it.
pub fn cost_markdown(c: &CostReport) -> String {
    let t = |v: Variant| c.timing.iter().find(|x| x.variant == v);
    let ms = |v: Variant| t(v).map_or(String::from("-"), |x| format!("{:.2} ± {:.2}", x.mean_ms, x.stddev_ms));
    let mut s = String::new();
    let _ = writeln!(s, "### Compute cost ({})\n", c.config);
    let _ = writeln!(s, "| Model | MMACs | Host ms / image |");
    let _ = writeln!(s, "|---|---:|---:|");
    let names = ["Mesh", "Lips", "Eye & iris"];
    for (i, sub) in c.macs.submodels.iter().enumerate() {
        let label = names.get(i).copied().unwrap_or(sub.name.as_str());
        let time = if i == 0 { ms(Variant::MeshOnly) } else { String::from("-") };
        let _ = writeln!(s, "| {label} | {} | {time} |", mmacs(sub.macs));
    }
    let _ = writeln!(s, "| Cascade (sum of above) | {} | {} |", mmacs(c.macs.cascade_total), ms(Variant::Cascade));
    let _ = writeln!(s, "| Attention mesh | {} | {} |", mmacs(c.macs.unified_total), ms(Variant::AttentionMesh));
    let _ = writeln!(s);
    let verdict = if c.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        s,
        "MAC ratio attention mesh / cascade: {:.3} (limit {:.2}) **{verdict}**; reference latency ratio {REFERENCE_UNIFIED_MS}/{REFERENCE_CASCADE_MS} = {:.3}",
        c.macs.ratio, c.ratio_limit, c.reference_ratio
    );
    for n in &c.notes {
        let _ = writeln!(s, "\n_{n}_");
    }
    s
}

/// Normalized error table: rows Mesh, Cascade, Attention mesh.
pub fn nme_markdown(evals: &[EvalReport]) -> String {
    let mut s = String::from("### Mean normalized error in 2D (×100)\n\n| Model | All | Lips | Eyes |\n|---|---:|---:|---:|\n");
    for v in Variant::ALL {
        for r in evals.iter().filter(|r| r.variant == v) {
            let _ = writeln!(s, "| {} | {:.2} | {:.2} | {:.2} |", v.label(), r.nme_all, r.nme_lips, r.nme_eyes);
        }
    }
    s
}
