//! Control-risk assessment and report rendering.
//!
//! Control over the host is binarized from the control score; each holder
//! maps to a fixed qualitative risk row covering confidentiality,
//! integrity, and availability.

use serde::{Deserialize, Serialize};

use crate::engine::ScenarioReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlHolder {
    OrganizationMoreControl,
    MalwareMoreControl,
}

/// Who holds control, derived from the score with a configurable
/// threshold. The raw score is always reported alongside so the threshold
/// never hides information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub holder: ControlHolder,
    pub score: f64,
    pub threshold: f64,
}

pub fn control_state(score: f64, threshold: f64) -> ControlState {
    let holder = if score >= threshold {
        ControlHolder::OrganizationMoreControl
    } else {
        ControlHolder::MalwareMoreControl
    };
    ControlState {
        holder,
        score,
        threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskLevel {
    Reduced,
    Elevated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub level: RiskLevel,
    pub narrative: String,
}

/// Qualitative security-risk row for the current control holder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub confidentiality: RiskEntry,
    pub integrity: RiskEntry,
    pub availability: RiskEntry,
}

pub const ORG_CONFIDENTIALITY: &str = "Reduces data leakage Protects confidentiality";
pub const ORG_INTEGRITY: &str = "Improves security posture Improves reliability of IT assets";
pub const ORG_AVAILABILITY: &str = "Improves resiliency Enhances business continuity";
pub const MALWARE_CONFIDENTIALITY: &str = "Increases data leakage Losses confidentiality";
pub const MALWARE_INTEGRITY: &str = "Degrades security posture Degrades reliability of IT assets";
pub const MALWARE_AVAILABILITY: &str = "Degrades resiliency Affects business continuity";

/// Pure table lookup from control holder to the matching risk row.
pub fn assess_risk(control: &ControlState) -> RiskAssessment {
    match control.holder {
        ControlHolder::OrganizationMoreControl => RiskAssessment {
            confidentiality: RiskEntry {
                level: RiskLevel::Reduced,
                narrative: ORG_CONFIDENTIALITY.to_string(),
            },
            integrity: RiskEntry {
                level: RiskLevel::Reduced,
                narrative: ORG_INTEGRITY.to_string(),
            },
            availability: RiskEntry {
                level: RiskLevel::Reduced,
                narrative: ORG_AVAILABILITY.to_string(),
            },
        },
        ControlHolder::MalwareMoreControl => RiskAssessment {
            confidentiality: RiskEntry {
                level: RiskLevel::Elevated,
                narrative: MALWARE_CONFIDENTIALITY.to_string(),
            },
            integrity: RiskEntry {
                level: RiskLevel::Elevated,
                narrative: MALWARE_INTEGRITY.to_string(),
            },
            availability: RiskEntry {
                level: RiskLevel::Elevated,
                narrative: MALWARE_AVAILABILITY.to_string(),
            },
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Human,
    Json,
}

/// Render a report. Json is stable-key-ordered and round-trips to an equal
/// structure; Human is a fixed-layout text summary.
pub fn render_report(report: &ScenarioReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(report).expect("report serializes");
            out.push('\n');
            out
        }
        ReportFormat::Human => render_human(report),
    }
}

fn verdict(all_pass: bool) -> &'static str {
    if all_pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn render_human(report: &ScenarioReport) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    let _ = writeln!(out, "scenario report ({})", report.schema_version);
    let _ = writeln!(
        out,
        "seed: {}  ticks: {}",
        report.seed, report.run_length
    );
    let _ = writeln!(
        out,
        "pre-test: {}",
        verdict(report.pretest.values().all(|p| *p))
    );
    let _ = writeln!(
        out,
        "post-test: {}",
        verdict(report.posttest.values().all(|p| *p))
    );
    let total_downtime: u64 = report.downtime_ticks.values().sum();
    let _ = writeln!(out, "downtime: {total_downtime}");

    if !report.pretest.is_empty() {
        let _ = writeln!(out, "protected attributes:");
        for (label, pre) in &report.pretest {
            let post = report.posttest.get(label).copied().unwrap_or(false);
            let downtime = report.downtime_ticks.get(label).copied().unwrap_or(0);
            let restorations = report
                .restoration_latencies
                .get(label)
                .map(|eps| {
                    eps.iter()
                        .map(|(broke, restored)| format!("{broke}->{restored}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                })
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "  {label}  pre {}  post {}  downtime {downtime}  restorations [{restorations}]",
                verdict(*pre),
                verdict(post),
            );
        }
    }

    if !report.guard_defeats.is_empty() {
        let _ = writeln!(out, "guard defeats:");
        for defeat in &report.guard_defeats {
            let _ = writeln!(
                out,
                "  tick {}: {} ({})",
                defeat.tick, defeat.guard_id, defeat.reason
            );
        }
    }

    let holder = match report.control.holder {
        ControlHolder::OrganizationMoreControl => "organization has more control",
        ControlHolder::MalwareMoreControl => "malware has more control",
    };
    let _ = writeln!(
        out,
        "control score: {:.2} (threshold {:.2}) -> {holder}",
        report.control_score, report.control.threshold
    );
    let _ = writeln!(out, "risk assessment:");
    for (name, entry) in [
        ("confidentiality", &report.risk.confidentiality),
        ("integrity", &report.risk.integrity),
        ("availability", &report.risk.availability),
    ] {
        let level = match entry.level {
            RiskLevel::Reduced => "reduced",
            RiskLevel::Elevated => "elevated",
        };
        let _ = writeln!(out, "  {name}: {level} - {}", entry.narrative);
    }
    let _ = writeln!(out, "final state digest: {}", report.final_state_digest);
    let _ = writeln!(out, "log entries: {}", report.log.entries.len());
    out
}
