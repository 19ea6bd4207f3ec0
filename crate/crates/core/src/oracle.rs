//! Synthetic vulnerability detection against planted ground truth.
//!
//! Every random decision is a pure function of `(run_seed, detector, target,
//! salt)` hashed with SHA-256, so outcomes do not depend on the order in which
//! the event loop asks for them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::digest::Digest;
use crate::ids::{NodeId, PocId};
use crate::task::Segment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
        })
    }
}

/// Report risk level; same scale as finding severity.
pub type RiskLevel = Severity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Website,
    Application,
    SmartContract,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedVuln {
    pub vuln_id: String,
    pub pattern: String,
    pub severity: Severity,
    pub base_detectability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditTarget {
    pub target_id: String,
    pub target_type: TaskType,
    #[serde(default)]
    pub planted: Vec<PlantedVuln>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstalledPoc {
    pub poc_id: PocId,
    pub pattern: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DetectorMode {
    /// Adopted POCs installed into the automatic tool, in POC-id order.
    AutomaticWithPocs(Vec<InstalledPoc>),
    /// Manual auditor; the skill multiplies every planted vuln's detectability.
    ManualSkill(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub detector: NodeId,
    pub mode: DetectorMode,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "poc_id", rename_all = "snake_case")]
pub enum FindingSource {
    AutomaticPoc(PocId),
    Manual,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnerabilityFinding {
    /// Identity used for deduplication: the planted vuln id, or a
    /// detector-scoped id for false positives.
    pub finding_id: String,
    pub discovered_by: NodeId,
    /// Position of the target in the task payload.
    pub target_ref: usize,
    pub target_id: String,
    /// `None` for false positives.
    pub vuln_id: Option<String>,
    pub pattern: String,
    pub severity: Severity,
    pub via: FindingSource,
}

impl VulnerabilityFinding {
    pub fn is_false_positive(&self) -> bool {
        self.vuln_id.is_none()
    }

    pub fn content_digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.str(&self.finding_id)
            .str(self.discovered_by.as_str())
            .u64(self.target_ref as u64)
            .str(&self.target_id)
            .str(self.vuln_id.as_deref().unwrap_or(""))
            .str(&self.pattern)
            .u8(self.severity as u8);
        match &self.via {
            FindingSource::AutomaticPoc(p) => e.u8(1).str(p.as_str()),
            FindingSource::Manual => e.u8(0).str(""),
        };
        e.digest_of()
    }
}

pub const FALSE_POSITIVE_PATTERN: &str = "unconfirmed";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("detector {detector} is not assigned target {target_ref} in this segment")]
    UnassignedDetector { detector: NodeId, target_ref: usize },
}

/// Uniform draw in [0, 1) keyed by its full context.
pub fn seeded_draw(run_seed: u64, detector: &NodeId, target_id: &str, salt: &str) -> f64 {
    let mut e = Encoder::new();
    e.str("sapiens.draw")
        .u64(run_seed)
        .str(detector.as_str())
        .str(target_id)
        .str(salt);
    let bits = e.digest_of().prefix_u64() >> 11;
    bits as f64 / (1u64 << 53) as f64
}

pub fn detect(
    target: &AuditTarget,
    target_ref: usize,
    segment: &Segment,
    detector: &DetectorProfile,
    run_seed: u64,
    fp_rate: f64,
) -> Result<Vec<VulnerabilityFinding>, OracleError> {
    if !segment.assignees.contains(&detector.detector) || !segment.slice.contains(&target_ref) {
        return Err(OracleError::UnassignedDetector {
            detector: detector.detector.clone(),
            target_ref,
        });
    }
    let id = &detector.detector;
    let mut findings = Vec::new();
    for vuln in &target.planted {
        let draw = seeded_draw(run_seed, id, &target.target_id, &vuln.vuln_id);
        let via = match &detector.mode {
            DetectorMode::AutomaticWithPocs(pocs) => {
                let Some(poc) = pocs.iter().find(|p| p.pattern == vuln.pattern) else {
                    continue;
                };
                if draw >= vuln.base_detectability {
                    continue;
                }
                FindingSource::AutomaticPoc(poc.poc_id.clone())
            }
            DetectorMode::ManualSkill(skill) => {
                if draw >= vuln.base_detectability * skill {
                    continue;
                }
                FindingSource::Manual
            }
        };
        findings.push(VulnerabilityFinding {
            finding_id: vuln.vuln_id.clone(),
            discovered_by: id.clone(),
            target_ref,
            target_id: target.target_id.clone(),
            vuln_id: Some(vuln.vuln_id.clone()),
            pattern: vuln.pattern.clone(),
            severity: vuln.severity,
            via,
        });
    }
    if matches!(detector.mode, DetectorMode::ManualSkill(_))
        && seeded_draw(run_seed, id, &target.target_id, "false-positive") < fp_rate
    {
        let pick = seeded_draw(run_seed, id, &target.target_id, "false-positive-severity");
        let severity = if pick < 1.0 / 3.0 {
            Severity::Low
        } else if pick < 2.0 / 3.0 {
            Severity::Medium
        } else {
            Severity::High
        };
        findings.push(VulnerabilityFinding {
            finding_id: format!("fp:{}:{}", target.target_id, id),
            discovered_by: id.clone(),
            target_ref,
            target_id: target.target_id.clone(),
            vuln_id: None,
            pattern: FALSE_POSITIVE_PATTERN.to_owned(),
            severity,
            via: FindingSource::Manual,
        });
    }
    Ok(findings)
}

/// Highest severity present, `Low` for an empty report.
pub fn classify_risk<'a>(findings: impl IntoIterator<Item = &'a VulnerabilityFinding>) -> RiskLevel {
    findings
        .into_iter()
        .map(|f| f.severity)
        .max()
        .unwrap_or(Severity::Low)
}
