use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ReportRecord;
use crate::classifier::Modalities;
use crate::config::RunConfig;
use crate::corpus::{Dataset, DatasetSplit, DiscourseLabel};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::pipeline::{fit, FitResult};

pub const TEXT_CAPS: [usize; 4] = [5, 10, 15, 20];

/// One cell of the ablation matrix. The cap applies to text tokens only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub modalities: Modalities,
    pub fusion: FusionStrategy,
    pub text_cap: usize,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("ablation spec has no modalities".into()));
        }
        if !TEXT_CAPS.contains(&self.text_cap) {
            return Err(Error::Config(format!(
                "text cap {} is not one of {TEXT_CAPS:?}",
                self.text_cap
            )));
        }
        Ok(())
    }

    /// The base configuration with this spec's three settings swapped in.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.model.modalities = self.modalities;
        cfg.model.fusion = self.fusion;
        cfg.model.text_cap = self.text_cap;
        cfg
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        AblationSpec {
            modalities: cfg.model.modalities,
            fusion: cfg.model.fusion,
            text_cap: cfg.model.text_cap,
        }
    }
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.modalities, self.fusion, self.text_cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationGrid {
    Modalities,
    Length,
    Fusion,
}

impl FromStr for AblationGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modalities" => Ok(AblationGrid::Modalities),
            "length" => Ok(AblationGrid::Length),
            "fusion" => Ok(AblationGrid::Fusion),
            other => Err(Error::Config(format!(
                "unknown ablation grid '{other}' (expected modalities, length or fusion)"
            ))),
        }
    }
}

impl AblationGrid {
    /// Specs for this grid, holding the base config's other settings fixed.
    pub fn specs(self, base: &RunConfig) -> Vec<AblationSpec> {
        let spec = AblationSpec::from_config(base);
        match self {
            AblationGrid::Modalities => {
                let only = |text, image, caption| Modalities { text, image, caption };
                [only(true, false, false), only(false, true, false), only(false, false, true), Modalities::ALL]
                    .into_iter()
                    .map(|modalities| AblationSpec { modalities, ..spec })
                    .collect()
            }
            AblationGrid::Length => TEXT_CAPS
                .into_iter()
                .map(|text_cap| AblationSpec {
                    modalities: Modalities::ALL,
                    text_cap,
                    ..spec
                })
                .collect(),
            AblationGrid::Fusion => FusionStrategy::ALL
                .into_iter()
                .map(|fusion| AblationSpec { fusion, ..spec })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub spec: AblationSpec,
    pub best_epoch: usize,
    pub report: ReportRecord,
}

/// Trains and scores one model per spec. Specs run in parallel; rows come
/// back in spec order.
pub fn run_ablation(
    specs: &[AblationSpec],
    dataset: &Dataset,
    split: &DatasetSplit,
    base: &RunConfig,
) -> Result<Vec<(AblationSpec, FitResult)>> {
    for spec in specs {
        spec.validate()?;
    }
    specs
        .par_iter()
        .map(|spec| Ok((*spec, fit(&spec.apply(base), dataset, split)?)))
        .collect()
}

pub fn ablation_rows(results: &[(AblationSpec, FitResult)]) -> Vec<AblationRow> {
    results
        .iter()
        .map(|(spec, fit)| AblationRow {
            spec: *spec,
            best_epoch: fit.outcome.best_epoch,
            report: fit.test_report.record(),
        })
        .collect()
}

/// Tab-separated table: one row per spec, label columns then weighted F1.
pub fn ablation_table(results: &[(AblationSpec, FitResult)]) -> String {
    let mut out = String::from("spec");
    for l in DiscourseLabel::ALL {
        out.push('\t');
        out.push_str(l.abbrev());
    }
    out.push_str("\twF1\n");
    for (spec, fit) in results {
        out.push_str(&spec.to_string());
        for v in fit.test_report.table_row() {
            out.push_str(&format!("\t{v:.2}"));
        }
        out.push('\n');
    }
    out
}
