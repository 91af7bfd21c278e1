//! The guardian section of a workbook: roles, scenarios, validation rules,
//! finding flags and rule configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::edit::StructuralEdit;
use crate::findings::FindingFlag;
use crate::inspect::StaticRuleConfig;
use crate::scenario::{Role, TestScenario};
use crate::validation::ValidationRule;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GuardianSpec {
    /// Role per stable name.
    #[serde(default)]
    pub roles: BTreeMap<String, Role>,
    #[serde(default)]
    pub scenarios: Vec<TestScenario>,
    #[serde(default)]
    pub validation_rules: Vec<ValidationRule>,
    /// At most one flag per finding key.
    #[serde(default)]
    pub flags: BTreeMap<String, FindingFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_config: Option<StaticRuleConfig>,
    /// Keys this version does not know, kept for round-tripping.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl GuardianSpec {
    pub(crate) fn apply_structural_edit(&mut self, edit: &StructuralEdit) {
        for rule in &mut self.validation_rules {
            rule.apply_structural_edit(edit);
        }
    }

    pub fn scenario(&self, name: &str) -> Option<&TestScenario> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}
