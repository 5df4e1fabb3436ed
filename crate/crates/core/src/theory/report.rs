use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Quadrature,
    Mc,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    pub method: Method,
}

/// Named theoretical quantities for one configuration, serialized as JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub digest: String,
    pub quantities: BTreeMap<String, Quantity>,
    pub notes: Vec<String>,
}

impl TheoryReport {
    pub fn new(digest: impl Into<String>) -> TheoryReport {
        TheoryReport {
            digest: digest.into(),
            ..Default::default()
        }
    }

    pub fn exact(&mut self, name: &str, value: f64, method: Method) -> &mut Self {
        self.quantities.insert(
            name.into(),
            Quantity {
                value,
                stderr: None,
                method,
            },
        );
        self
    }

    pub fn estimate(&mut self, name: &str, e: Estimate) -> &mut Self {
        self.quantities.insert(
            name.into(),
            Quantity {
                value: e.value,
                stderr: Some(e.stderr),
                method: Method::Mc,
            },
        );
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.quantities.get(name).map(|q| q.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
