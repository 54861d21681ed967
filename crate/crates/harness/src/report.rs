use std::time::Duration;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::SuiteConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    /// `null` in JSON when the check could not produce a number.
    #[serde(deserialize_with = "nullable")]
    pub constant: f64,
    pub witness: Value,
    pub trials: usize,
    pub pass: bool,
    pub seed: u64,
    /// Wall time; kept out of the serialised report so that reports are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub elapsed: Duration,
}

fn nullable<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "constant", "trials", "pass"])?;
        for c in &self.checks {
            w.write_record([c.name.clone(), format!("{}", c.constant), c.trials.to_string(), c.pass.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("report:{}:{}: {e}", e.line(), e.column()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns() {
        let r = SuiteReport {
            config: SuiteConfig::default(),
            checks: vec![CheckReport {
                name: "x".into(),
                constant: 1.5,
                witness: Value::Null,
                trials: 3,
                pass: true,
                seed: 7,
                elapsed: Duration::ZERO,
            }],
        };
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().next().unwrap(), "name,constant,trials,pass");
        assert_eq!(csv.lines().nth(1).unwrap(), "x,1.5,3,true");
    }
}
