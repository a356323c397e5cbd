use std::fmt;

/// One named check with its measured value and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of a validation routine: a list of checks, passing iff all pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub items: Vec<CheckItem>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a check that passes iff `value <= threshold`.
    pub fn check_le(&mut self, name: &str, value: f64, threshold: f64, detail: impl Into<String>) {
        let passed = value <= threshold;
        self.items.push(CheckItem {
            name: name.to_string(),
            value,
            threshold,
            passed,
            detail: detail.into(),
        });
    }

    pub fn push(&mut self, item: CheckItem) {
        self.items.push(item);
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|i| !i.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for item in &self.items {
            writeln!(
                f,
                "{:<32} {:>14.6e} <= {:<14.6e} {} {}",
                item.name,
                item.value,
                item.threshold,
                if item.passed { "ok  " } else { "FAIL" },
                item.detail
            )?;
        }
        Ok(())
    }
}
