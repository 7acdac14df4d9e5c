//! Minimal flag parser: `--key value` pairs and `--key` switches after the
//! subcommand. Unknown flags are usage errors so typos never silently run a
//! default configuration.

use std::collections::BTreeMap;

#[derive(Debug)]
pub struct Args {
    values: BTreeMap<String, String>,
    switches: Vec<String>,
    consumed: std::cell::RefCell<Vec<String>>,
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Args {
    pub fn parse(raw: &[String], switch_names: &[&str]) -> Result<Args, UsageError> {
        let mut values = BTreeMap::new();
        let mut switches = Vec::new();
        let mut it = raw.iter().peekable();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                return Err(UsageError(format!(
                    "unexpected positional argument '{arg}'"
                )));
            };
            if switch_names.contains(&name) {
                switches.push(name.to_string());
            } else {
                let Some(value) = it.next() else {
                    return Err(UsageError(format!("flag --{name} needs a value")));
                };
                values.insert(name.to_string(), value.clone());
            }
        }
        Ok(Args {
            values,
            switches,
            consumed: Default::default(),
        })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.consumed.borrow_mut().push(name.to_string());
        self.values.get(name).map(|s| s.as_str())
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>, UsageError> {
        match self.get(name) {
            None => Ok(None),
            Some(s) => s
                .parse::<T>()
                .map(Some)
                .map_err(|_| UsageError(format!("flag --{name}: cannot parse '{s}'"))),
        }
    }

    /// Error on any flag that no command consumed.
    pub fn reject_unknown(&self) -> Result<(), UsageError> {
        let consumed = self.consumed.borrow();
        for key in self.values.keys() {
            if !consumed.iter().any(|c| c == key) {
                return Err(UsageError(format!("unknown flag --{key}")));
            }
        }
        for key in &self.switches {
            if !consumed.iter().any(|c| c == key) {
                return Err(UsageError(format!("unknown flag --{key}")));
            }
        }
        Ok(())
    }
}

/// Parse a value that may be "inf" into f64.
pub fn parse_f64_or_inf(s: &str) -> Result<f64, UsageError> {
    match s {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => s
            .parse::<f64>()
            .map_err(|_| UsageError(format!("cannot parse number '{s}'"))),
    }
}
