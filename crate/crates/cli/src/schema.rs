//! Dataset schema: which CSV columns hold each outcome's value, indicator,
//! and covariates.
//!
//! The schema file is structured key-value text:
//!
//! ```text
//! outcomes = 2
//!
//! [outcome 1]
//! value = lwage
//! indicator = work1
//! x = 1, educ, city
//! w = 1, educ, city, hwage
//! ```
//!
//! The token `1` denotes the constant intercept; every other token names a
//! CSV header column.

use std::fmt;
use std::path::Path;

/// A covariate source: the constant one or a named CSV column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Col {
    Intercept,
    Named(String),
}

impl fmt::Display for Col {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Col::Intercept => write!(f, "1"),
            Col::Named(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeSchema {
    pub value: String,
    pub indicator: String,
    pub x: Vec<Col>,
    pub w: Vec<Col>,
}

#[derive(Debug, Clone)]
pub struct Schema {
    pub outcomes: Vec<OutcomeSchema>,
}

impl Schema {
    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    /// Render back to the canonical file format.
    pub fn to_text(&self) -> String {
        let mut s = format!("outcomes = {}\n", self.outcomes.len());
        for (i, o) in self.outcomes.iter().enumerate() {
            s.push_str(&format!("\n[outcome {}]\n", i + 1));
            s.push_str(&format!("value = {}\n", o.value));
            s.push_str(&format!("indicator = {}\n", o.indicator));
            let xs: Vec<String> = o.x.iter().map(|c| c.to_string()).collect();
            let ws: Vec<String> = o.w.iter().map(|c| c.to_string()).collect();
            s.push_str(&format!("x = {}\n", xs.join(", ")));
            s.push_str(&format!("w = {}\n", ws.join(", ")));
        }
        s
    }
}

fn parse_col(tok: &str) -> Col {
    if tok == "1" {
        Col::Intercept
    } else {
        Col::Named(tok.to_string())
    }
}

fn parse_cols(value: &str) -> Vec<Col> {
    value
        .split(',')
        .map(|t| parse_col(t.trim()))
        .filter(|c| !matches!(c, Col::Named(n) if n.is_empty()))
        .collect()
}

/// Parse a schema file; errors carry the offending line number.
pub fn parse_schema(text: &str, path: &Path) -> Result<Schema, String> {
    let mut declared: Option<usize> = None;
    let mut outcomes: Vec<(usize, Option<String>, Option<String>, Vec<Col>, Vec<Col>)> = Vec::new();
    let mut current: Option<usize> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(section) = line.strip_prefix('[') {
            let section = section.strip_suffix(']').ok_or_else(|| {
                format!("{}:{lineno}: unterminated section header", path.display())
            })?;
            let idx: usize = section
                .trim()
                .strip_prefix("outcome")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    format!(
                        "{}:{lineno}: expected [outcome <k>], got [{section}]",
                        path.display()
                    )
                })?;
            if idx == 0 || idx != outcomes.len() + 1 {
                return Err(format!(
                    "{}:{lineno}: outcome sections must be numbered consecutively from 1",
                    path.display()
                ));
            }
            outcomes.push((lineno, None, None, Vec::new(), Vec::new()));
            current = Some(outcomes.len() - 1);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            format!(
                "{}:{lineno}: expected 'key = value', got '{line}'",
                path.display()
            )
        })?;
        let key = key.trim();
        let value = value.trim();
        match (key, current) {
            ("outcomes", _) => {
                declared = Some(value.parse().map_err(|_| {
                    format!("{}:{lineno}: outcomes must be an integer", path.display())
                })?);
            }
            ("value", Some(i)) => outcomes[i].1 = Some(value.to_string()),
            ("indicator", Some(i)) => outcomes[i].2 = Some(value.to_string()),
            ("x", Some(i)) => outcomes[i].3 = parse_cols(value),
            ("w", Some(i)) => outcomes[i].4 = parse_cols(value),
            (_, None) => {
                return Err(format!(
                    "{}:{lineno}: '{key}' outside an [outcome k] section",
                    path.display()
                ))
            }
            _ => {
                return Err(format!("{}:{lineno}: unknown key '{key}'", path.display()));
            }
        }
    }

    let declared =
        declared.ok_or_else(|| format!("{}: missing 'outcomes = <k>' line", path.display()))?;
    if declared != outcomes.len() || declared == 0 {
        return Err(format!(
            "{}: declared {declared} outcomes but found {} sections",
            path.display(),
            outcomes.len()
        ));
    }
    let mut built = Vec::with_capacity(declared);
    for (k, (lineno, value, indicator, x, w)) in outcomes.into_iter().enumerate() {
        let value = value.ok_or_else(|| {
            format!(
                "{}:{lineno}: outcome {} missing 'value'",
                path.display(),
                k + 1
            )
        })?;
        let indicator = indicator.ok_or_else(|| {
            format!(
                "{}:{lineno}: outcome {} missing 'indicator'",
                path.display(),
                k + 1
            )
        })?;
        if x.is_empty() || w.is_empty() {
            return Err(format!(
                "{}:{lineno}: outcome {} needs non-empty x and w lists",
                path.display(),
                k + 1
            ));
        }
        built.push(OutcomeSchema {
            value,
            indicator,
            x,
            w,
        });
    }
    Ok(Schema { outcomes: built })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# demo
outcomes = 2

[outcome 1]
value = lwage
indicator = work1
x = 1, educ
w = 1, educ, kids

[outcome 2]
value = lhours
indicator = work2
x = 1, educ
w = 1, educ, tax
";

    #[test]
    fn parses_and_round_trips() {
        let schema = parse_schema(SAMPLE, Path::new("s.txt")).unwrap();
        assert_eq!(schema.n_outcomes(), 2);
        assert_eq!(
            schema.outcomes[0].x,
            vec![Col::Intercept, Col::Named("educ".into())]
        );
        assert_eq!(schema.outcomes[1].w.len(), 3);
        let text = schema.to_text();
        let again = parse_schema(&text, Path::new("s.txt")).unwrap();
        assert_eq!(again.outcomes[1].value, "lhours");
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_schema("outcomes = 1\n", Path::new("s")).is_err());
        assert!(parse_schema("outcomes = 1\n[outcome 2]\n", Path::new("s")).is_err());
        let err = parse_schema("outcomes = x\n", Path::new("s")).unwrap_err();
        assert!(err.contains(":1:"), "{err}");
    }
}
