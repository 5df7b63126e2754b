//! Custom scenario files for `simulate` and `benchmark`.
//!
//! ```text
//! outcomes = 2
//! sigma = 1.5
//! rho = 0.0
//! psi = 1, 0.3; 0.3, 1
//! beta 1 = 1.0, 0.5
//! gamma 1 = 0.8, 0.4, -0.3
//! laws 1 = normal, normal
//! beta 2 = -0.5, 1.0
//! gamma 2 = 0.6, -0.2, 0.5
//! laws 2 = normal, t6
//! ```
//!
//! The generator draws two raw covariates per outcome with
//! w_r = (1, w_r1, w_r2) and x_r = (1, w_r1), so beta vectors have length 2
//! and gamma vectors length 3. Law tokens: `normal`, `t<df>`,
//! `uniform(<lo>,<hi>)`.

use std::path::Path;

use mselect_core::sim::{CovariateLaw, Scenario, ScenarioName};
use mselect_core::{DMatrix, DVector, ModelParams, SpdMatrix};

/// Split on commas that are not inside parentheses (law arguments carry
/// their own commas).
fn split_outside_parens(value: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in value.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(ch),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_f64_list(value: &str, ctx: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("{ctx}: '{}' is not a number", t.trim()))
        })
        .collect()
}

fn parse_law(tok: &str, ctx: &str) -> Result<CovariateLaw, String> {
    let t = tok.trim();
    if t == "normal" {
        return Ok(CovariateLaw::StdNormal);
    }
    if let Some(df) = t.strip_prefix('t') {
        let df: f64 = df
            .parse()
            .map_err(|_| format!("{ctx}: bad degrees of freedom in '{t}'"))?;
        return Ok(CovariateLaw::StudentT { df });
    }
    if let Some(rest) = t.strip_prefix("uniform(") {
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("{ctx}: unterminated uniform(...) in '{t}'"))?;
        let parts = parse_f64_list(inner, ctx)?;
        if parts.len() != 2 || parts[0] >= parts[1] {
            return Err(format!("{ctx}: uniform needs lo < hi"));
        }
        return Ok(CovariateLaw::Uniform {
            lo: parts[0],
            hi: parts[1],
        });
    }
    Err(format!(
        "{ctx}: unknown law '{t}' (use normal, t<df>, uniform(lo,hi))"
    ))
}

/// Parse a custom scenario file. `n` and the missing-rate target are set by
/// the caller's flags, not the file.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, String> {
    let mut outcomes: Option<usize> = None;
    let mut sigma: Option<f64> = None;
    let mut rho: Option<f64> = None;
    let mut psi_rows: Option<Vec<Vec<f64>>> = None;
    let mut beta: Vec<Option<DVector<f64>>> = Vec::new();
    let mut gamma: Vec<Option<DVector<f64>>> = Vec::new();
    let mut laws: Vec<Option<(CovariateLaw, CovariateLaw)>> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        let ctx = format!("{}:{lineno}", path.display());
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{ctx}: expected 'key = value'"))?;
        let key = key.trim();
        let value = value.trim();
        fn ensure_len<T>(v: &mut Vec<Option<T>>, k: usize) {
            while v.len() < k {
                v.push(None);
            }
        }
        if key == "outcomes" {
            let k: usize = value.parse().map_err(|_| format!("{ctx}: bad outcomes"))?;
            outcomes = Some(k);
            beta.resize(k, None);
            gamma.resize(k, None);
            laws.resize(k, None);
        } else if key == "sigma" {
            sigma = Some(value.parse().map_err(|_| format!("{ctx}: bad sigma"))?);
        } else if key == "rho" {
            rho = Some(value.parse().map_err(|_| format!("{ctx}: bad rho"))?);
        } else if key == "psi" {
            let rows: Result<Vec<Vec<f64>>, String> = value
                .split(';')
                .map(|row| parse_f64_list(row, &ctx))
                .collect();
            psi_rows = Some(rows?);
        } else if let Some(idx) = key.strip_prefix("beta ") {
            let k: usize = idx
                .trim()
                .parse()
                .map_err(|_| format!("{ctx}: bad outcome index"))?;
            ensure_len(&mut beta, k);
            beta[k - 1] = Some(DVector::from_column_slice(&parse_f64_list(value, &ctx)?));
        } else if let Some(idx) = key.strip_prefix("gamma ") {
            let k: usize = idx
                .trim()
                .parse()
                .map_err(|_| format!("{ctx}: bad outcome index"))?;
            ensure_len(&mut gamma, k);
            gamma[k - 1] = Some(DVector::from_column_slice(&parse_f64_list(value, &ctx)?));
        } else if let Some(idx) = key.strip_prefix("laws ") {
            let k: usize = idx
                .trim()
                .parse()
                .map_err(|_| format!("{ctx}: bad outcome index"))?;
            let toks = split_outside_parens(value);
            if toks.len() != 2 {
                return Err(format!("{ctx}: laws need exactly two entries"));
            }
            ensure_len(&mut laws, k);
            laws[k - 1] = Some((parse_law(&toks[0], &ctx)?, parse_law(&toks[1], &ctx)?));
        } else {
            return Err(format!("{ctx}: unknown key '{key}'"));
        }
    }

    let k = outcomes.ok_or_else(|| format!("{}: missing 'outcomes'", path.display()))?;
    let sigma = sigma.ok_or_else(|| format!("{}: missing 'sigma'", path.display()))?;
    let rho = rho.ok_or_else(|| format!("{}: missing 'rho'", path.display()))?;
    let psi_rows = psi_rows.ok_or_else(|| format!("{}: missing 'psi'", path.display()))?;
    if psi_rows.len() != k || psi_rows.iter().any(|r| r.len() != k) {
        return Err(format!("{}: psi must be {k}x{k}", path.display()));
    }
    let psi = SpdMatrix::new(DMatrix::from_fn(k, k, |i, j| psi_rows[i][j]))
        .map_err(|e| format!("{}: psi: {e}", path.display()))?;
    let mut betas = Vec::with_capacity(k);
    let mut gammas = Vec::with_capacity(k);
    let mut all_laws = Vec::with_capacity(k);
    for r in 0..k {
        let b = beta
            .get(r)
            .cloned()
            .flatten()
            .ok_or_else(|| format!("{}: missing 'beta {}'", path.display(), r + 1))?;
        let g = gamma
            .get(r)
            .cloned()
            .flatten()
            .ok_or_else(|| format!("{}: missing 'gamma {}'", path.display(), r + 1))?;
        if b.len() != 2 || g.len() != 3 {
            return Err(format!(
                "{}: the generator draws covariates as x=(1,w1), w=(1,w1,w2); beta {} must have 2 \
                 entries and gamma {} must have 3",
                path.display(),
                r + 1,
                r + 1
            ));
        }
        betas.push(b);
        gammas.push(g);
        all_laws.push(
            laws.get(r)
                .cloned()
                .flatten()
                .unwrap_or((CovariateLaw::StdNormal, CovariateLaw::StdNormal)),
        );
    }
    let true_params = ModelParams::new(betas, gammas, sigma, rho, psi)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Scenario {
        name: ScenarioName::Custom,
        true_params,
        covariate_laws: all_laws,
        n: 100,
        target_missing_rate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_custom_scenario() {
        let text = "\
outcomes = 2
sigma = 1.5
rho = 0.0
psi = 1, 0.3; 0.3, 1
beta 1 = 1.0, 0.5
gamma 1 = 0.8, 0.4, -0.3
laws 1 = normal, t6
beta 2 = -0.5, 1.0
gamma 2 = 0.6, -0.2, 0.5
laws 2 = uniform(-1,1), normal
";
        let sc = parse_scenario(text, Path::new("custom.txt")).unwrap();
        assert_eq!(sc.true_params.n_outcomes(), 2);
        assert_eq!(sc.true_params.sigma, 1.5);
        assert_eq!(sc.covariate_laws[0].1, CovariateLaw::StudentT { df: 6.0 });
        assert_eq!(
            sc.covariate_laws[1].0,
            CovariateLaw::Uniform { lo: -1.0, hi: 1.0 }
        );
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_scenario("outcomes = 2\nsigma = x\n", Path::new("f")).unwrap_err();
        assert!(err.contains("f:2"), "{err}");
    }
}
