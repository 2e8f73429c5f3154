//! Parser for the test-function mini-language.
//!
//! A spec is a `+`-joined list of terms:
//!
//! - `const:a` adds `a`
//! - `cos:k[:amp]` adds `amp·cos(2πk·)` (amp defaults to 1)
//! - `sin:k[:amp]` adds `amp·sin(2πk·)`
//! - `coeffs:a0;a1,a2,…;b1,b2,…` sets raw coefficients (groups may be empty)
//!
//! Repeated modes add up, so `cos:1+cos:1:0.5` is `1.5·cos(2π·)`.

use superito::FourierField;

use crate::CliError;

fn number(term: &str, s: &str) -> Result<f64, CliError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad number `{s}` in field term `{term}`")))?;
    if !v.is_finite() {
        return Err(CliError::Config(format!("non-finite value in field term `{term}`")));
    }
    Ok(v)
}

fn list(term: &str, s: &str) -> Result<Vec<f64>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| number(term, v)).collect()
}

fn mode(term: &str, s: &str) -> Result<usize, CliError> {
    match s.trim().parse::<usize>() {
        Ok(k) if k > 0 => Ok(k),
        _ => Err(CliError::Config(format!("mode must be a positive integer in `{term}`"))),
    }
}

pub fn parse_field(spec: &str) -> Result<FourierField<f64>, CliError> {
    if spec.trim().is_empty() {
        return Err(CliError::Config("empty field spec".into()));
    }
    let mut a0 = 0.0;
    let mut cos: Vec<f64> = Vec::new();
    let mut sin: Vec<f64> = Vec::new();
    let bump = |v: &mut Vec<f64>, k: usize, amp: f64| {
        if v.len() < k {
            v.resize(k, 0.0);
        }
        v[k - 1] += amp;
    };
    for term in spec.split('+') {
        let term = term.trim();
        let (kind, rest) = term
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("field term `{term}` lacks a `kind:` prefix")))?;
        match kind {
            "const" => a0 += number(term, rest)?,
            "cos" | "sin" => {
                let mut parts = rest.split(':');
                let k = mode(term, parts.next().unwrap_or(""))?;
                let amp = match parts.next() {
                    Some(a) => number(term, a)?,
                    None => 1.0,
                };
                if parts.next().is_some() {
                    return Err(CliError::Config(format!("too many fields in `{term}`")));
                }
                bump(if kind == "cos" { &mut cos } else { &mut sin }, k, amp);
            }
            "coeffs" => {
                let groups: Vec<&str> = rest.split(';').collect();
                if groups.is_empty() || groups.len() > 3 {
                    return Err(CliError::Config(format!("`{term}` needs `a0;a1,..;b1,..`")));
                }
                a0 += number(term, groups[0])?;
                for (k, v) in list(term, groups.get(1).copied().unwrap_or(""))?.into_iter().enumerate() {
                    bump(&mut cos, k + 1, v);
                }
                for (k, v) in list(term, groups.get(2).copied().unwrap_or(""))?.into_iter().enumerate() {
                    bump(&mut sin, k + 1, v);
                }
            }
            other => return Err(CliError::Config(format!("unknown field kind `{other}`"))),
        }
    }
    Ok(FourierField::from_parts(a0, cos, sin))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_terms() {
        let f = parse_field("const:1 + cos:1:0.5 + sin:2").unwrap();
        assert_eq!(f.a0(), 1.0);
        assert_eq!(f.cos_coeff(1), 0.5);
        assert_eq!(f.sin_coeff(2), 1.0);
        assert_eq!(f.cos_coeff(2), 0.0);
        let g = parse_field("coeffs:0.1;0.5;0,0.3").unwrap();
        assert_eq!(g, FourierField::from_parts(0.1, vec![0.5], vec![0.0, 0.3]));
        let h = parse_field("cos:1+cos:1:-1").unwrap();
        assert!(h.is_constant());
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "cos:0", "tan:1", "const:x", "cos:1:2:3", "const", "const:inf"] {
            assert!(parse_field(bad).is_err(), "{bad}");
        }
    }
}
