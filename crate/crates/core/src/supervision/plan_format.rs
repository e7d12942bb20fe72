//! Line-oriented text serialization of supervision plans.
//!
//! ```text
//! # segros supervision plan v1
//! record n_patches=10 gamma=0.7 eta=0.3 seed=7 drop_loss=none
//! hint 7 8 9
//! seen 0 1 2
//! masked 3 4 5 6 7 8 9
//! end
//! ```
//!
//! Records with a drop-loss ratio carry an extra `targets` line after
//! `masked`. Index lists are sorted ascending. Floats use the shortest
//! representation that round-trips.

use std::fmt::Write as _;

use super::SupervisionPlan;
use crate::error::{invalid_input, Result};

pub const PLAN_HEADER: &str = "# segros supervision plan v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub plan: SupervisionPlan,
    pub seed: u64,
}

fn join(idx: &[usize]) -> String {
    let mut s = String::new();
    for i in idx {
        let _ = write!(s, " {i}");
    }
    s
}

pub fn write_plans(records: &[PlanRecord]) -> String {
    let mut out = String::from(PLAN_HEADER);
    out.push('\n');
    for r in records {
        let p = &r.plan;
        let drop = p
            .drop_loss
            .map_or_else(|| "none".to_string(), |d| d.to_string());
        let _ = writeln!(
            out,
            "record n_patches={} gamma={} eta={} seed={} drop_loss={}",
            p.n_patches, p.gamma, p.eta, r.seed, drop
        );
        let _ = writeln!(out, "hint{}", join(&p.hint_indices));
        let _ = writeln!(out, "seen{}", join(&p.seen_indices));
        let _ = writeln!(out, "masked{}", join(&p.masked_indices));
        if p.drop_loss.is_some() {
            let _ = writeln!(out, "targets{}", join(&p.loss_target_indices));
        }
        out.push_str("end\n");
    }
    out
}

fn field<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    key: &str,
    line: usize,
) -> Result<&'a str> {
    let tok = tokens
        .next()
        .ok_or_else(|| invalid_input(format!("line {line}: missing `{key}=`")))?;
    tok.strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| invalid_input(format!("line {line}: expected `{key}=`, found `{tok}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| invalid_input(format!("line {line}: bad number `{s}`")))
}

fn index_list(text: &str, key: &str, line: usize, n: usize) -> Result<Vec<usize>> {
    let mut tokens = text.split(' ');
    if tokens.next() != Some(key) {
        return Err(invalid_input(format!("line {line}: expected `{key}` list")));
    }
    let idx: Vec<usize> = tokens.map(|t| parse_num(t, line)).collect::<Result<_>>()?;
    if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&i| i >= n) {
        return Err(invalid_input(format!(
            "line {line}: `{key}` must be strictly ascending indices below {n}"
        )));
    }
    Ok(idx)
}

pub fn parse_plans(text: &str) -> Result<Vec<PlanRecord>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, PLAN_HEADER)) => {}
        _ => return Err(invalid_input("missing plan header line")),
    }
    let mut records = Vec::new();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| invalid_input(format!("unexpected end of file, expected {what}")))
    };
    while let Ok((ln, line)) = next("record") {
        let mut tokens = line.split(' ');
        if tokens.next() != Some("record") {
            return Err(invalid_input(format!("line {ln}: expected `record`")));
        }
        let n: usize = parse_num(field(&mut tokens, "n_patches", ln)?, ln)?;
        let gamma: f64 = parse_num(field(&mut tokens, "gamma", ln)?, ln)?;
        let eta: f64 = parse_num(field(&mut tokens, "eta", ln)?, ln)?;
        let seed: u64 = parse_num(field(&mut tokens, "seed", ln)?, ln)?;
        let drop_loss = match field(&mut tokens, "drop_loss", ln)? {
            "none" => None,
            d => Some(parse_num::<f64>(d, ln)?),
        };
        if tokens.next().is_some() {
            return Err(invalid_input(format!("line {ln}: trailing fields")));
        }
        let (ln, l) = next("hint")?;
        let hint_indices = index_list(l, "hint", ln, n)?;
        let (ln, l) = next("seen")?;
        let seen_indices = index_list(l, "seen", ln, n)?;
        let (ln, l) = next("masked")?;
        let masked_indices = index_list(l, "masked", ln, n)?;
        let loss_target_indices = if drop_loss.is_some() {
            let (ln, l) = next("targets")?;
            index_list(l, "targets", ln, n)?
        } else {
            masked_indices.clone()
        };
        let (ln, l) = next("end")?;
        if l != "end" {
            return Err(invalid_input(format!("line {ln}: expected `end`")));
        }
        records.push(PlanRecord {
            plan: SupervisionPlan {
                n_patches: n,
                hint_indices,
                seen_indices,
                masked_indices,
                gamma,
                eta,
                loss_target_indices,
                drop_loss,
            },
            seed,
        });
    }
    Ok(records)
}
