//! Sparse SDPA (`.dat-s`) reader and writer.
//!
//! SDPA states `minimize c'x  s.t.  sum_i F_i x_i - F_0 >= 0`. A
//! [`ConicProgram`] block `F0 + sum_k y_k F_k` is therefore written with its
//! constant negated. Linear equalities `a'y = b` are written as pairs of
//! diagonal entries `a'y - b >= 0`, `-(a'y - b) >= 0` in one trailing
//! diagonal block, and folded back into equalities when read. Maximization
//! problems are written with the objective negated (noted in a comment).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::program::{ConicProgram, EqualityRow, LmiBlock, Sense};

#[derive(Debug, Error)]
pub enum SdpaError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

/// Writes `program` in sparse SDPA format. Output is fully determined by
/// the program (entries sorted, duplicates merged).
pub fn write_sdpa<W: Write>(program: &ConicProgram, mut out: W) -> io::Result<()> {
    let sign = program.sense.sign();
    let mut text = String::new();
    let sense = match program.sense {
        Sense::Min => "min",
        Sense::Max => "max (objective negated below)",
    };
    let _ = writeln!(text, "\"sosexit conic program, sense {sense}");
    for (j, b) in program.blocks.iter().enumerate() {
        let _ = writeln!(text, "* block {}: {}", j + 1, b.label);
    }
    let p = program.equalities.len();
    if p > 0 {
        let _ = writeln!(
            text,
            "* block {}: {} equalities as +/- diagonal pairs",
            program.blocks.len() + 1,
            p
        );
    }
    let nblocks = program.blocks.len() + usize::from(p > 0);
    let _ = writeln!(text, "{}", program.num_vars);
    let _ = writeln!(text, "{nblocks}");
    let mut structure: Vec<String> = program.blocks.iter().map(|b| b.size.to_string()).collect();
    if p > 0 {
        structure.push(format!("-{}", 2 * p));
    }
    let _ = writeln!(text, "{}", structure.join(" "));
    let c: Vec<String> = program
        .objective
        .iter()
        .map(|v| fmt_num(sign * v))
        .collect();
    let _ = writeln!(text, "{}", c.join(" "));

    // (matrix, block, row, col) -> value, 1-based
    let mut entries: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    for (j, b) in program.blocks.iter().enumerate() {
        for &(r, col, v) in &b.constant {
            *entries.entry((0, j + 1, r + 1, col + 1)).or_insert(0.0) -= v;
        }
        for &(k, r, col, v) in &b.terms {
            *entries.entry((k + 1, j + 1, r + 1, col + 1)).or_insert(0.0) += v;
        }
    }
    let eq_block = program.blocks.len() + 1;
    for (r, row) in program.equalities.iter().enumerate() {
        let (d1, d2) = (2 * r + 1, 2 * r + 2);
        *entries.entry((0, eq_block, d1, d1)).or_insert(0.0) += row.rhs;
        *entries.entry((0, eq_block, d2, d2)).or_insert(0.0) -= row.rhs;
        for &(k, a) in &row.coeffs {
            *entries.entry((k + 1, eq_block, d1, d1)).or_insert(0.0) += a;
            *entries.entry((k + 1, eq_block, d2, d2)).or_insert(0.0) -= a;
        }
    }
    for ((m, b, i, j), v) in entries {
        if v != 0.0 {
            let _ = writeln!(text, "{m} {b} {i} {j} {}", fmt_num(v));
        }
    }
    out.write_all(text.as_bytes())
}

fn fmt_num(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:e}")
}

/// Reads a sparse SDPA file as a minimization [`ConicProgram`].
pub fn read_sdpa<R: BufRead>(input: R) -> Result<ConicProgram, SdpaError> {
    let mut header: Vec<(usize, String)> = Vec::new();
    let mut body: Vec<(usize, String)> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('"') || t.starts_with('*') {
            continue;
        }
        let cleaned: String = t
            .chars()
            .map(|c| if "{}(),".contains(c) { ' ' } else { c })
            .collect();
        if header.len() < 4 {
            header.push((lineno, cleaned));
        } else {
            body.push((lineno, cleaned));
        }
    }
    if header.len() < 4 {
        return Err(SdpaError::Syntax {
            line: header.last().map_or(0, |h| h.0),
            msg: "incomplete header".into(),
        });
    }
    let syntax = |line: usize, msg: &str| SdpaError::Syntax {
        line,
        msg: msg.to_string(),
    };
    let first_token = |(line, text): &(usize, String)| -> Result<i64, SdpaError> {
        text.split_whitespace()
            .next()
            .and_then(|t| t.parse::<i64>().ok())
            .ok_or_else(|| syntax(*line, "expected an integer"))
    };
    let m = first_token(&header[0])?;
    let nblocks = first_token(&header[1])?;
    if m < 0 || nblocks <= 0 {
        return Err(syntax(header[0].0, "bad dimensions"));
    }
    let (m, nblocks) = (m as usize, nblocks as usize);
    let structure: Vec<i64> = header[2]
        .1
        .split_whitespace()
        .take(nblocks)
        .map(|t| t.parse::<f64>().map(|v| v as i64))
        .collect::<Result<_, _>>()
        .map_err(|_| syntax(header[2].0, "bad block structure"))?;
    if structure.len() != nblocks || structure.contains(&0) {
        return Err(syntax(header[2].0, "bad block structure"));
    }
    let mut c_tokens: Vec<f64> = header[3]
        .1
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| syntax(header[3].0, "bad objective vector"))?;
    // the objective may wrap over several lines
    let mut body_iter = body.into_iter().peekable();
    while c_tokens.len() < m {
        let Some((line, text)) = body_iter.next() else {
            return Err(syntax(header[3].0, "objective vector too short"));
        };
        for t in text.split_whitespace() {
            c_tokens.push(t.parse().map_err(|_| syntax(line, "bad objective vector"))?);
        }
    }
    c_tokens.truncate(m);

    // dense blocks keep their index; diagonal blocks become 1x1 blocks
    enum Slot {
        Dense(LmiBlock),
        Diagonal(Vec<LmiBlock>),
    }
    let mut slots: Vec<Slot> = structure
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if s > 0 {
                Slot::Dense(LmiBlock::new(s as usize, format!("block {}", j + 1)))
            } else {
                Slot::Diagonal(
                    (0..(-s) as usize)
                        .map(|d| LmiBlock::new(1, format!("block {} diag {}", j + 1, d + 1)))
                        .collect(),
                )
            }
        })
        .collect();
    for (line, text) in body_iter {
        let tok: Vec<&str> = text.split_whitespace().collect();
        if tok.len() < 5 {
            return Err(syntax(line, "expected 'matno blkno i j value'"));
        }
        let parse_idx = |t: &str| t.parse::<usize>().map_err(|_| syntax(line, "bad index"));
        let matno = parse_idx(tok[0])?;
        let blk = parse_idx(tok[1])?;
        let i = parse_idx(tok[2])?;
        let j = parse_idx(tok[3])?;
        let v: f64 = tok[4].parse().map_err(|_| syntax(line, "bad value"))?;
        if matno > m || blk == 0 || blk > nblocks || i == 0 || j == 0 {
            return Err(syntax(line, "index out of range"));
        }
        let (target, r, col) = match &mut slots[blk - 1] {
            Slot::Dense(b) => {
                if i > b.size || j > b.size {
                    return Err(syntax(line, "entry outside block"));
                }
                (b, i - 1, j - 1)
            }
            Slot::Diagonal(ds) => {
                if i != j || i > ds.len() {
                    return Err(syntax(line, "off-diagonal entry in diagonal block"));
                }
                (&mut ds[i - 1], 0, 0)
            }
        };
        if matno == 0 {
            target.add_constant(r, col, -v);
        } else {
            target.add_term(matno - 1, r, col, v);
        }
    }

    let mut program = ConicProgram::new(m, Sense::Min);
    program.objective = c_tokens;
    let mut scalars = Vec::new();
    for slot in slots {
        match slot {
            Slot::Dense(b) => program.blocks.push(b),
            Slot::Diagonal(ds) => scalars.extend(ds),
        }
    }
    fold_equalities(&mut program, scalars);
    Ok(program)
}

fn scalar_key(b: &LmiBlock, negate: bool) -> (u64, Vec<(usize, u64)>) {
    let s = if negate { -1.0 } else { 1.0 };
    let c: f64 = b.constant.iter().map(|e| e.2).sum::<f64>() * s;
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for &(k, _, _, v) in &b.terms {
        *acc.entry(k).or_insert(0.0) += v;
    }
    let terms = acc
        .into_iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|(k, v)| (k, (s * v).to_bits()))
        .collect();
    ((c + 0.0).to_bits(), terms)
}

/// Pairs of scalar constraints `f >= 0`, `-f >= 0` become `f = 0`.
fn fold_equalities(program: &mut ConicProgram, scalars: Vec<LmiBlock>) {
    let mut open: HashMap<(u64, Vec<(usize, u64)>), Vec<usize>> = HashMap::new();
    let mut paired = vec![None; scalars.len()];
    for (idx, b) in scalars.iter().enumerate() {
        if b.terms.is_empty() {
            continue;
        }
        let neg = scalar_key(b, true);
        if let Some(list) = open.get_mut(&neg) {
            if let Some(partner) = list.pop() {
                paired[partner] = Some(idx);
                paired[idx] = Some(partner);
                continue;
            }
        }
        open.entry(scalar_key(b, false)).or_default().push(idx);
    }
    for (idx, b) in scalars.into_iter().enumerate() {
        match paired[idx] {
            Some(partner) if partner > idx => {
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                for &(k, _, _, v) in &b.terms {
                    *acc.entry(k).or_insert(0.0) += v;
                }
                let constant: f64 = b.constant.iter().map(|e| e.2).sum();
                program.equalities.push(EqualityRow {
                    coeffs: acc.into_iter().filter(|(_, v)| *v != 0.0).collect(),
                    rhs: -constant,
                });
            }
            Some(_) => {}
            None => program.blocks.push(b),
        }
    }
}
