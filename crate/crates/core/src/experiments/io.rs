//! Plain-text formats: CSV traces, primal-dual point files, data matrices and
//! custom problem files.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block::{BlockDims, BlockVector, PrimalDualPoint};
use crate::error::{Error, Result};

/// Fixed trace columns, in order.
pub const TRACE_COLUMNS: [&str; 8] = [
    "k",
    "step_norm",
    "dist_P_sq",
    "dist_D_sq",
    "dist_M_sq",
    "kkt",
    "envelope_bound",
    "active_mask",
];

/// One CSV row; absent values are written as empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub step_norm: f64,
    #[serde(rename = "dist_P_sq")]
    pub dist_p_sq: Option<f64>,
    #[serde(rename = "dist_D_sq")]
    pub dist_d_sq: Option<f64>,
    #[serde(rename = "dist_M_sq")]
    pub dist_m_sq: Option<f64>,
    pub kkt: Option<f64>,
    pub envelope_bound: Option<f64>,
    /// One `0`/`1` per agent; empty when every agent is always active.
    pub active_mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        detail: e.to_string(),
    }
}

impl Trace {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(TRACE_COLUMNS).map_err(csv_error)?;
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_error)?;
        if header.iter().ne(TRACE_COLUMNS) {
            return Err(Error::Parse {
                line: 1,
                detail: format!("expected header {}", TRACE_COLUMNS.join(",")),
            });
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()
            .map_err(csv_error)?;
        for (idx, row) in rows.iter().enumerate() {
            if row.k != idx {
                return Err(Error::Parse {
                    line: idx + 2,
                    detail: format!("iteration index {} out of sequence", row.k),
                });
            }
        }
        Ok(Self { rows })
    }

    /// A column as a vector; fails when any entry is empty.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let v = match name {
                    "step_norm" => Some(r.step_norm),
                    "dist_P_sq" => r.dist_p_sq,
                    "dist_D_sq" => r.dist_d_sq,
                    "dist_M_sq" => r.dist_m_sq,
                    "kkt" => r.kkt,
                    "envelope_bound" => r.envelope_bound,
                    _ => return Err(Error::config(format!("no numeric trace column '{name}'"))),
                };
                v.ok_or_else(|| Error::config(format!("trace column '{name}' has empty entries")))
            })
            .collect()
    }

    /// Cumulative local updates up to each row.
    pub fn cumulative_activations(&self, m: usize) -> Vec<usize> {
        let mut total = 0;
        self.rows
            .iter()
            .map(|r| {
                if r.k > 0 {
                    total += match &r.active_mask {
                        Some(mask) => mask.bytes().filter(|&b| b == b'1').count(),
                        None => m,
                    };
                }
                total
            })
            .collect()
    }
}

pub fn mask_string(mask: &[bool]) -> String {
    mask.iter().map(|&a| if a { '1' } else { '0' }).collect()
}

/// Writes a primal-dual point:
///
/// ```text
/// # comment
/// m <blocks>
/// x <i> <values…>
/// u <i> <values…>
/// ```
///
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_point(z: &PrimalDualPoint) -> String {
    let mut out = String::from("# primal-dual point\n");
    out.push_str(&format!("m {}\n", z.x.num_blocks()));
    for (tag, v) in [("x", &z.x), ("u", &z.u)] {
        for (i, b) in v.blocks().iter().enumerate() {
            out.push_str(tag);
            out.push(' ');
            out.push_str(&i.to_string());
            for val in b.iter() {
                out.push(' ');
                out.push_str(&val.to_string());
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_point(text: &str) -> Result<PrimalDualPoint> {
    let mut m = None;
    let mut xs: Vec<Option<DVector<f64>>> = Vec::new();
    let mut us: Vec<Option<DVector<f64>>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let tag = fields.next().expect("nonempty");
        let perr = |detail: String| Error::Parse { line, detail };
        match tag {
            "m" => {
                let v: usize = fields
                    .next()
                    .ok_or_else(|| perr("missing block count".into()))?
                    .parse()
                    .map_err(|e| perr(format!("{e}")))?;
                m = Some(v);
                xs = vec![None; v];
                us = vec![None; v];
            }
            "x" | "u" => {
                let count = m.ok_or_else(|| perr("'m' line must come first".into()))?;
                let i: usize = fields
                    .next()
                    .ok_or_else(|| perr("missing block index".into()))?
                    .parse()
                    .map_err(|e| perr(format!("{e}")))?;
                if i >= count {
                    return Err(perr(format!("block {i} out of range")));
                }
                let vals = fields
                    .map(|s| s.parse::<f64>().map_err(|e| perr(format!("'{s}': {e}"))))
                    .collect::<Result<Vec<f64>>>()?;
                let slot = if tag == "x" { &mut xs[i] } else { &mut us[i] };
                if slot.replace(DVector::from_vec(vals)).is_some() {
                    return Err(perr(format!("duplicate {tag} block {i}")));
                }
            }
            other => return Err(perr(format!("unknown record '{other}'"))),
        }
    }
    let missing = |what: &str| Error::Parse {
        line: 0,
        detail: format!("missing {what}"),
    };
    if m.is_none() {
        return Err(missing("'m' line"));
    }
    let x = xs.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| missing("x block"))?;
    let u = us.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| missing("u block"))?;
    let dims = BlockDims::new(x.iter().map(|b| b.len()).collect(), u.iter().map(|b| b.len()).collect())?;
    PrimalDualPoint::new(&dims, BlockVector::from_blocks(x), BlockVector::from_blocks(u))
}

/// Whitespace-separated numeric rows, `#` comments; all rows equally long.
pub fn parse_matrix_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let row = content
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    detail: format!("'{s}': {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    detail: format!("expected {} values, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            detail: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Contents of a custom problem file.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomProblemData {
    pub primal: Vec<usize>,
    pub dual: Vec<usize>,
    pub l: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub g_linear: DVector<f64>,
}

/// Custom problem file:
///
/// ```text
/// primal <n_1> … <n_m>
/// dual <r_1> … <r_m>
/// L
/// <r rows of n values>
/// targets            (optional, r values)
/// <values…>
/// g_linear           (optional, n values)
/// <values…>
/// ```
pub fn parse_custom_problem(text: &str) -> Result<CustomProblemData> {
    let mut primal = None;
    let mut dual = None;
    let mut section = "";
    let mut l_rows: Vec<Vec<f64>> = Vec::new();
    let mut targets = Vec::new();
    let mut g_linear = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let perr = |detail: String| Error::Parse { line, detail };
        let mut fields = content.split_whitespace();
        let head = fields.next().expect("nonempty");
        let sizes = |it: std::str::SplitWhitespace<'_>| {
            it.map(|s| s.parse::<usize>().map_err(|e| perr(format!("'{s}': {e}"))))
                .collect::<Result<Vec<usize>>>()
        };
        match head {
            "primal" => primal = Some(sizes(fields)?),
            "dual" => dual = Some(sizes(fields)?),
            "L" | "targets" | "g_linear" => section = head,
            _ => {
                let vals = content
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|e| perr(format!("'{s}': {e}"))))
                    .collect::<Result<Vec<f64>>>()?;
                match section {
                    "L" => l_rows.push(vals),
                    "targets" => targets.extend(vals),
                    "g_linear" => g_linear.extend(vals),
                    _ => return Err(perr("numbers before any section header".into())),
                }
            }
        }
    }
    let primal = primal.ok_or(Error::Parse {
        line: 0,
        detail: "missing 'primal' line".into(),
    })?;
    let dual = dual.ok_or(Error::Parse {
        line: 0,
        detail: "missing 'dual' line".into(),
    })?;
    let (n, r): (usize, usize) = (primal.iter().sum(), dual.iter().sum());
    if l_rows.len() != r || l_rows.iter().any(|row| row.len() != n) {
        return Err(Error::Parse {
            line: 0,
            detail: format!("L must have {r} rows of {n} values"),
        });
    }
    let l = DMatrix::from_fn(r, n, |i, j| l_rows[i][j]);
    let targets = if targets.is_empty() { vec![0.0; r] } else { targets };
    let g_linear = if g_linear.is_empty() { vec![0.0; n] } else { g_linear };
    if targets.len() != r || g_linear.len() != n {
        return Err(Error::Parse {
            line: 0,
            detail: format!("targets need {r} values and g_linear {n}"),
        });
    }
    Ok(CustomProblemData {
        primal,
        dual,
        l,
        targets: DVector::from_vec(targets),
        g_linear: DVector::from_vec(g_linear),
    })
}
