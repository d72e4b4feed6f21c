//! Butcher tableaus: data model, builtin coefficient sets, and structural checks.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Diagonal coefficient shared by ESDIRK34, ESDIRK32a, and ESDIRK43b:
/// the root of `L₃(1/γ) = 0` inside the A-stability window.
#[allow(clippy::excessive_precision)] // stored to its full printed length
pub const GAMMA_L3: f64 = 0.43586652150845899942;

/// Row-sum consistency tolerance.
pub const CONSISTENCY_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum TableauError {
    #[error("unknown method `{0}`; valid names: {}", Method::NAMES.join(", "))]
    UnknownMethod(String),
    #[error("tableau parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// The builtin ESDIRK methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Esdirk12,
    Esdirk23,
    Esdirk34,
    Esdirk32a,
    Esdirk32b,
    Esdirk43b,
    Esdirk32c,
    Esdirk45c,
}

impl Method {
    pub const NAMES: [&'static str; 8] = [
        "ESDIRK12",
        "ESDIRK23",
        "ESDIRK34",
        "ESDIRK32a",
        "ESDIRK32b",
        "ESDIRK43b",
        "ESDIRK32c",
        "ESDIRK45c",
    ];

    pub const ALL: [Method; 8] = [
        Method::Esdirk12,
        Method::Esdirk23,
        Method::Esdirk34,
        Method::Esdirk32a,
        Method::Esdirk32b,
        Method::Esdirk43b,
        Method::Esdirk32c,
        Method::Esdirk45c,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Esdirk12 => "ESDIRK12",
            Method::Esdirk23 => "ESDIRK23",
            Method::Esdirk34 => "ESDIRK34",
            Method::Esdirk32a => "ESDIRK32a",
            Method::Esdirk32b => "ESDIRK32b",
            Method::Esdirk43b => "ESDIRK43b",
            Method::Esdirk32c => "ESDIRK32c",
            Method::Esdirk45c => "ESDIRK45c",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = TableauError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| TableauError::UnknownMethod(s.to_string()))
    }
}

/// Structural flags derived from the tableau coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableauFlags {
    /// Explicit first stage, shared diagonal γ on stages 2..s.
    pub esdirk: bool,
    /// Last row of A equals the advancing weights b.
    pub stiffly_accurate: bool,
    /// Some stage i has cᵢ = 1 and row i of A equal to b, so the next
    /// step's first stage derivative is already available.
    pub fsal: bool,
    /// All abscissae lie inside [0, 1]; quadrature points stay within the step.
    pub event_safe: bool,
    /// The embedded order is not trusted for step control (ESDIRK45c).
    pub embedded_order_uncertain: bool,
}

/// A Runge-Kutta coefficient bundle with optional embedded weights.
#[derive(Debug, Clone)]
pub struct ButcherTableau {
    pub name: String,
    pub s: usize,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub b_hat: Option<DVector<f64>>,
    /// Error weights d = b − b̂.
    pub d: Option<DVector<f64>>,
    pub c: DVector<f64>,
    pub gamma: f64,
    /// Advancing order (0 when unknown, e.g. parsed from a file).
    pub p: usize,
    /// Embedded order (0 when unknown or absent).
    pub p_hat: usize,
    pub flags: TableauFlags,
    /// 1-based index of the stage whose value is x_{n+1}: the stage with
    /// cᵢ = 1 whose A-row equals b. Equals s for strictly stiffly accurate
    /// methods; 3 for ESDIRK32b where the fourth stage only feeds the
    /// embedded estimator.
    pub solution_stage: Option<usize>,
}

impl ButcherTableau {
    /// Assembles a tableau from raw parts, deriving structural flags.
    pub fn from_parts(
        name: impl Into<String>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        b_hat: Option<DVector<f64>>,
        c: DVector<f64>,
        p: usize,
        p_hat: usize,
    ) -> Self {
        let s = b.len();
        assert_eq!(a.nrows(), s);
        assert_eq!(a.ncols(), s);
        assert_eq!(c.len(), s);
        let gamma = if s > 1 { a[(1, 1)] } else { 0.0 };
        let d = b_hat.as_ref().map(|bh| &b - bh);

        let mut esdirk = a[(0, 0)] == 0.0 && c[0] == 0.0;
        for i in 1..s {
            if (a[(i, i)] - gamma).abs() > 1e-15 {
                esdirk = false;
            }
            for j in (i + 1)..s {
                if a[(i, j)] != 0.0 {
                    esdirk = false;
                }
            }
        }
        let row_matches_b = |i: usize| (0..s).all(|j| (a[(i, j)] - b[j]).abs() <= 1e-15);
        let stiffly_accurate = row_matches_b(s - 1);
        let solution_stage = (0..s)
            .rev()
            .find(|&i| (c[i] - 1.0).abs() <= 1e-15 && row_matches_b(i))
            .map(|i| i + 1);
        let event_safe = c.iter().all(|&ci| (-1e-15..=1.0 + 1e-15).contains(&ci));

        ButcherTableau {
            name: name.into(),
            s,
            a,
            b,
            b_hat,
            d,
            c,
            gamma,
            p,
            p_hat,
            flags: TableauFlags {
                esdirk,
                stiffly_accurate,
                fsal: solution_stage.is_some(),
                event_safe,
                embedded_order_uncertain: false,
            },
            solution_stage,
        }
    }

    /// Returns the builtin tableau for `name`.
    pub fn builtin(name: Method) -> ButcherTableau {
        match name {
            Method::Esdirk12 => esdirk12(),
            Method::Esdirk23 => esdirk23(),
            Method::Esdirk34 => esdirk34(),
            Method::Esdirk32a => esdirk32a(),
            Method::Esdirk32b => esdirk32b(),
            Method::Esdirk43b => esdirk43b(),
            Method::Esdirk32c => esdirk32c(),
            Method::Esdirk45c => esdirk45c(),
        }
    }

    /// Looks up a builtin by its string name.
    pub fn builtin_by_name(name: &str) -> Result<ButcherTableau, TableauError> {
        Ok(ButcherTableau::builtin(name.parse::<Method>()?))
    }

    /// Row-sum consistency check: max |Σⱼ aᵢⱼ − cᵢ| over rows, pass iff ≤ 1e-13.
    pub fn check_consistency(&self) -> CheckReport {
        let rows: Vec<RowResidual> = (0..self.s)
            .map(|i| {
                let sum: f64 = (0..self.s).map(|j| self.a[(i, j)]).sum();
                RowResidual {
                    index: i + 1,
                    residual: (sum - self.c[i]).abs(),
                }
            })
            .collect();
        CheckReport::from_rows("consistency", rows, CONSISTENCY_TOL)
    }

    /// Stage-order-2 check for interior stages: |Σⱼ aᵢⱼ cⱼ − cᵢ²/2| for
    /// i = 2..s−1, plus the implied c₂ = 2γ relation when stage 2 is interior.
    pub fn check_stage_order_2(&self) -> CheckReport {
        let mut rows = Vec::new();
        for i in 1..self.s.saturating_sub(1) {
            let lhs: f64 = (0..self.s).map(|j| self.a[(i, j)] * self.c[j]).sum();
            rows.push(RowResidual {
                index: i + 1,
                residual: (lhs - 0.5 * self.c[i] * self.c[i]).abs(),
            });
        }
        if self.s > 2 {
            // c₂ = 2γ is implied by stage order 2 at stage 2
            rows.push(RowResidual {
                index: 2,
                residual: (self.c[1] - 2.0 * self.gamma).abs(),
            });
        }
        CheckReport::from_rows("stage order 2", rows, CONSISTENCY_TOL)
    }

    /// Weights used by the step controller's error estimate.
    pub fn error_weights(&self) -> Option<&DVector<f64>> {
        self.d.as_ref()
    }
}

/// One row of a structural check.
#[derive(Debug, Clone, Copy)]
pub struct RowResidual {
    pub index: usize,
    pub residual: f64,
}

/// Outcome of a structural tableau check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub label: &'static str,
    pub rows: Vec<RowResidual>,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl CheckReport {
    fn from_rows(label: &'static str, rows: Vec<RowResidual>, tol: f64) -> Self {
        let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        CheckReport {
            label,
            rows,
            max_residual,
            tol,
            pass: max_residual <= tol,
        }
    }
}

fn esdirk12() -> ButcherTableau {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let b = DVector::from_row_slice(&[0.0, 1.0]);
    let b_hat = DVector::from_row_slice(&[0.5, 0.5]);
    let c = DVector::from_row_slice(&[0.0, 1.0]);
    ButcherTableau::from_parts("ESDIRK12", a, b, Some(b_hat), c, 1, 2)
}

fn esdirk23() -> ButcherTableau {
    let g = (2.0 - 2.0_f64.sqrt()) / 2.0;
    let b1 = (1.0 - g) / 2.0;
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, g, g, 0.0, b1, b1, g]);
    let b = DVector::from_row_slice(&[b1, b1, g]);
    let b_hat = DVector::from_row_slice(&[
        (6.0 * g - 1.0) / (12.0 * g),
        1.0 / (12.0 * g * (1.0 - 2.0 * g)),
        (1.0 - 3.0 * g) / (3.0 * (1.0 - 2.0 * g)),
    ]);
    let c = DVector::from_row_slice(&[0.0, 2.0 * g, 1.0]);
    ButcherTableau::from_parts("ESDIRK23", a, b, Some(b_hat), c, 2, 3)
}

#[allow(clippy::excessive_precision)] // decimals stored to their full printed length
fn esdirk34() -> ButcherTableau {
    let g = GAMMA_L3;
    let b = [
        0.10239940061991099768,
        -0.3768784522555561061,
        0.83861253012718610911,
        g,
    ];
    let b_hat = [
        0.15702489786032493710,
        0.11733044137043884870,
        0.61667803039212146434,
        0.10896663037711474985,
    ];
    let a31 = 0.14073777472470619619;
    let a32 = -0.1083655513813208000;
    let c3 = 0.46823874485184439565;
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0,  0.0,  0.0,  0.0,
        g,    g,    0.0,  0.0,
        a31,  a32,  g,    0.0,
        b[0], b[1], b[2], g,
    ]);
    let c = DVector::from_row_slice(&[0.0, 2.0 * g, c3, 1.0]);
    ButcherTableau::from_parts(
        "ESDIRK34",
        a,
        DVector::from_row_slice(&b),
        Some(DVector::from_row_slice(&b_hat)),
        c,
        3,
        4,
    )
}

/// Closed-form rows of the 4-stage Kværnø 3/2 tableau as functions of γ.
fn kvaerno32_rows(g: f64) -> ([f64; 4], [f64; 4]) {
    let row3 = [
        (-4.0 * g * g + 6.0 * g - 1.0) / (4.0 * g),
        (-2.0 * g + 1.0) / (4.0 * g),
        g,
        0.0,
    ];
    let row4 = [
        (6.0 * g - 1.0) / (12.0 * g),
        -1.0 / (12.0 * g * (2.0 * g - 1.0)),
        (-6.0 * g * g + 6.0 * g - 1.0) / (3.0 * (2.0 * g - 1.0)),
        g,
    ];
    (row3, row4)
}

fn kvaerno32_matrix(g: f64) -> DMatrix<f64> {
    let (r3, r4) = kvaerno32_rows(g);
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0,   0.0,   0.0,   0.0,
        g,     g,     0.0,   0.0,
        r3[0], r3[1], r3[2], 0.0,
        r4[0], r4[1], r4[2], r4[3],
    ]);
    a
}

fn esdirk32a() -> ButcherTableau {
    let g = GAMMA_L3;
    let (r3, r4) = kvaerno32_rows(g);
    let a = kvaerno32_matrix(g);
    let c = DVector::from_row_slice(&[0.0, 2.0 * g, 1.0, 1.0]);
    ButcherTableau::from_parts(
        "ESDIRK32a",
        a,
        DVector::from_row_slice(&r4),
        Some(DVector::from_row_slice(&r3)),
        c,
        3,
        2,
    )
}

fn esdirk32b() -> ButcherTableau {
    let g = (2.0 - 2.0_f64.sqrt()) / 2.0;
    let (r3, r4) = kvaerno32_rows(g);
    let a = kvaerno32_matrix(g);
    let c = DVector::from_row_slice(&[0.0, 2.0 * g, 1.0, 1.0]);
    ButcherTableau::from_parts(
        "ESDIRK32b",
        a,
        DVector::from_row_slice(&r3),
        Some(DVector::from_row_slice(&r4)),
        c,
        2,
        3,
    )
}

fn esdirk43b() -> ButcherTableau {
    // transcribed verbatim, including the sign of b̂₄
    let b = [
        0.10239940061991,
        -0.37687845225556,
        0.83861253012719,
        0.43586652150846,
        0.0,
    ];
    let b_hat = [
        0.15702489786032,
        0.11733044137044,
        0.61667803039212,
        -0.32689989113134,
        0.43586652150846,
    ];
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(5, 5, &[
        0.0,              0.0,               0.0,              0.0,               0.0,
        0.43586652150846, 0.43586652150846,  0.0,              0.0,               0.0,
        0.14073777472471, -0.10836555138132, 0.43586652150846, 0.0,               0.0,
        b[0],             b[1],              b[2],             b[3],              0.0,
        b_hat[0],         b_hat[1],          b_hat[2],         b_hat[3],          0.43586652150846,
    ]);
    let c = DVector::from_row_slice(&[0.0, 0.87173304301692, 0.46823874485185, 1.0, 1.0]);
    ButcherTableau::from_parts(
        "ESDIRK43b",
        a,
        DVector::from_row_slice(&b),
        Some(DVector::from_row_slice(&b_hat)),
        c,
        3,
        4,
    )
}

fn esdirk32c() -> ButcherTableau {
    let b = [7.0 / 18.0, 1.0 / 3.0, -2.0 / 9.0, 0.5];
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0,       0.0,       0.0,  0.0,
        0.5,       0.5,       0.0,  0.0,
        5.0 / 8.0, 3.0 / 8.0, 0.5,  0.0,
        b[0],      b[1],      b[2], b[3],
    ]);
    let b_hat = DVector::from_row_slice(&[0.5, 0.5, 0.0, 0.0]);
    let c = DVector::from_row_slice(&[0.0, 1.0, 1.5, 1.0]);
    ButcherTableau::from_parts(
        "ESDIRK32c",
        a,
        DVector::from_row_slice(&b),
        Some(b_hat),
        c,
        3,
        2,
    )
}

fn esdirk45c() -> ButcherTableau {
    let b = [
        1.0 / 4.0,
        2.0 / 3.0,
        -1.0 / 3.0,
        1.0 / 2.0,
        -1.0 / 3.0,
        1.0 / 4.0,
    ];
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(6, 6, &[
        0.0,          0.0,             0.0,       0.0,          0.0,        0.0,
        1.0 / 4.0,    1.0 / 4.0,       0.0,       0.0,          0.0,        0.0,
        1.0 / 16.0,   -1.0 / 16.0,     1.0 / 4.0, 0.0,          0.0,        0.0,
        -7.0 / 36.0,  -4.0 / 9.0,      8.0 / 9.0, 1.0 / 4.0,    0.0,        0.0,
        -5.0 / 48.0,  -257.0 / 768.0,  5.0 / 6.0, 27.0 / 256.0, 1.0 / 4.0,  0.0,
        b[0],         b[1],            b[2],      b[3],         b[4],       b[5],
    ]);
    // the companion quadrature row sums to 1 and satisfies the order
    // conditions through order 4 — it is the embedded weights, with
    // d = b − b̂ annihilating every condition up to that order
    let b_hat = [
        7.0 / 90.0,
        3.0 / 20.0,
        16.0 / 45.0,
        -1.0 / 60.0,
        16.0 / 45.0,
        7.0 / 90.0,
    ];
    let c = DVector::from_row_slice(&[0.0, 0.5, 0.25, 0.5, 0.75, 1.0]);
    let mut t = ButcherTableau::from_parts(
        "ESDIRK45c",
        a,
        DVector::from_row_slice(&b),
        Some(DVector::from_row_slice(&b_hat)),
        c,
        4,
        5,
    );
    t.flags.embedded_order_uncertain = true;
    t
}

/// Parses the plain-text tableau format: `s` whitespace-separated
/// lower-triangular A rows (row i holds i entries), then `b:`, optional
/// `bhat:`, and `c:` lines. Entries may be decimals or rationals `p/q`.
pub fn parse_tableau(text: &str) -> Result<ButcherTableau, TableauError> {
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut b: Option<Vec<f64>> = None;
    let mut b_hat: Option<Vec<f64>> = None;
    let mut c: Option<Vec<f64>> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_entries = |items: &str| -> Result<Vec<f64>, TableauError> {
            items
                .split_whitespace()
                .map(|tok| parse_entry(tok, line_no))
                .collect()
        };
        if let Some(rest) = line.strip_prefix("bhat:") {
            b_hat = Some(parse_entries(rest)?);
        } else if let Some(rest) = line.strip_prefix("b:") {
            b = Some(parse_entries(rest)?);
        } else if let Some(rest) = line.strip_prefix("c:") {
            c = Some(parse_entries(rest)?);
        } else {
            let row = parse_entries(line)?;
            if row.len() != a_rows.len() + 1 {
                return Err(TableauError::Parse {
                    line: line_no,
                    msg: format!(
                        "expected {} entries in lower-triangular row {}, got {}",
                        a_rows.len() + 1,
                        a_rows.len() + 1,
                        row.len()
                    ),
                });
            }
            a_rows.push(row);
        }
    }

    let s = a_rows.len();
    if s < 2 {
        return Err(TableauError::Parse {
            line: 0,
            msg: "tableau needs at least two A rows".into(),
        });
    }
    let b = b.ok_or(TableauError::Parse {
        line: 0,
        msg: "missing `b:` line".into(),
    })?;
    let c = c.ok_or(TableauError::Parse {
        line: 0,
        msg: "missing `c:` line".into(),
    })?;
    for (label, v) in [("b", &b), ("c", &c)] {
        if v.len() != s {
            return Err(TableauError::Parse {
                line: 0,
                msg: format!("`{label}:` has {} entries, expected {s}", v.len()),
            });
        }
    }
    if let Some(bh) = &b_hat {
        if bh.len() != s {
            return Err(TableauError::Parse {
                line: 0,
                msg: format!("`bhat:` has {} entries, expected {s}", bh.len()),
            });
        }
    }

    let mut a = DMatrix::zeros(s, s);
    for (i, row) in a_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    Ok(ButcherTableau::from_parts(
        "user",
        a,
        DVector::from_vec(b),
        b_hat.map(DVector::from_vec),
        DVector::from_vec(c),
        0,
        0,
    ))
}

fn parse_entry(tok: &str, line: usize) -> Result<f64, TableauError> {
    if let Some((num, den)) = tok.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| TableauError::Parse {
            line,
            msg: format!("bad rational numerator `{num}`"),
        })?;
        let d: f64 = den.trim().parse().map_err(|_| TableauError::Parse {
            line,
            msg: format!("bad rational denominator `{den}`"),
        })?;
        if d == 0.0 {
            return Err(TableauError::Parse {
                line,
                msg: "zero denominator".into(),
            });
        }
        Ok(n / d)
    } else {
        tok.parse().map_err(|_| TableauError::Parse {
            line,
            msg: format!("bad entry `{tok}`"),
        })
    }
}
