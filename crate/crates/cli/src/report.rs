//! Tabular output: CSV with `#` comment lines, or JSON with the same columns.

use std::fmt::Write as _;

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    /// Printed with 12 significant digits.
    Num(f64),
    /// Printed with a fixed number of decimals.
    Fixed(f64, usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub notes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            notes: Vec::new(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(format_cell).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn to_json(&self, command: &str) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Array(r.iter().map(cell_json).collect()))
            .collect();
        let doc = json!({
            "command": command,
            "notes": self.notes,
            "columns": self.columns,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("tables are always serializable");
        s.push('\n');
        s
    }
}

fn cell_json(c: &Cell) -> Value {
    match *c {
        Cell::Int(v) => json!(v),
        // round-trip through the CSV text so both emissions carry the same digits
        Cell::Num(v) | Cell::Fixed(v, _) if !v.is_finite() => Value::String(format_num(v)),
        _ => format_cell(c).parse::<f64>().map_or(Value::Null, |v| json!(v)),
    }
}

fn format_cell(c: &Cell) -> String {
    match *c {
        Cell::Int(v) => v.to_string(),
        Cell::Num(v) => format_num(v),
        Cell::Fixed(v, d) => format!("{v:.d$}"),
    }
}

/// `%.12g`: 12 significant digits, trailing zeros dropped, scientific
/// notation outside `[1e-5, 1e12)`.
pub fn format_num(v: f64) -> String {
    const DIGITS: i32 = 12;
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_num(0.5), "0.5");
        assert_eq!(format_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_num(2.0 / 3.0 * 1e-3), "0.000666666666667");
        assert_eq!(format_num(1.0), "1");
        assert_eq!(format_num(-12.5), "-12.5");
        assert_eq!(format_num(1.234e-9), "1.234e-09");
        assert_eq!(format_num(6.02214076e23), "6.02214076e+23");
        assert_eq!(format_num(123456789012.0), "123456789012");
        assert_eq!(format_num(0.999999999999951), "1");
    }

    #[test]
    fn csv_and_json_layout() {
        let mut t = Table::new(["i", "pmf", "mean"]);
        t.note("demo");
        t.push(vec![Cell::Int(3), Cell::Num(0.25), Cell::Fixed(0.847264, 5)]);
        assert_eq!(t.to_csv(), "# demo\ni,pmf,mean\n3,0.25,0.84726\n");
        let v: Value = serde_json::from_str(&t.to_json("x")).unwrap();
        assert_eq!(v["columns"][2], "mean");
        assert_eq!(v["rows"][0][2], 0.84726);
        assert_eq!(v["rows"][0][0], 3);
    }
}
