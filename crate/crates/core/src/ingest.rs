//! Decile and rate CSV parsing, and assembly of an aligned [`ReturnPanel`].
//!
//! Two decile layouts are recognised:
//!
//! * the size-portfolio layout of the public factor library: a free-text
//!   preamble, then one or more titled sections whose header row starts with
//!   an empty cell and names columns `Lo 10`, `Dec 2` (or `2-Dec`), ...,
//!   `Hi 10` among others. `Hi 10` (largest stocks) becomes decile 1;
//! * a plain layout with header `month,d1,d2,...` where `d1` is the largest.
//!
//! Rate files follow the FRED layout (`DATE,SERIES` with ISO dates and `.`
//! for missing values); `YYYYMM` month keys are also accepted.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::{riskfree_geometric, to_geometric, Month, RateBasis};

const SENTINELS: [f64; 2] = [-99.99, -999.0];

/// Which quantity a decile file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecileField {
    /// Arithmetic returns in percent, without dividends.
    Price,
    /// Arithmetic returns in percent, with dividends.
    Total,
    /// Average market capitalization levels.
    Cap,
}

/// Months x deciles, missing cells as `None`. Return fields are arithmetic
/// fractions; caps are levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DecileTable {
    pub field: DecileField,
    pub months: Vec<Month>,
    /// Decile numbers of the columns (1 = largest).
    pub deciles: Vec<usize>,
    /// `values[row][col]`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl DecileTable {
    fn column_of(&self, decile: usize) -> Option<usize> {
        self.deciles.iter().position(|&d| d == decile)
    }

    fn row_of(&self) -> BTreeMap<Month, usize> {
        self.months.iter().enumerate().map(|(i, m)| (*m, i)).collect()
    }
}

/// Annualized short rates keyed by month, as quoted in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub months: Vec<Month>,
    pub values: Vec<Option<f64>>,
}

impl RateTable {
    /// Concatenate rate series (e.g. a discontinued series followed by its
    /// successor). Where months overlap, the later table wins.
    pub fn splice(tables: &[RateTable]) -> RateTable {
        let mut merged = BTreeMap::new();
        for t in tables {
            for (m, v) in t.months.iter().zip(&t.values) {
                merged.insert(*m, *v);
            }
        }
        RateTable {
            months: merged.keys().copied().collect(),
            values: merged.values().copied().collect(),
        }
    }
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn split_cells(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_month_key(cell: &str) -> Option<Month> {
    if cell.len() == 6 && cell.bytes().all(|b| b.is_ascii_digit()) {
        return Month::from_yyyymm(cell.parse().ok()?).ok();
    }
    // ISO date, day ignored.
    let mut parts = cell.split('-');
    let year: u32 = parts.next()?.parse().ok()?;
    let month: u32 = parts.next()?.parse().ok()?;
    if cell.len() >= 7 {
        Month::new(year, month).ok()
    } else {
        None
    }
}

/// Decile number for a header label, if it names one.
fn decile_label(label: &str) -> Option<usize> {
    let l = label.trim().to_ascii_lowercase().replace(['_', ' '], "");
    match l.as_str() {
        "hi10" => return Some(1),
        "lo10" => return Some(10),
        _ => {}
    }
    // French library "Dec 2" / "2-Dec": decile counted from the small end.
    let from_small = l
        .strip_prefix("dec")
        .and_then(|r| r.parse::<usize>().ok())
        .or_else(|| l.strip_suffix("-dec").and_then(|r| r.parse::<usize>().ok()));
    if let Some(d) = from_small.filter(|d| (2..=9).contains(d)) {
        return Some(11 - d);
    }
    // Plain layout: d1 = largest.
    l.strip_prefix('d')
        .and_then(|r| r.parse::<usize>().ok())
        .filter(|d| (1..=10).contains(d))
}

fn is_sentinel(v: f64) -> bool {
    SENTINELS.iter().any(|s| (v - s).abs() < 1e-9)
}

/// Options for [`parse_decile_str`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecileCsvOptions {
    /// Read the section whose title line contains this text
    /// (case-insensitive); the first table otherwise.
    #[serde(default)]
    pub section: Option<String>,
}

pub fn parse_decile_csv(path: impl AsRef<Path>, field: DecileField, opts: &DecileCsvOptions) -> Result<DecileTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_decile_str(&text, &path.display().to_string(), field, opts)
}

pub fn parse_decile_str(text: &str, source: &str, field: DecileField, opts: &DecileCsvOptions) -> Result<DecileTable> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.iter().all(|l| l.trim().is_empty()) {
        return Err(parse_err(source, 0, "file is empty"));
    }

    let mut start = 0;
    if let Some(section) = &opts.section {
        let needle = section.to_ascii_lowercase();
        start = lines
            .iter()
            .position(|l| l.to_ascii_lowercase().contains(&needle))
            .ok_or_else(|| parse_err(source, 0, format!("section '{section}' not found")))?
            + 1;
    }

    // Header: first line from `start` that labels at least one decile column.
    let (header_idx, columns) = lines[start..]
        .iter()
        .enumerate()
        .find_map(|(i, l)| {
            let cells = split_cells(l);
            if cells.len() < 2 || parse_month_key(cells[0]).is_some() {
                return None;
            }
            let cols: Vec<(usize, usize)> = cells
                .iter()
                .enumerate()
                .skip(1)
                .filter_map(|(j, c)| decile_label(c).map(|d| (j, d)))
                .collect();
            (!cols.is_empty()).then_some((start + i, cols))
        })
        .ok_or_else(|| parse_err(source, start + 1, "no header row naming decile columns"))?;
    let width = split_cells(lines[header_idx]).len();

    let mut months = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(header_idx + 1) {
        let lineno = i + 1;
        if line.trim().is_empty() {
            if months.is_empty() {
                continue;
            }
            break;
        }
        let cells = split_cells(line);
        let Some(month) = parse_month_key(cells[0]) else {
            if months.is_empty() {
                return Err(parse_err(source, lineno, format!("expected a YYYYMM row key, got '{}'", cells[0])));
            }
            // Next section (e.g. annual data) begins.
            break;
        };
        if cells.len() != width {
            return Err(parse_err(
                source,
                lineno,
                format!("expected {width} cells, found {}", cells.len()),
            ));
        }
        let mut row = Vec::with_capacity(columns.len());
        for &(j, _) in &columns {
            let cell = cells[j];
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(source, lineno, format!("cannot parse '{cell}' as a number")))?;
            row.push(if is_sentinel(v) || !v.is_finite() {
                None
            } else {
                Some(match field {
                    DecileField::Price | DecileField::Total => v / 100.0,
                    DecileField::Cap => v,
                })
            });
        }
        if let Some(prev) = months.last() {
            if month <= *prev {
                return Err(parse_err(source, lineno, format!("month {month} out of order")));
            }
        }
        months.push(month);
        values.push(row);
    }
    if months.is_empty() {
        return Err(parse_err(source, header_idx + 1, "no data rows after header"));
    }

    let deciles: Vec<usize> = columns.iter().map(|&(_, d)| d).collect();
    for (c, d) in deciles.iter().enumerate() {
        if values.iter().all(|r: &Vec<Option<f64>>| r[c].is_none()) {
            log::warn!("{source}: decile {d} column is entirely missing");
        }
    }
    Ok(DecileTable {
        field,
        months,
        deciles,
        values,
    })
}

pub fn parse_rate_csv(path: impl AsRef<Path>) -> Result<RateTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rate_str(&text, &path.display().to_string())
}

pub fn parse_rate_str(text: &str, source: &str) -> Result<RateTable> {
    let mut months = Vec::new();
    let mut values = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_cells(line);
        let Some(month) = parse_month_key(cells[0]) else {
            if !seen_header && months.is_empty() {
                seen_header = true;
                continue;
            }
            return Err(parse_err(source, lineno, format!("bad date key '{}'", cells[0])));
        };
        if cells.len() < 2 {
            return Err(parse_err(source, lineno, "missing value column"));
        }
        let v = match cells[1] {
            "." | "" | "NA" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| parse_err(source, lineno, format!("cannot parse '{s}'")))?,
            ),
        };
        months.push(month);
        values.push(v);
    }
    if months.is_empty() {
        return Err(parse_err(source, 0, "no rate rows"));
    }
    Ok(RateTable { months, values })
}

/// Aligned monthly panel. Returns are geometric; caps are levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    pub months: Vec<Month>,
    /// Decile numbers of the columns, largest first.
    pub deciles: Vec<usize>,
    /// `caps[col][month]`.
    pub caps: Vec<Vec<f64>>,
    pub price_returns: Vec<Vec<f64>>,
    pub total_returns: Vec<Vec<f64>>,
    pub riskfree: Vec<f64>,
}

impl ReturnPanel {
    /// Validates the shape and value invariants.
    pub fn new(
        months: Vec<Month>,
        deciles: Vec<usize>,
        caps: Vec<Vec<f64>>,
        price_returns: Vec<Vec<f64>>,
        total_returns: Vec<Vec<f64>>,
        riskfree: Vec<f64>,
    ) -> Result<Self> {
        let t = months.len();
        if t == 0 {
            return Err(Error::Domain("panel has no months".into()));
        }
        for w in months.windows(2) {
            if w[1] != w[0].next() {
                return Err(Error::Alignment(format!("months {} and {} are not consecutive", w[0], w[1])));
            }
        }
        let k = deciles.len();
        for (name, m) in [("caps", &caps), ("price", &price_returns), ("total", &total_returns)] {
            if m.len() != k || m.iter().any(|col| col.len() != t) {
                return Err(Error::Alignment(format!("{name} matrix is not {k} x {t}")));
            }
        }
        if riskfree.len() != t {
            return Err(Error::Alignment("risk-free series length differs from month axis".into()));
        }
        for (c, col) in caps.iter().enumerate() {
            if let Some(i) = col.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "decile {} cap {} at {} is not positive",
                    deciles[c], col[i], months[i]
                )));
            }
        }
        let finite = |m: &Vec<Vec<f64>>| m.iter().flatten().all(|v| v.is_finite());
        if !finite(&price_returns) || !finite(&total_returns) || riskfree.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("panel contains non-finite returns".into()));
        }
        Ok(Self {
            months,
            deciles,
            caps,
            price_returns,
            total_returns,
            riskfree,
        })
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn column(&self, decile: usize) -> Result<usize> {
        self.deciles
            .iter()
            .position(|&d| d == decile)
            .ok_or_else(|| Error::Domain(format!("decile {decile} not in panel {:?}", self.deciles)))
    }

    /// Equity premia `total - riskfree` of one column.
    pub fn premium(&self, col: usize) -> Vec<f64> {
        self.total_returns[col]
            .iter()
            .zip(&self.riskfree)
            .map(|(q, r)| q - r)
            .collect()
    }

    /// Writes the canonical panel CSV (see `docs/data-formats.md`).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<panel csv>", e);
        let mut header = vec!["month".to_string(), "riskfree".to_string()];
        for prefix in ["cap", "price", "total"] {
            header.extend(self.deciles.iter().map(|d| format!("{prefix}_d{d}")));
        }
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (i, m) in self.months.iter().enumerate() {
            let mut row = vec![m.to_string(), self.riskfree[i].to_string()];
            for mat in [&self.caps, &self.price_returns, &self.total_returns] {
                row.extend(mat.iter().map(|col| col[i].to_string()));
            }
            writeln!(out, "{}", row.join(",")).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_csv_str(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| parse_err(source, 0, "file is empty"))?;
        let header = split_cells(header);
        if header.len() < 2 || header[0] != "month" || header[1] != "riskfree" || !(header.len() - 2).is_multiple_of(3) {
            return Err(parse_err(source, 1, "expected header month,riskfree,cap_d*,price_d*,total_d*"));
        }
        let k = (header.len() - 2) / 3;
        let deciles = header[2..2 + k]
            .iter()
            .map(|h| {
                h.strip_prefix("cap_d")
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| parse_err(source, 1, format!("bad column '{h}'")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let mut months = Vec::new();
        let mut rf = Vec::new();
        let mut mats = vec![vec![Vec::new(); k]; 3];
        for (i, line) in lines {
            let cells = split_cells(line);
            if cells.len() != header.len() {
                return Err(parse_err(source, i + 1, "wrong number of cells"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(source, i + 1, format!("cannot parse '{s}'")))
            };
            months.push(parse_month_key(cells[0]).ok_or_else(|| parse_err(source, i + 1, "bad month"))?);
            rf.push(num(cells[1])?);
            for (m, mat) in mats.iter_mut().enumerate() {
                for (c, col) in mat.iter_mut().enumerate() {
                    col.push(num(cells[2 + m * k + c])?);
                }
            }
        }
        let total = mats.pop().unwrap();
        let price = mats.pop().unwrap();
        let caps = mats.pop().unwrap();
        ReturnPanel::new(months, deciles, caps, price, total, rf)
    }
}

/// Inputs to [`build_panel`] beyond the tables themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub start: Month,
    pub end: Month,
    pub deciles: Vec<usize>,
    pub rate_basis: RateBasis,
}

impl PanelSpec {
    pub fn new(start: Month, end: Month, rate_basis: RateBasis) -> Self {
        Self {
            start,
            end,
            deciles: (1..=8).collect(),
            rate_basis,
        }
    }
}

fn describe_missing(missing: &[String]) -> String {
    const SHOW: usize = 12;
    let mut s = missing.iter().take(SHOW).cloned().collect::<Vec<_>>().join(", ");
    if missing.len() > SHOW {
        s.push_str(&format!(" ... ({} total)", missing.len()));
    }
    s
}

/// Align the four tables on `[spec.start, spec.end]`, convert arithmetic
/// returns and rates to geometric, and validate. Any missing cell inside the
/// range is an error.
pub fn build_panel(
    price: &DecileTable,
    total: &DecileTable,
    caps: &DecileTable,
    rates: &RateTable,
    spec: &PanelSpec,
) -> Result<ReturnPanel> {
    let t = spec.start.span_to(spec.end);
    if t == 0 {
        return Err(Error::Domain(format!("empty range {}..{}", spec.start, spec.end)));
    }
    let months: Vec<Month> = (0..t).map(|i| spec.start.offset(i as i64)).collect();

    let mut missing = Vec::new();
    let mut extract = |table: &DecileTable, name: &str| -> Vec<Vec<f64>> {
        let rows = table.row_of();
        spec.deciles
            .iter()
            .map(|&d| {
                let col = table.column_of(d);
                months
                    .iter()
                    .map(|m| {
                        let v = col.and_then(|c| rows.get(m).and_then(|&r| table.values[r][c]));
                        if v.is_none() {
                            missing.push(format!("{name}[d{d}]@{m}"));
                        }
                        v.unwrap_or(f64::NAN)
                    })
                    .collect()
            })
            .collect()
    };
    let price_a = extract(price, "price");
    let total_a = extract(total, "total");
    let cap_v = extract(caps, "cap");

    let rate_rows: BTreeMap<Month, Option<f64>> =
        rates.months.iter().copied().zip(rates.values.iter().copied()).collect();
    let mut rate_v = Vec::with_capacity(t);
    for m in &months {
        match rate_rows.get(m).copied().flatten() {
            Some(r) => rate_v.push(r),
            None => {
                missing.push(format!("rate@{m}"));
                rate_v.push(f64::NAN);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(format!(
            "range {}..{} not covered: {}",
            spec.start,
            spec.end,
            describe_missing(&missing)
        )));
    }

    let geo = |m: Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
        m.into_iter()
            .map(|col| col.into_iter().map(to_geometric).collect())
            .collect()
    };
    let riskfree = rate_v
        .into_iter()
        .map(|r| riskfree_geometric(r, spec.rate_basis))
        .collect::<Result<Vec<_>>>()?;
    ReturnPanel::new(months, spec.deciles.clone(), cap_v, geo(price_a)?, geo(total_a)?, riskfree)
}

/// Write one decile field in the factor-library layout (percent arithmetic
/// returns or cap levels), columns `Lo 10 ... Hi 10` for the deciles present.
pub fn write_decile_csv<W: Write>(mut out: W, title: &str, panel: &ReturnPanel, field: DecileField) -> Result<()> {
    let io = |e| Error::io("<decile csv>", e);
    let label = |d: usize| match d {
        1 => "Hi 10".to_string(),
        10 => "Lo 10".to_string(),
        d => format!("Dec {}", 11 - d),
    };
    // Smallest first, as in the library files.
    let mut cols: Vec<usize> = (0..panel.deciles.len()).collect();
    cols.sort_by_key(|&c| std::cmp::Reverse(panel.deciles[c]));
    writeln!(out, "Synthetic size-decile portfolios").map_err(io)?;
    writeln!(out).map_err(io)?;
    writeln!(out, "  {title}").map_err(io)?;
    let header: Vec<String> = cols.iter().map(|&c| label(panel.deciles[c])).collect();
    writeln!(out, ",{}", header.join(",")).map_err(io)?;
    for (i, m) in panel.months.iter().enumerate() {
        let cells: Vec<String> = cols
            .iter()
            .map(|&c| match field {
                DecileField::Price => format!("{:.10}", 100.0 * panel.price_returns[c][i].exp_m1()),
                DecileField::Total => format!("{:.10}", 100.0 * panel.total_returns[c][i].exp_m1()),
                DecileField::Cap => format!("{:.6}", panel.caps[c][i]),
            })
            .collect();
        writeln!(out, "{m},{}", cells.join(",")).map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    Ok(())
}

/// Write a rate series in the FRED layout. `rates` are annual percent.
pub fn write_rate_csv<W: Write>(mut out: W, series: &str, months: &[Month], rates: &[f64]) -> Result<()> {
    let io = |e| Error::io("<rate csv>", e);
    writeln!(out, "DATE,{series}").map_err(io)?;
    for (m, r) in months.iter().zip(rates) {
        writeln!(out, "{:04}-{:02}-01,{:.10}", m.year(), m.month(), r).map_err(io)?;
    }
    Ok(())
}

/// Monthly fund returns, geometric, one column per fund.
#[derive(Debug, Clone, PartialEq)]
pub struct FundTable {
    pub months: Vec<Month>,
    pub names: Vec<String>,
    /// `returns[fund][month]`.
    pub returns: Vec<Vec<f64>>,
}

pub fn parse_fund_csv(path: impl AsRef<Path>) -> Result<FundTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fund_str(&text, &path.display().to_string())
}

/// Header `month,<fund>,...`; cells are arithmetic monthly total returns in
/// percent.
pub fn parse_fund_str(text: &str, source: &str) -> Result<FundTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(source, 0, "file is empty"))?;
    let header = split_cells(header);
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("month") {
        return Err(parse_err(source, 1, "expected header month,<fund>,..."));
    }
    let names: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
    let mut months = Vec::new();
    let mut returns = vec![Vec::new(); names.len()];
    for (i, line) in lines {
        let cells = split_cells(line);
        if cells.len() != header.len() {
            return Err(parse_err(source, i + 1, "wrong number of cells"));
        }
        let m = parse_month_key(cells[0]).ok_or_else(|| parse_err(source, i + 1, "bad month"))?;
        if let Some(prev) = months.last() {
            if m != Month::next(*prev) {
                return Err(parse_err(source, i + 1, format!("month {m} does not follow {prev}")));
            }
        }
        months.push(m);
        for (col, cell) in returns.iter_mut().zip(&cells[1..]) {
            let a: f64 = cell
                .parse()
                .map_err(|_| parse_err(source, i + 1, format!("cannot parse '{cell}'")))?;
            col.push(to_geometric(a / 100.0).map_err(|e| parse_err(source, i + 1, e.to_string()))?);
        }
    }
    if months.is_empty() {
        return Err(parse_err(source, 0, "no fund rows"));
    }
    Ok(FundTable { months, names, returns })
}

/// Equity premia of every fund. The risk-free return of month `t` comes from
/// the rate observed at the end of month `t - 1`.
pub fn fund_premia(table: &FundTable, rates: &RateTable, basis: RateBasis) -> Result<Vec<Vec<f64>>> {
    let lookup: BTreeMap<Month, Option<f64>> = rates.months.iter().copied().zip(rates.values.iter().copied()).collect();
    let mut missing = Vec::new();
    let mut rf = Vec::with_capacity(table.months.len());
    for m in &table.months {
        let prev = m.offset(-1);
        match lookup.get(&prev).copied().flatten() {
            Some(r) => rf.push(riskfree_geometric(r, basis)?),
            None => missing.push(format!("rate@{prev}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(format!("missing {}", missing.join(", "))));
    }
    Ok(table
        .returns
        .iter()
        .map(|col| col.iter().zip(&rf).map(|(q, r)| q - r).collect())
        .collect())
}

/// Write fund returns (geometric in memory) as arithmetic percent.
pub fn write_fund_csv<W: Write>(mut out: W, months: &[Month], names: &[&str], returns: &[Vec<f64>]) -> Result<()> {
    let io = |e| Error::io("<fund csv>", e);
    writeln!(out, "month,{}", names.join(",")).map_err(io)?;
    for (i, m) in months.iter().enumerate() {
        let cells: Vec<String> = returns.iter().map(|c| format!("{:.10}", 100.0 * c[i].exp_m1())).collect();
        writeln!(out, "{m},{}", cells.join(",")).map_err(io)?;
    }
    Ok(())
}
