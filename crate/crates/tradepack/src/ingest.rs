//! Trade-record ingestion: parsing, validation, same-second merging, and
//! per-stock activity summaries.
//!
//! The input format is one comma-separated line per transaction,
//!
//! ```text
//! stock,investor,itype,date,time,side,aggr,price,volume
//! 000001,42,I,2003-01-06,09:30:15,B,M,10.300,500
//! ```
//!
//! with a mandatory header, dates as `YYYY-MM-DD`, times as `HH:MM:SS`
//! inside the trading sessions, investor type `I` (institution) or `P`
//! (individual), side `B`/`S`, aggressor `M` (market order, the trade was
//! initiated by this investor) or `L` (limit order), a positive price with
//! at most three fraction digits, and a positive integer share volume.
//!
//! Parsing preserves record order. [`render_record`] writes the canonical
//! form (prices always with three fraction digits), so a canonical file
//! round-trips byte-for-byte through parse → render.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{DayClock, EventTime};

/// The mandatory header line.
pub const HEADER: &str = "stock,investor,itype,date,time,side,aggr,price,volume";

// ===== record types =====

/// Six-character exchange code of a stock, e.g. `000001`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StockCode([u8; 6]);

impl StockCode {
    pub fn as_str(&self) -> &str {
        // constructed from validated ASCII only
        std::str::from_utf8(&self.0).unwrap()
    }

    /// Code for a 1-based stock index, e.g. `from_index(1)` is `000001`.
    pub fn from_index(i: usize) -> Self {
        format!("{i:06}").parse().expect("index fits in six digits")
    }
}

impl FromStr for StockCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != 6 || !bytes.iter().all(|b| b.is_ascii_alphanumeric()) {
            return Err(format!("stock code must be six alphanumeric characters, got {s:?}"));
        }
        let mut code = [0u8; 6];
        code.copy_from_slice(bytes);
        Ok(StockCode(code))
    }
}

impl TryFrom<String> for StockCode {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<StockCode> for String {
    fn from(c: StockCode) -> String {
        c.as_str().to_owned()
    }
}

impl fmt::Display for StockCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for StockCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StockCode({})", self.as_str())
    }
}

/// Anonymized investor identifier, unique within the dataset.
pub type InvestorId = u64;

/// Institution or individual account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvestorType {
    Institution,
    Individual,
}

impl InvestorType {
    pub fn code(&self) -> char {
        match self {
            InvestorType::Institution => 'I',
            InvestorType::Individual => 'P',
        }
    }

    pub const ALL: [InvestorType; 2] = [InvestorType::Institution, InvestorType::Individual];
}

/// Buy or sell, from the recorded investor's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn code(&self) -> char {
        match self {
            Side::Buy => 'B',
            Side::Sell => 'S',
        }
    }

    /// +1 for buys, −1 for sells.
    pub fn sign(&self) -> i8 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }

    pub fn opposite(&self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

/// Whether the investor's order was the aggressive (market) or passive
/// (limit) side of the execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggressor {
    Market,
    Limit,
}

impl Aggressor {
    pub fn code(&self) -> char {
        match self {
            Aggressor::Market => 'M',
            Aggressor::Limit => 'L',
        }
    }
}

/// One transaction of one investor in one stock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub stock: StockCode,
    pub investor: InvestorId,
    pub investor_type: InvestorType,
    pub time: EventTime,
    pub side: Side,
    pub aggressor: Aggressor,
    /// Execution price in currency units (volume-weighted after merging).
    pub price: f64,
    /// Executed share volume.
    pub volume: u64,
}

impl TradeRecord {
    /// Sort key giving the canonical tape order: stock, then time, then
    /// investor, side, aggressor. Within one second this is a stable,
    /// content-derived order.
    pub fn tape_key(&self) -> (StockCode, EventTime, InvestorId, u8, u8) {
        (
            self.stock,
            self.time,
            self.investor,
            self.side.code() as u8,
            self.aggressor.code() as u8,
        )
    }
}

// ===== parsing =====

/// How to react to malformed lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// First malformed line aborts the parse (the default).
    #[default]
    Strict,
    /// Malformed lines are skipped and reported.
    Lenient,
}

/// Why a line was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected header {HEADER:?}, got {0:?}")]
    BadHeader(String),
    #[error("expected 9 comma-separated fields, got {0}")]
    FieldCount(usize),
    #[error("invalid stock code: {0}")]
    BadStock(String),
    #[error("invalid investor id: {0:?}")]
    BadInvestor(String),
    #[error("invalid investor type (expected I or P): {0:?}")]
    BadInvestorType(String),
    #[error("invalid date (expected YYYY-MM-DD): {0:?}")]
    BadDate(String),
    #[error("invalid time (expected HH:MM:SS): {0:?}")]
    BadTime(String),
    #[error("timestamp {0} outside trading sessions")]
    OutsideSession(String),
    #[error("invalid side (expected B or S): {0:?}")]
    BadSide(String),
    #[error("invalid aggressor (expected M or L): {0:?}")]
    BadAggressor(String),
    #[error("invalid price (positive, at most 3 fraction digits): {0:?}")]
    BadPrice(String),
    #[error("price must be positive: {0:?}")]
    NonPositivePrice(String),
    #[error("invalid volume (positive integer): {0:?}")]
    BadVolume(String),
    #[error("volume must be positive: {0:?}")]
    NonPositiveVolume(String),
}

/// A rejected line: 1-based line number plus the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

/// Parse failure in strict mode, or an unreadable input.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{0}")]
    Malformed(ParseIssue),
    #[error("read error at line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

/// Parsed records plus, in lenient mode, the lines that were skipped.
#[derive(Debug, Clone, Default)]
pub struct ParsedTrades {
    pub records: Vec<TradeRecord>,
    pub skipped: Vec<ParseIssue>,
}

fn parse_time_of_day(s: &str) -> Option<u32> {
    let b = s.as_bytes();
    if b.len() != 8 || b[2] != b':' || b[5] != b':' {
        return None;
    }
    let num = |r: &[u8]| -> Option<u32> {
        if r.iter().all(|c| c.is_ascii_digit()) {
            Some((r[0] - b'0') as u32 * 10 + (r[1] - b'0') as u32)
        } else {
            None
        }
    };
    let (h, m, sec) = (num(&b[0..2])?, num(&b[3..5])?, num(&b[6..8])?);
    if h > 23 || m > 59 || sec > 59 {
        return None;
    }
    Some(h * 3600 + m * 60 + sec)
}

/// Validates a decimal price with at most three fraction digits.
fn parse_price(s: &str) -> Result<f64, ParseErrorKind> {
    let ok_shape = match s.split_once('.') {
        Some((int, frac)) => {
            !int.is_empty()
                && int.bytes().all(|b| b.is_ascii_digit())
                && !frac.is_empty()
                && frac.len() <= 3
                && frac.bytes().all(|b| b.is_ascii_digit())
        }
        None => !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()),
    };
    if !ok_shape {
        return Err(ParseErrorKind::BadPrice(s.to_owned()));
    }
    let value: f64 = s.parse().map_err(|_| ParseErrorKind::BadPrice(s.to_owned()))?;
    if value <= 0.0 {
        return Err(ParseErrorKind::NonPositivePrice(s.to_owned()));
    }
    Ok(value)
}

fn parse_line(line: &str, clock: &DayClock) -> Result<TradeRecord, ParseErrorKind> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 9 {
        return Err(ParseErrorKind::FieldCount(fields.len()));
    }
    let stock: StockCode = fields[0].parse().map_err(ParseErrorKind::BadStock)?;
    let investor: InvestorId = fields[1]
        .parse()
        .map_err(|_| ParseErrorKind::BadInvestor(fields[1].to_owned()))?;
    let investor_type = match fields[2] {
        "I" => InvestorType::Institution,
        "P" => InvestorType::Individual,
        other => return Err(ParseErrorKind::BadInvestorType(other.to_owned())),
    };
    let date: NaiveDate = fields[3]
        .parse()
        .map_err(|_| ParseErrorKind::BadDate(fields[3].to_owned()))?;
    let second =
        parse_time_of_day(fields[4]).ok_or_else(|| ParseErrorKind::BadTime(fields[4].to_owned()))?;
    if !clock.in_session(second) {
        return Err(ParseErrorKind::OutsideSession(fields[4].to_owned()));
    }
    let side = match fields[5] {
        "B" => Side::Buy,
        "S" => Side::Sell,
        other => return Err(ParseErrorKind::BadSide(other.to_owned())),
    };
    let aggressor = match fields[6] {
        "M" => Aggressor::Market,
        "L" => Aggressor::Limit,
        other => return Err(ParseErrorKind::BadAggressor(other.to_owned())),
    };
    let price = parse_price(fields[7])?;
    let volume: u64 = if fields[8].is_empty() || !fields[8].bytes().all(|b| b.is_ascii_digit()) {
        return Err(ParseErrorKind::BadVolume(fields[8].to_owned()));
    } else {
        fields[8]
            .parse()
            .map_err(|_| ParseErrorKind::BadVolume(fields[8].to_owned()))?
    };
    if volume == 0 {
        return Err(ParseErrorKind::NonPositiveVolume(fields[8].to_owned()));
    }
    Ok(TradeRecord {
        stock,
        investor,
        investor_type,
        time: EventTime::new(date, second),
        side,
        aggressor,
        price,
        volume,
    })
}

/// Parses a trade file, preserving record order.
///
/// In [`ParseMode::Strict`] the first malformed line aborts with its line
/// number; in [`ParseMode::Lenient`] malformed lines are skipped and listed
/// in [`ParsedTrades::skipped`]. A bad header aborts in both modes.
pub fn parse_trade_file<R: BufRead>(reader: R, mode: ParseMode) -> Result<ParsedTrades, ParseError> {
    let clock = DayClock::default();
    let mut out = ParsedTrades::default();
    let mut lines = reader.lines();

    let header = match lines.next() {
        Some(Ok(h)) => h,
        Some(Err(source)) => return Err(ParseError::Io { line: 1, source }),
        None => String::new(),
    };
    if header.trim_end_matches('\r') != HEADER {
        return Err(ParseError::Malformed(ParseIssue {
            line: 1,
            kind: ParseErrorKind::BadHeader(header),
        }));
    }

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = match line {
            Ok(l) => l,
            Err(source) => return Err(ParseError::Io { line: line_no, source }),
        };
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        match parse_line(line, &clock) {
            Ok(record) => out.records.push(record),
            Err(kind) => {
                let issue = ParseIssue { line: line_no, kind };
                match mode {
                    ParseMode::Strict => return Err(ParseError::Malformed(issue)),
                    ParseMode::Lenient => out.skipped.push(issue),
                }
            }
        }
    }
    Ok(out)
}

/// Canonical one-line rendering of a record (price with three fraction
/// digits, no padding elsewhere).
pub fn render_record(r: &TradeRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{:.3},{}",
        r.stock,
        r.investor,
        r.investor_type.code(),
        r.time.date.format("%Y-%m-%d"),
        r.time.time_string(),
        r.side.code(),
        r.aggressor.code(),
        r.price,
        r.volume
    )
}

/// Writes header plus canonical record lines.
pub fn write_trade_file<W: Write>(mut w: W, records: &[TradeRecord]) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in records {
        writeln!(w, "{}", render_record(r))?;
    }
    Ok(())
}

// ===== merging =====

/// Collapses same-second executions of one order: records sharing investor,
/// stock, timestamp, side, and aggressor merge into one record whose volume
/// is the sum and whose price is the volume-weighted mean. Opposite sides or
/// differing aggressors stay separate.
///
/// Output is sorted by (stock, investor, time, side, aggressor); merging is
/// idempotent and conserves total volume.
pub fn merge_same_time_trades(mut records: Vec<TradeRecord>) -> Vec<TradeRecord> {
    records.sort_by_key(|r| {
        (r.stock, r.investor, r.time, r.side.code() as u8, r.aggressor.code() as u8)
    });
    let mut out: Vec<TradeRecord> = Vec::with_capacity(records.len());
    for r in records {
        match out.last_mut() {
            Some(last)
                if last.stock == r.stock
                    && last.investor == r.investor
                    && last.time == r.time
                    && last.side == r.side
                    && last.aggressor == r.aggressor =>
            {
                let merged_volume = last.volume + r.volume;
                last.price = (last.price * last.volume as f64 + r.price * r.volume as f64)
                    / merged_volume as f64;
                last.volume = merged_volume;
            }
            _ => out.push(r),
        }
    }
    out
}

// ===== summaries =====

/// Optional per-stock metadata passed through into summaries (market values
/// and floating/total capitalization, in whatever units the caller uses).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StockMeta {
    pub a_tot: Option<f64>,
    pub c_flo: Option<f64>,
    pub c_tot: Option<f64>,
}

/// Activity summary of one stock: number of investors, number of trades,
/// and the distribution of trades per investor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StockSummary {
    pub stock: StockCode,
    pub meta: StockMeta,
    pub n_investors: usize,
    pub n_trades: usize,
    /// Mean trades per investor.
    pub trades_mean: f64,
    /// Median trades per investor (midpoint of the two central values for
    /// even counts).
    pub trades_median: f64,
    /// Sample standard deviation (n − 1) of trades per investor; 0 when only
    /// one investor traded, flagged by `std_degenerate`.
    pub trades_std: f64,
    pub std_degenerate: bool,
}

/// Per-stock summaries, sorted by stock code.
pub fn summarize(
    records: &[TradeRecord],
    meta: Option<&HashMap<StockCode, StockMeta>>,
) -> Vec<StockSummary> {
    let mut per_stock: HashMap<StockCode, HashMap<InvestorId, usize>> = HashMap::new();
    for r in records {
        *per_stock.entry(r.stock).or_default().entry(r.investor).or_default() += 1;
    }
    let mut stocks: Vec<StockCode> = per_stock.keys().copied().collect();
    stocks.sort_unstable();

    stocks
        .into_iter()
        .map(|stock| {
            let by_investor = &per_stock[&stock];
            let mut counts: Vec<usize> = by_investor.values().copied().collect();
            counts.sort_unstable();
            let n_investors = counts.len();
            let n_trades: usize = counts.iter().sum();
            let mean = n_trades as f64 / n_investors as f64;
            let median = if n_investors % 2 == 1 {
                counts[n_investors / 2] as f64
            } else {
                (counts[n_investors / 2 - 1] + counts[n_investors / 2]) as f64 / 2.0
            };
            let (std, degenerate) = if n_investors < 2 {
                (0.0, true)
            } else {
                let ss: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
                ((ss / (n_investors - 1) as f64).sqrt(), false)
            };
            StockSummary {
                stock,
                meta: meta.and_then(|m| m.get(&stock).copied()).unwrap_or_default(),
                n_investors,
                n_trades,
                trades_mean: mean,
                trades_median: median,
                trades_std: std,
                std_degenerate: degenerate,
            }
        })
        .collect()
}
