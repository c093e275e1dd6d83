//! Smart-card record parsing and weekly profile construction.
//!
//! Input is a UTF-8 CSV with the header
//! `card_id,timestamp,mode,station_id,event`. Lines starting with `#` are
//! comments and are skipped wherever they appear.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hours in a day.
pub const HOURS: usize = 24;
/// Days in an observation week.
pub const DAYS: usize = 7;
/// Slots in a weekly profile (`day * 24 + hour`).
pub const SLOTS: usize = DAYS * HOURS;

pub const RECORD_HEADER: [&str; 5] = ["card_id", "timestamp", "mode", "station_id", "event"];
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing header row")]
    MissingHeader,
    #[error("unexpected header {found:?}")]
    BadHeader { found: String },
    #[error("{malformed} of {total} data lines are malformed; this does not look like a record file")]
    WrongFile { malformed: usize, total: usize },
    #[error("observation week must start on a Monday, got {0}")]
    NotMonday(NaiveDate),
    #[error("profile file line {line}: {reason}")]
    BadProfile { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bus,
    Metro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Boarding,
    Alighting,
    Transaction,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bus" => Ok(Mode::Bus),
            "metro" => Ok(Mode::Metro),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Bus => "bus",
            Mode::Metro => "metro",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "boarding" => Ok(EventKind::Boarding),
            "alighting" => Ok(EventKind::Alighting),
            "transaction" => Ok(EventKind::Transaction),
            other => Err(format!("unknown event {other:?}")),
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Boarding => "boarding",
            EventKind::Alighting => "alighting",
            EventKind::Transaction => "transaction",
        })
    }
}

/// One anonymized tap event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScdRecord {
    pub card_id: String,
    pub timestamp: NaiveDateTime,
    pub mode: Mode,
    pub station_id: String,
    pub event: EventKind,
}

impl ScdRecord {
    /// Day of week, Monday = 0.
    pub fn day(&self) -> usize {
        self.timestamp.weekday().num_days_from_monday() as usize
    }

    pub fn hour(&self) -> usize {
        self.timestamp.hour() as usize
    }

    /// Index into a weekly profile.
    pub fn slot(&self) -> usize {
        self.day() * HOURS + self.hour()
    }

    pub fn to_csv_row(&self) -> [String; 5] {
        [
            self.card_id.clone(),
            self.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            self.mode.to_string(),
            self.station_id.clone(),
            self.event.to_string(),
        ]
    }
}

/// A named one-week observation window `[week_start, week_start + 7d)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationPeriod {
    pub label: String,
    pub week_start: NaiveDate,
}

impl ObservationPeriod {
    pub fn new(label: impl Into<String>, week_start: NaiveDate) -> Result<Self, IngestError> {
        if week_start.weekday() != Weekday::Mon {
            return Err(IngestError::NotMonday(week_start));
        }
        Ok(Self {
            label: label.into(),
            week_start,
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.week_start.and_hms_opt(0, 0, 0).expect("midnight is valid")
    }

    pub fn end(&self) -> NaiveDateTime {
        self.start() + Duration::days(DAYS as i64)
    }

    pub fn contains(&self, ts: NaiveDateTime) -> bool {
        ts >= self.start() && ts < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    Malformed(String),
    OutOfWindow,
}

/// A problem with one input line. Never fatal on its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: u64,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DiagnosticKind::Malformed(why) => write!(f, "line {}: malformed: {why}", self.line),
            DiagnosticKind::OutOfWindow => write!(f, "line {}: timestamp outside the week", self.line),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<ScdRecord>,
    pub diagnostics: Vec<Diagnostic>,
    /// Accepted records identical to an earlier accepted record. They are kept.
    pub duplicates: usize,
}

impl ParseOutcome {
    pub fn malformed(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| matches!(d.kind, DiagnosticKind::Malformed(_)))
            .count()
    }
}

fn parse_line(fields: &csv::StringRecord) -> Result<ScdRecord, String> {
    if fields.len() != RECORD_HEADER.len() {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let card_id = fields[0].to_string();
    if card_id.is_empty() {
        return Err("empty card_id".into());
    }
    let timestamp = NaiveDateTime::parse_from_str(&fields[1], TIMESTAMP_FORMAT)
        .map_err(|e| format!("bad timestamp {:?}: {e}", &fields[1]))?;
    let mode = fields[2].parse()?;
    let event = fields[4].parse()?;
    Ok(ScdRecord {
        card_id,
        timestamp,
        mode,
        station_id: fields[3].to_string(),
        event,
    })
}

/// Parses a record stream, keeping every well-formed in-window line.
///
/// Bad lines become diagnostics. The whole stream is rejected only when it
/// cannot be read, has no valid header, or more than half of its data lines
/// are malformed.
pub fn parse_records<R: Read>(
    stream: R,
    period: &ObservationPeriod,
) -> Result<ParseOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(stream);

    let mut rows = reader.records();
    let header = match rows.next() {
        None => return Err(IngestError::MissingHeader),
        Some(Err(e)) => return Err(csv_to_ingest(e)),
        Some(Ok(h)) => h,
    };
    if header.iter().ne(RECORD_HEADER.iter().copied()) {
        return Err(IngestError::BadHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut out = ParseOutcome::default();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for row in rows {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let e = csv_to_ingest(e);
                if let IngestError::Io(_) = e {
                    return Err(e);
                }
                total += 1;
                out.diagnostics.push(Diagnostic {
                    line: 0,
                    kind: DiagnosticKind::Malformed(e.to_string()),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        total += 1;
        match parse_line(&row) {
            Err(why) => out.diagnostics.push(Diagnostic {
                line,
                kind: DiagnosticKind::Malformed(why),
            }),
            Ok(rec) if !period.contains(rec.timestamp) => out.diagnostics.push(Diagnostic {
                line,
                kind: DiagnosticKind::OutOfWindow,
            }),
            Ok(rec) => {
                if !seen.insert(rec.clone()) {
                    out.duplicates += 1;
                }
                out.records.push(rec);
            }
        }
    }

    let malformed = out.malformed();
    if total > 0 && malformed * 2 > total {
        return Err(IngestError::WrongFile { malformed, total });
    }
    Ok(out)
}

fn csv_to_ingest(e: csv::Error) -> IngestError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            _ => unreachable!(),
        }
    } else {
        IngestError::Csv(e)
    }
}

/// Per-hour tap counts of one card over one week.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeeklyProfile {
    pub card_id: String,
    pub slots: [u32; SLOTS],
    pub metro_taps: u32,
}

impl WeeklyProfile {
    pub fn new(card_id: impl Into<String>) -> Self {
        Self {
            card_id: card_id.into(),
            slots: [0; SLOTS],
            metro_taps: 0,
        }
    }

    pub fn from_slots(card_id: impl Into<String>, slots: [u32; SLOTS]) -> Self {
        Self {
            card_id: card_id.into(),
            slots,
            metro_taps: 0,
        }
    }

    pub fn add(&mut self, record: &ScdRecord) {
        self.slots[record.slot()] += 1;
        if record.mode == Mode::Metro {
            self.metro_taps += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.slots.iter().map(|&v| v as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|&v| v == 0)
    }

    /// Number of non-zero slots.
    pub fn support_size(&self) -> usize {
        self.slots.iter().filter(|&&v| v != 0).count()
    }

    pub fn day_counts(&self) -> [u64; DAYS] {
        let mut days = [0u64; DAYS];
        for (day, chunk) in self.slots.chunks_exact(HOURS).enumerate() {
            days[day] = chunk.iter().map(|&v| v as u64).sum();
        }
        days
    }

    /// Taps per hour of day, summed over the week.
    pub fn hour_counts(&self) -> [u64; HOURS] {
        let mut hours = [0u64; HOURS];
        for chunk in self.slots.chunks_exact(HOURS) {
            for (h, &v) in chunk.iter().enumerate() {
                hours[h] += v as u64;
            }
        }
        hours
    }
}

/// Folds records into one profile per card.
pub fn build_profiles(records: &[ScdRecord]) -> BTreeMap<String, WeeklyProfile> {
    let mut profiles: BTreeMap<String, WeeklyProfile> = BTreeMap::new();
    for rec in records {
        profiles
            .entry(rec.card_id.clone())
            .or_insert_with(|| WeeklyProfile::new(rec.card_id.clone()))
            .add(rec);
    }
    profiles
}

/// Cards present in both maps.
pub fn shared_cards<A, B>(a: &BTreeMap<String, A>, b: &BTreeMap<String, B>) -> BTreeSet<String> {
    a.keys().filter(|k| b.contains_key(*k)).cloned().collect()
}

/// Groups records by card, each group sorted by time.
pub fn records_by_card(records: &[ScdRecord]) -> BTreeMap<String, Vec<ScdRecord>> {
    let mut by_card: BTreeMap<String, Vec<ScdRecord>> = BTreeMap::new();
    for rec in records {
        by_card.entry(rec.card_id.clone()).or_default().push(rec.clone());
    }
    for recs in by_card.values_mut() {
        recs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.event.cmp(&b.event)));
    }
    by_card
}

pub fn write_records<W: Write>(out: W, records: &[ScdRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for rec in records {
        w.write_record(rec.to_csv_row())?;
    }
    w.flush()?;
    Ok(())
}

fn profile_header() -> Vec<String> {
    let mut header = Vec::with_capacity(SLOTS + 2);
    header.push("card_id".to_string());
    header.extend((0..SLOTS).map(|j| format!("v{j}")));
    header.push("metro_taps".to_string());
    header
}

/// Writes `card_id,v0,...,v167,metro_taps`.
pub fn write_profiles<'a, W, I>(out: W, profiles: I) -> Result<usize, IngestError>
where
    W: Write,
    I: IntoIterator<Item = &'a WeeklyProfile>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(profile_header())?;
    let mut rows = 0;
    for p in profiles {
        let mut row = Vec::with_capacity(SLOTS + 2);
        row.push(p.card_id.clone());
        row.extend(p.slots.iter().map(|v| v.to_string()));
        row.push(p.metro_taps.to_string());
        w.write_record(&row)?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

pub fn read_profiles<R: Read>(input: R) -> Result<BTreeMap<String, WeeklyProfile>, IngestError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != profile_header() {
        return Err(IngestError::BadHeader {
            found: header.join(","),
        });
    }
    let mut profiles = BTreeMap::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |reason: String| IngestError::BadProfile { line, reason };
        if row.len() != SLOTS + 2 {
            return Err(bad(format!("expected {} fields", SLOTS + 2)));
        }
        let mut p = WeeklyProfile::new(&row[0]);
        for j in 0..SLOTS {
            p.slots[j] = row[j + 1]
                .parse()
                .map_err(|e| bad(format!("slot v{j}: {e}")))?;
        }
        p.metro_taps = row[SLOTS + 1]
            .parse()
            .map_err(|e| bad(format!("metro_taps: {e}")))?;
        profiles.insert(p.card_id.clone(), p);
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn week() -> ObservationPeriod {
        ObservationPeriod::new("w", NaiveDate::from_ymd_opt(2024, 3, 4).unwrap()).unwrap()
    }

    fn rec(card: &str, ts: &str) -> ScdRecord {
        ScdRecord {
            card_id: card.into(),
            timestamp: NaiveDateTime::parse_from_str(ts, TIMESTAMP_FORMAT).unwrap(),
            mode: Mode::Bus,
            station_id: "s1".into(),
            event: EventKind::Transaction,
        }
    }

    const HEADER: &str = "card_id,timestamp,mode,station_id,event\n";

    #[test]
    fn single_valid_line() {
        let text = format!("{HEADER}A,2024-03-04 08:30:00,bus,s1,transaction\n");
        let out = parse_records(text.as_bytes(), &week()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn out_of_window_line() {
        let text = format!("{HEADER}A,2024-03-11 00:00:00,bus,s1,transaction\n");
        let out = parse_records(text.as_bytes(), &week()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].kind, DiagnosticKind::OutOfWindow);
    }

    #[test]
    fn window_is_half_open() {
        let p = week();
        assert!(p.contains(p.start()));
        assert!(!p.contains(p.end()));
        assert!(p.contains(p.end() - Duration::seconds(1)));
    }

    #[test]
    fn ten_lines_three_bad_timestamps() {
        let mut text = HEADER.to_string();
        for i in 0..10 {
            let ts = match i {
                2 => "2024-03-02 08:00:00".to_string(),
                5 => "2024-13-05 08:00:00".to_string(),
                8 => "2024-03-12 08:00:00".to_string(),
                _ => format!("2024-03-0{} 0{}:15:00", 4 + i % 5, i % 10),
            };
            text.push_str(&format!("C{i},{ts},metro,s{i},boarding\n"));
        }
        let out = parse_records(text.as_bytes(), &week()).unwrap();
        assert_eq!(out.records.len(), 7);
        assert_eq!(out.diagnostics.len(), 3);
        assert_eq!(out.diagnostics[1].line, 7);
    }

    #[test]
    fn malformed_majority_is_fatal() {
        let text = format!("{HEADER}A,x,bus,s,transaction\nB,y,bus,s,transaction\nC,2024-03-04 08:00:00,bus,s,transaction\n");
        assert!(matches!(
            parse_records(text.as_bytes(), &week()),
            Err(IngestError::WrongFile { malformed: 2, total: 3 })
        ));
        let text = format!("{HEADER}A,x,bus,s,transaction\nC,2024-03-04 08:00:00,bus,s,transaction\n");
        let out = parse_records(text.as_bytes(), &week()).unwrap();
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn header_is_required() {
        let text = "A,2024-03-04 08:30:00,bus,s1,transaction\n";
        assert!(matches!(
            parse_records(text.as_bytes(), &week()),
            Err(IngestError::BadHeader { .. })
        ));
        assert!(matches!(
            parse_records(&b""[..], &week()),
            Err(IngestError::MissingHeader)
        ));
    }

    #[test]
    fn comments_and_bad_enums() {
        let text = format!(
            "# generated\n{HEADER}A,2024-03-04 08:30:00,tram,s1,transaction\nA,2024-03-04 08:30:00,bus,s1,tap\n,2024-03-04 08:30:00,bus,s1,boarding\nA,2024-03-04 08:30:00,bus,s1,boarding\nB,2024-03-05 09:00:00,metro,m2,alighting\nC,2024-03-06 10:00:00,bus,s3,transaction\n"
        );
        let out = parse_records(text.as_bytes(), &week()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.malformed(), 3);
    }

    #[test]
    fn duplicates_are_kept_and_counted() {
        let line = "A,2024-03-04 08:30:00,bus,s1,transaction\n";
        let text = format!("{HEADER}{line}{line}");
        let out = parse_records(text.as_bytes(), &week()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.duplicates, 1);
    }

    #[test]
    fn non_monday_period_rejected() {
        assert!(ObservationPeriod::new("x", NaiveDate::from_ymd_opt(2024, 3, 5).unwrap()).is_err());
    }

    #[test]
    fn single_tap_profile() {
        let profiles = build_profiles(&[rec("A", "2024-03-04 08:30:00")]);
        let p = &profiles["A"];
        assert_eq!(p.slots[8], 1);
        assert_eq!(p.total(), 1);
    }

    #[test]
    fn same_hour_taps_accumulate() {
        let profiles = build_profiles(&[
            rec("A", "2024-03-05 09:05:00"),
            rec("A", "2024-03-05 09:40:00"),
        ]);
        assert_eq!(profiles["A"].slots[33], 2);
        assert_eq!(profiles["A"].total(), 2);
    }

    #[test]
    fn two_cards() {
        let mut metro = rec("B", "2024-03-10 23:59:00");
        metro.mode = Mode::Metro;
        let profiles = build_profiles(&[
            rec("A", "2024-03-05 09:05:00"),
            metro,
            rec("B", "2024-03-06 10:00:00"),
        ]);
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles["A"].total(), 1);
        assert_eq!(profiles["B"].total(), 2);
        assert_eq!(profiles["B"].slots[167], 1);
        assert_eq!(profiles["B"].metro_taps, 1);
        assert!(build_profiles(&[]).is_empty());
    }

    #[test]
    fn shared_card_sets() {
        let mk = |ids: &[&str]| -> BTreeMap<String, WeeklyProfile> {
            ids.iter().map(|i| (i.to_string(), WeeklyProfile::new(*i))).collect()
        };
        let abc = mk(&["A", "B", "C"]);
        assert_eq!(shared_cards(&abc, &abc).len(), 3);
        assert!(shared_cards(&abc, &mk(&["X"])).is_empty());
        let got: Vec<_> = shared_cards(&abc, &mk(&["B", "C", "D"])).into_iter().collect();
        assert_eq!(got, vec!["B".to_string(), "C".to_string()]);
    }

    #[test]
    fn profile_csv_roundtrip() {
        let mut p = WeeklyProfile::new("card,1");
        p.slots[0] = 3;
        p.slots[167] = 1;
        p.metro_taps = 2;
        let mut buf = Vec::new();
        write_profiles(&mut buf, [&p]).unwrap();
        let back = read_profiles(buf.as_slice()).unwrap();
        assert_eq!(back["card,1"], p);
    }
}
