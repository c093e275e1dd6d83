//! Rule-based detection of extreme travelers.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{NaiveDate, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::ingest::{EventKind, ScdRecord, WeeklyProfile, DAYS, HOURS};

/// Weekdays are days 0..5 (Monday to Friday).
pub const WEEKDAYS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExtremeClass {
    /// Early bird
    EB,
    /// Night owl
    NO,
    /// Tireless itinerant
    TI,
    /// Recurring itinerant
    RI,
    /// Not extreme
    NE,
}

impl ExtremeClass {
    /// Table order, also the tie-break precedence for the four extreme types.
    pub const ALL: [ExtremeClass; 5] = [
        ExtremeClass::EB,
        ExtremeClass::NO,
        ExtremeClass::TI,
        ExtremeClass::RI,
        ExtremeClass::NE,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExtremeClass::EB => "EB",
            ExtremeClass::NO => "NO",
            ExtremeClass::TI => "TI",
            ExtremeClass::RI => "RI",
            ExtremeClass::NE => "NE",
        }
    }

    pub fn is_extreme(self) -> bool {
        self != ExtremeClass::NE
    }
}

impl fmt::Display for ExtremeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtremeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExtremeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown extreme class {s:?}"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtremeConfigError {
    #[error("{name} must be an hour in [0, 24), got {value}")]
    HourOutOfRange { name: &'static str, value: u32 },
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtremeRuleConfig {
    pub eb_cutoff_hour: u32,
    pub no_cutoff_hour: u32,
    pub min_days: u32,
    pub ti_min_duration_minutes: u32,
    pub ri_min_weekday_trips: u32,
    /// Bare same-day taps at most this far apart are chained into one trip.
    pub chain_gap_minutes: u32,
}

impl Default for ExtremeRuleConfig {
    fn default() -> Self {
        Self {
            eb_cutoff_hour: 6,
            no_cutoff_hour: 22,
            min_days: 3,
            ti_min_duration_minutes: 90,
            ri_min_weekday_trips: 30,
            chain_gap_minutes: 180,
        }
    }
}

impl ExtremeRuleConfig {
    pub fn validate(&self) -> Result<(), ExtremeConfigError> {
        for (name, value) in [
            ("eb_cutoff_hour", self.eb_cutoff_hour),
            ("no_cutoff_hour", self.no_cutoff_hour),
        ] {
            if value as usize >= HOURS {
                return Err(ExtremeConfigError::HourOutOfRange { name, value });
            }
        }
        for (name, value) in [
            ("min_days", self.min_days),
            ("ti_min_duration_minutes", self.ti_min_duration_minutes),
            ("ri_min_weekday_trips", self.ri_min_weekday_trips),
            ("chain_gap_minutes", self.chain_gap_minutes),
        ] {
            if value == 0 {
                return Err(ExtremeConfigError::NotPositive(name));
            }
        }
        Ok(())
    }
}

/// Estimated duration of one trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripDuration {
    pub date: NaiveDate,
    pub day: usize,
    pub minutes: i64,
}

/// Duration estimates from a card's records.
///
/// A boarding immediately followed by an alighting on the same date is one
/// trip. Every other tap is a bare tap; same-date bare taps no more than
/// `chain_gap_minutes` apart are chained and the chain's span is its
/// duration. Lone taps produce nothing.
pub fn trip_duration_estimates(records: &[ScdRecord], chain_gap_minutes: u32) -> Vec<TripDuration> {
    let mut sorted: Vec<&ScdRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.event.cmp(&b.event)));

    let mut out = Vec::new();
    let mut bare: Vec<&ScdRecord> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let rec = sorted[i];
        if rec.event == EventKind::Boarding {
            if let Some(next) = sorted.get(i + 1) {
                if next.event == EventKind::Alighting && next.timestamp.date() == rec.timestamp.date() {
                    out.push(TripDuration {
                        date: rec.timestamp.date(),
                        day: rec.day(),
                        minutes: (next.timestamp - rec.timestamp).num_minutes(),
                    });
                    i += 2;
                    continue;
                }
            }
        }
        bare.push(rec);
        i += 1;
    }

    let gap = chain_gap_minutes as i64;
    let mut start = 0;
    while start < bare.len() {
        let mut end = start;
        while end + 1 < bare.len()
            && bare[end + 1].timestamp.date() == bare[end].timestamp.date()
            && (bare[end + 1].timestamp - bare[end].timestamp).num_minutes() <= gap
        {
            end += 1;
        }
        if end > start {
            out.push(TripDuration {
                date: bare[start].timestamp.date(),
                day: bare[start].day(),
                minutes: (bare[end].timestamp - bare[start].timestamp).num_minutes(),
            });
        }
        start = end + 1;
    }
    out.sort_by_key(|t| (t.date, t.minutes));
    out
}

/// Classifies one card's week. Precedence when several rules fire:
/// EB, then NO, then TI, then RI.
pub fn classify_extreme(
    profile: &WeeklyProfile,
    records: &[ScdRecord],
    cfg: &ExtremeRuleConfig,
) -> ExtremeClass {
    let mut first = [None; WEEKDAYS];
    let mut last = [None; WEEKDAYS];
    for rec in records {
        let day = rec.day();
        if day >= WEEKDAYS {
            continue;
        }
        let t = rec.timestamp.time();
        first[day] = Some(first[day].map_or(t, |f: chrono::NaiveTime| f.min(t)));
        last[day] = Some(last[day].map_or(t, |l: chrono::NaiveTime| l.max(t)));
    }
    let min_days = cfg.min_days as usize;

    let early = first
        .iter()
        .flatten()
        .filter(|t| t.hour() < cfg.eb_cutoff_hour)
        .count();
    if early >= min_days {
        return ExtremeClass::EB;
    }

    let late = last
        .iter()
        .flatten()
        .filter(|t| t.hour() >= cfg.no_cutoff_hour)
        .count();
    if late >= min_days {
        return ExtremeClass::NO;
    }

    let mut long_days = [false; DAYS];
    for trip in trip_duration_estimates(records, cfg.chain_gap_minutes) {
        if trip.minutes >= cfg.ti_min_duration_minutes as i64 {
            long_days[trip.day] = true;
        }
    }
    if long_days.iter().filter(|&&d| d).count() >= min_days {
        return ExtremeClass::TI;
    }

    let weekday_taps: u64 = profile.slots[..WEEKDAYS * HOURS].iter().map(|&v| v as u64).sum();
    if weekday_taps >= cfg.ri_min_weekday_trips as u64 {
        return ExtremeClass::RI;
    }
    ExtremeClass::NE
}

/// Classifies every profiled card. Cards without records are classified
/// from their profile alone.
pub fn classify_population(
    profiles: &BTreeMap<String, WeeklyProfile>,
    records: &BTreeMap<String, Vec<ScdRecord>>,
    cfg: &ExtremeRuleConfig,
    exec: Execution,
) -> BTreeMap<String, ExtremeClass> {
    let cards: Vec<&WeeklyProfile> = profiles.values().collect();
    let classes = exec.map(&cards, |p| {
        let recs = records.get(&p.card_id).map(Vec::as_slice).unwrap_or(&[]);
        classify_extreme(p, recs, cfg)
    });
    cards
        .into_iter()
        .zip(classes)
        .map(|(p, c)| (p.card_id.clone(), c))
        .collect()
}

/// Writes `card_id,period,extreme_class`.
pub fn write_classes<W: Write>(
    out: W,
    period: &str,
    classes: &BTreeMap<String, ExtremeClass>,
) -> csv::Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["card_id", "period", "extreme_class"])?;
    for (card, class) in classes {
        w.write_record([card.as_str(), period, class.as_str()])?;
    }
    w.flush()?;
    Ok(classes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_profiles, Mode, TIMESTAMP_FORMAT};
    use chrono::NaiveDateTime;
    use proptest::prelude::*;

    // 2024-03-04 is a Monday.
    fn tap(day: u32, hm: &str, event: EventKind) -> ScdRecord {
        let ts = format!("2024-03-{:02} {hm}:00", 4 + day);
        ScdRecord {
            card_id: "X".into(),
            timestamp: NaiveDateTime::parse_from_str(&ts, TIMESTAMP_FORMAT).unwrap(),
            mode: Mode::Metro,
            station_id: "s".into(),
            event,
        }
    }

    fn tx(day: u32, hm: &str) -> ScdRecord {
        tap(day, hm, EventKind::Transaction)
    }

    fn classify(records: &[ScdRecord]) -> ExtremeClass {
        classify_with(records, &ExtremeRuleConfig::default())
    }

    fn classify_with(records: &[ScdRecord], cfg: &ExtremeRuleConfig) -> ExtremeClass {
        let profiles = build_profiles(records);
        let profile = profiles.get("X").cloned().unwrap_or_else(|| WeeklyProfile::new("X"));
        classify_extreme(&profile, records, cfg)
    }

    #[test]
    fn early_bird_three_weekdays() {
        let recs = [tx(0, "05:30"), tx(2, "05:30"), tx(4, "05:30")];
        assert_eq!(classify(&recs), ExtremeClass::EB);
        assert_eq!(classify(&recs[..2]), ExtremeClass::NE);
    }

    #[test]
    fn weekend_only_is_not_extreme() {
        let recs = [tx(5, "04:00"), tx(5, "23:00"), tx(6, "04:30"), tx(6, "23:30")];
        assert_eq!(classify(&recs), ExtremeClass::NE);
    }

    #[test]
    fn night_owl_cutoff_is_inclusive() {
        let recs = [tx(0, "22:00"), tx(1, "22:10"), tx(3, "23:59")];
        assert_eq!(classify(&recs), ExtremeClass::NO);
        let recs = [tx(0, "21:59"), tx(1, "22:10"), tx(3, "23:59")];
        assert_eq!(classify(&recs), ExtremeClass::NE);
    }

    #[test]
    fn first_trip_decides_early_bird() {
        // an early tap that is not the day's first cannot exist; but a late-morning
        // first tap on the other days must not count
        let recs = [tx(0, "05:00"), tx(1, "05:59"), tx(2, "06:00")];
        assert_eq!(classify(&recs), ExtremeClass::NE);
    }

    #[test]
    fn thirty_spread_taps_is_recurring() {
        let mut recs = Vec::new();
        // 181-minute gaps so no two taps chain
        for day in 0..5 {
            for hm in ["06:00", "09:01", "12:02", "15:03", "18:04", "21:05"] {
                recs.push(tx(day, hm));
            }
        }
        assert_eq!(recs.len(), 30);
        assert_eq!(classify(&recs), ExtremeClass::RI);
        assert_eq!(classify(&recs[1..]), ExtremeClass::NE);
    }

    #[test]
    fn long_commutes_make_tireless_itinerant() {
        let mut recs = Vec::new();
        for day in [0, 3, 6] {
            recs.push(tap(day, "08:00", EventKind::Boarding));
            recs.push(tap(day, "09:35", EventKind::Alighting));
        }
        assert_eq!(classify(&recs), ExtremeClass::TI);
        recs.truncate(4);
        assert_eq!(classify(&recs), ExtremeClass::NE);
    }

    #[test]
    fn precedence_order() {
        // Satisfies EB, NO and TI at once
        let mut recs = Vec::new();
        for day in 0..3 {
            recs.push(tap(day, "05:00", EventKind::Boarding));
            recs.push(tap(day, "07:00", EventKind::Alighting));
            recs.push(tx(day, "22:30"));
        }
        assert_eq!(classify(&recs), ExtremeClass::EB);
        let no_eb = ExtremeRuleConfig { eb_cutoff_hour: 4, ..Default::default() };
        assert_eq!(classify_with(&recs, &no_eb), ExtremeClass::NO);
        let only_ti = ExtremeRuleConfig { eb_cutoff_hour: 4, no_cutoff_hour: 23, ..Default::default() };
        assert_eq!(classify_with(&recs, &only_ti), ExtremeClass::TI);
        let only_ri = ExtremeRuleConfig {
            eb_cutoff_hour: 4,
            no_cutoff_hour: 23,
            ti_min_duration_minutes: 1000,
            ri_min_weekday_trips: 9,
            ..Default::default()
        };
        assert_eq!(classify_with(&recs, &only_ri), ExtremeClass::RI);
    }

    #[test]
    fn duration_pairs_and_chains() {
        let d = trip_duration_estimates(
            &[tap(0, "08:00", EventKind::Boarding), tap(0, "09:40", EventKind::Alighting)],
            180,
        );
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].minutes, 100);

        let d = trip_duration_estimates(&[tx(1, "08:00"), tx(1, "08:45")], 180);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].minutes, 45);
        assert_eq!(d[0].day, 1);

        assert!(trip_duration_estimates(&[tx(1, "08:00")], 180).is_empty());
        // different days never chain
        assert!(trip_duration_estimates(&[tx(1, "23:30"), tx(2, "00:10")], 180).is_empty());
        // gap too wide
        assert!(trip_duration_estimates(&[tx(1, "08:00"), tx(1, "11:01")], 180).is_empty());
    }

    #[test]
    fn unpaired_boarding_is_a_bare_tap() {
        let d = trip_duration_estimates(
            &[tap(0, "08:00", EventKind::Boarding), tx(0, "09:00"), tap(0, "20:00", EventKind::Alighting)],
            180,
        );
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].minutes, 60);
    }

    #[test]
    fn config_validation() {
        assert!(ExtremeRuleConfig::default().validate().is_ok());
        let bad = ExtremeRuleConfig { no_cutoff_hour: 24, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExtremeRuleConfig { min_days: 0, ..Default::default() };
        assert_eq!(bad.validate(), Err(ExtremeConfigError::NotPositive("min_days")));
    }

    fn any_week() -> impl Strategy<Value = Vec<ScdRecord>> {
        prop::collection::vec((0u32..7, 0u32..24, 0u32..60, 0usize..3), 0..40).prop_map(|taps| {
            taps.into_iter()
                .map(|(d, h, m, e)| {
                    let ev = [EventKind::Boarding, EventKind::Alighting, EventKind::Transaction][e];
                    tap(d, &format!("{h:02}:{m:02}"), ev)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn unreachable_thresholds_give_ne(recs in any_week()) {
            let cfg = ExtremeRuleConfig {
                min_days: 8,
                ri_min_weekday_trips: u32::MAX,
                ..Default::default()
            };
            prop_assert_eq!(classify_with(&recs, &cfg), ExtremeClass::NE);
        }

        #[test]
        fn extra_early_first_tap_keeps_early_bird(recs in any_week(), day in 0u32..5) {
            let before = classify(&recs);
            let mut more = recs.clone();
            more.push(tx(day, "05:10"));
            let after = classify(&more);
            if before == ExtremeClass::EB {
                prop_assert_eq!(after, ExtremeClass::EB);
            }
        }
    }
}
