//! Seeded generator of labelled synthetic fare records.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::extreme::WEEKDAYS;
use crate::ingest::{write_records, EventKind, IngestError, Mode, ObservationPeriod, ScdRecord, DAYS};

/// Written into the header comment of every generated stream.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    Commuter,
    OneDayRider,
    TwoDayRider,
    MultiDayRider,
    EarlyBird,
    NightOwl,
    TirelessItinerant,
    RecurringItinerant,
}

impl Archetype {
    pub const ALL: [Archetype; 8] = [
        Archetype::Commuter,
        Archetype::OneDayRider,
        Archetype::TwoDayRider,
        Archetype::MultiDayRider,
        Archetype::EarlyBird,
        Archetype::NightOwl,
        Archetype::TirelessItinerant,
        Archetype::RecurringItinerant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Commuter => "Commuter",
            Archetype::OneDayRider => "OneDayRider",
            Archetype::TwoDayRider => "TwoDayRider",
            Archetype::MultiDayRider => "MultiDayRider",
            Archetype::EarlyBird => "EarlyBird",
            Archetype::NightOwl => "NightOwl",
            Archetype::TirelessItinerant => "TirelessItinerant",
            Archetype::RecurringItinerant => "RecurringItinerant",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown archetype {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSpec {
    pub archetype: Archetype,
    pub count: usize,
    /// Each tap moves uniformly within `+-jitter_hours` of its template time.
    #[serde(default)]
    pub jitter_hours: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    /// Sorted by card id, then time.
    pub records: Vec<ScdRecord>,
    pub labels: BTreeMap<String, Archetype>,
}

pub fn card_id(n: usize) -> String {
    format!("card-{n:06}")
}

struct Tap {
    day: usize,
    minute: i64,
    mode: Mode,
    event: EventKind,
}

fn jittered(rng: &mut ChaCha8Rng, minute: i64, jitter_hours: f64) -> i64 {
    if jitter_hours <= 0.0 {
        return minute;
    }
    let offset = rng.gen_range(-jitter_hours..=jitter_hours) * 60.0;
    (minute + offset.round() as i64).clamp(0, 24 * 60 - 1)
}

fn sorted_days(rng: &mut ChaCha8Rng, pool: usize, k: usize) -> Vec<usize> {
    let mut d = sample(rng, pool, k).into_vec();
    d.sort_unstable();
    d
}

// Bare taps at the given template hours (as minutes) on each day.
fn bare(rng: &mut ChaCha8Rng, days: &[usize], minutes: &[i64], jitter: f64, mode: Mode) -> Vec<Tap> {
    let mut taps = Vec::new();
    for &day in days {
        for &m in minutes {
            taps.push(Tap {
                day,
                minute: jittered(rng, m, jitter),
                mode,
                event: EventKind::Transaction,
            });
        }
    }
    taps
}

// Metro boarding at each start, alighting `ride` minutes later.
fn rides(rng: &mut ChaCha8Rng, days: &[usize], starts: &[i64], ride: i64, jitter: f64) -> Vec<Tap> {
    let mut taps = Vec::new();
    for &day in days {
        for &s in starts {
            let board = jittered(rng, s, jitter).min(24 * 60 - 1 - ride);
            taps.push(Tap {
                day,
                minute: board,
                mode: Mode::Metro,
                event: EventKind::Boarding,
            });
            taps.push(Tap {
                day,
                minute: board + ride,
                mode: Mode::Metro,
                event: EventKind::Alighting,
            });
        }
    }
    taps
}

fn template(rng: &mut ChaCha8Rng, archetype: Archetype, jitter: f64) -> Vec<Tap> {
    let h = |hour: i64, min: i64| hour * 60 + min;
    let weekdays: Vec<usize> = (0..WEEKDAYS).collect();
    let mode = if rng.gen_bool(0.5) { Mode::Metro } else { Mode::Bus };
    match archetype {
        Archetype::Commuter => bare(rng, &weekdays, &[h(8, 0), h(18, 0)], jitter, mode),
        Archetype::OneDayRider => {
            let day = rng.gen_range(0..DAYS);
            bare(rng, &[day], &[h(10, 30), h(16, 30)], jitter, mode)
        }
        Archetype::TwoDayRider => {
            let days = sorted_days(rng, DAYS, 2);
            bare(rng, &days, &[h(12, 30), h(19, 30)], jitter, mode)
        }
        Archetype::MultiDayRider => {
            let start = rng.gen_range(0..DAYS);
            let days: Vec<usize> = (0..3).map(|i| (start + i) % DAYS).collect();
            bare(rng, &days, &[h(14, 30), h(21, 30)], jitter, mode)
        }
        Archetype::EarlyBird => {
            let n = rng.gen_range(3..=WEEKDAYS);
            let days = sorted_days(rng, WEEKDAYS, n);
            bare(rng, &days, &[h(5, 30), h(15, 30)], jitter, mode)
        }
        Archetype::NightOwl => {
            let n = rng.gen_range(3..=WEEKDAYS);
            let days = sorted_days(rng, WEEKDAYS, n);
            bare(rng, &days, &[h(14, 0), h(22, 30)], jitter, mode)
        }
        Archetype::TirelessItinerant => {
            let days = sorted_days(rng, DAYS, 3);
            rides(rng, &days, &[h(10, 0)], 100, jitter)
        }
        Archetype::RecurringItinerant => rides(rng, &weekdays, &[h(7, 0), h(12, 0), h(17, 0)], 20, jitter),
    }
}

fn render(
    rng: &mut ChaCha8Rng,
    card: &str,
    archetype: Archetype,
    jitter: f64,
    period: &ObservationPeriod,
) -> Vec<ScdRecord> {
    let start: NaiveDateTime = period.start();
    let mut out: Vec<ScdRecord> = template(rng, archetype, jitter)
        .into_iter()
        .map(|t| ScdRecord {
            card_id: card.to_string(),
            timestamp: start + Duration::days(t.day as i64) + Duration::minutes(t.minute),
            mode: t.mode,
            station_id: format!("s{:03}", rng.gen_range(0..64)),
            event: t.event,
        })
        .collect();
    out.sort_by_key(|r| r.timestamp);
    out
}

/// Generates every spec in order. Card ids are assigned sequentially across
/// specs; each spec draws from its own generator seeded with `spec.seed`.
pub fn generate(specs: &[ArchetypeSpec], period: &ObservationPeriod) -> SyntheticPopulation {
    let mut records = Vec::new();
    let mut labels = BTreeMap::new();
    let mut next = 0;
    for spec in specs {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for _ in 0..spec.count {
            next += 1;
            let id = card_id(next);
            records.extend(render(&mut rng, &id, spec.archetype, spec.jitter_hours, period));
            labels.insert(id, spec.archetype);
        }
    }
    records.sort_by(|a, b| (&a.card_id, a.timestamp).cmp(&(&b.card_id, b.timestamp)));
    SyntheticPopulation { records, labels }
}

/// Re-generates an existing population for a later period. Each card keeps
/// its archetype, except that with probability `churn` it draws a new one
/// uniformly from the archetypes present.
pub fn generate_followup(
    previous: &BTreeMap<String, Archetype>,
    jitter_hours: f64,
    churn: f64,
    seed: u64,
    period: &ObservationPeriod,
) -> SyntheticPopulation {
    let mut pool: Vec<Archetype> = previous.values().copied().collect();
    pool.sort_unstable();
    pool.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut labels = BTreeMap::new();
    for (card, &old) in previous {
        let archetype = if rng.gen_bool(churn.clamp(0.0, 1.0)) {
            pool[rng.gen_range(0..pool.len())]
        } else {
            old
        };
        records.extend(render(&mut rng, card, archetype, jitter_hours, period));
        labels.insert(card.clone(), archetype);
    }
    SyntheticPopulation { records, labels }
}

/// Writes the record stream preceded by a comment naming the generator.
pub fn write_stream<W: Write>(mut out: W, population: &SyntheticPopulation, seeds: &[u64]) -> Result<(), IngestError> {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    writeln!(out, "# rng={RNG_ALGORITHM} seeds={}", seeds.join(" "))?;
    write_records(out, &population.records)
}

/// Writes `card_id,archetype`.
pub fn write_labels<W: Write>(out: W, labels: &BTreeMap<String, Archetype>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["card_id", "archetype"])?;
    for (card, a) in labels {
        w.write_record([card.as_str(), a.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extreme::{classify_extreme, ExtremeClass, ExtremeRuleConfig};
    use crate::ingest::{build_profiles, parse_records, records_by_card};
    use chrono::NaiveDate;

    fn week() -> ObservationPeriod {
        ObservationPeriod::new("w", NaiveDate::from_ymd_opt(2024, 3, 4).unwrap()).unwrap()
    }

    fn spec(archetype: Archetype, count: usize, jitter_hours: f64) -> ArchetypeSpec {
        ArchetypeSpec {
            archetype,
            count,
            jitter_hours,
            seed: 7,
        }
    }

    #[test]
    fn one_commuter_without_jitter() {
        let pop = generate(&[spec(Archetype::Commuter, 1, 0.0)], &week());
        assert_eq!(pop.records.len(), 10);
        let profile = &build_profiles(&pop.records)["card-000001"];
        for d in 0..5 {
            assert_eq!(profile.slots[d * 24 + 8], 1);
            assert_eq!(profile.slots[d * 24 + 18], 1);
        }
        assert_eq!(profile.total(), 10);
        assert!(pop.records.iter().all(|r| r.timestamp.format("%M:%S").to_string() == "00:00"));
    }

    #[test]
    fn same_seed_same_bytes() {
        let specs: Vec<ArchetypeSpec> = Archetype::ALL.iter().map(|&a| spec(a, 20, 1.0)).collect();
        let write = || {
            let mut buf = Vec::new();
            write_stream(&mut buf, &generate(&specs, &week()), &[7]).unwrap();
            buf
        };
        assert_eq!(write(), write());
    }

    #[test]
    fn labels_match_stream_cards() {
        let specs: Vec<ArchetypeSpec> = Archetype::ALL.iter().map(|&a| spec(a, 5, 0.5)).collect();
        let pop = generate(&specs, &week());
        let cards: std::collections::BTreeSet<&String> = pop.records.iter().map(|r| &r.card_id).collect();
        assert_eq!(cards.len(), pop.labels.len());
        assert!(cards.iter().all(|c| pop.labels.contains_key(*c)));
    }

    #[test]
    fn stream_parses_back() {
        let pop = generate(&[spec(Archetype::TwoDayRider, 30, 1.0)], &week());
        let mut buf = Vec::new();
        write_stream(&mut buf, &pop, &[7]).unwrap();
        assert!(buf.starts_with(b"# rng=chacha8"));
        let parsed = parse_records(buf.as_slice(), &week()).unwrap();
        assert_eq!(parsed.records, pop.records);
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn extreme_cohorts_recovered() {
        let cfg = ExtremeRuleConfig::default();
        for (archetype, class) in [
            (Archetype::EarlyBird, ExtremeClass::EB),
            (Archetype::NightOwl, ExtremeClass::NO),
            (Archetype::TirelessItinerant, ExtremeClass::TI),
            (Archetype::RecurringItinerant, ExtremeClass::RI),
            (Archetype::Commuter, ExtremeClass::NE),
            (Archetype::OneDayRider, ExtremeClass::NE),
            (Archetype::TwoDayRider, ExtremeClass::NE),
            (Archetype::MultiDayRider, ExtremeClass::NE),
        ] {
            let pop = generate(&[spec(archetype, 100, 0.0)], &week());
            let profiles = build_profiles(&pop.records);
            let by_card = records_by_card(&pop.records);
            assert_eq!(profiles.len(), 100);
            for (card, p) in &profiles {
                assert_eq!(classify_extreme(p, &by_card[card], &cfg), class, "{archetype} {card}");
            }
        }
    }

    #[test]
    fn followup_keeps_cards_and_churns() {
        let pop = generate(&[spec(Archetype::Commuter, 200, 0.0), spec(Archetype::OneDayRider, 200, 0.0)], &week());
        let same = generate_followup(&pop.labels, 0.0, 0.0, 3, &week());
        assert_eq!(same.labels, pop.labels);
        let moved = generate_followup(&pop.labels, 0.0, 1.0, 3, &week());
        assert_eq!(moved.labels.len(), 400);
        let changed = moved.labels.iter().filter(|(c, a)| pop.labels[*c] != **a).count();
        assert!(changed > 100 && changed < 300);
    }
}
