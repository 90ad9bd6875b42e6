//! Event-table ingestion and covariate encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, RegionSet};
use crate::sparse::CscMatrix;

pub use crate::likelihoods::effect_reduction as odds_reduction;

/// Event types listed in the event codebook used by the shipped sample.
pub const DEFAULT_EVENT_TYPES: [&str; 13] = [
    "Violent demonstration",
    "Suicide bomb",
    "Shelling/artillery/missile attack",
    "Sexual violence",
    "Remote explosive/landmine/IED",
    "Government regains territory",
    "Attack",
    "Armed clash",
    "Abduction/forced disappearance",
    "Non-state actor overtakes territory",
    "Mob violence",
    "Grenade",
    "Air/drone strike",
];

/// Label used for events with no recognised group.
pub const NO_GROUP: &str = "None";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    pub fn label(&self) -> &'static str {
        match self {
            Season::Winter => "Winter",
            Season::Spring => "Spring",
            Season::Summer => "Summer",
            Season::Autumn => "Autumn",
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Northern-hemisphere meteorological seasons.
pub fn encode_season(month: u32) -> Result<Season> {
    match month {
        12 | 1 | 2 => Ok(Season::Winter),
        3..=5 => Ok(Season::Spring),
        6..=8 => Ok(Season::Summer),
        9..=11 => Ok(Season::Autumn),
        _ => Err(Error::invalid(format!("month must be in 1..=12, got {month}"))),
    }
}

/// Group names and the aliases that identify them in free-text notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLexicon {
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub label: String,
    pub aliases: Vec<String>,
}

impl Default for GroupLexicon {
    fn default() -> Self {
        let entry = |label: &str, aliases: &[&str]| GroupEntry {
            label: label.into(),
            aliases: std::iter::once(label).chain(aliases.iter().copied()).map(String::from).collect(),
        };
        Self {
            groups: vec![
                entry("Eritrea army", &["Eritrean army", "Military Forces of Eritrea", "Eritrean Defence Forces"]),
                entry("EDF", &["Ethiopian Defense Force", "Ethiopian National Defense Force", "ENDF"]),
                entry("EUFF", &["Ethiopian Unity and Freedom Force"]),
                entry("Ginbot7", &["Ginbot 7", "Patriotic Ginbot 7"]),
                entry("ONLF", &["Ogaden National Liberation Front"]),
                entry("OLA", &["Oromo Liberation Army"]),
                entry("SPLA", &["Sudan People's Liberation Army", "South Sudan People's Defence Forces"]),
                entry("TPDM", &["Tigray People's Democratic Movement"]),
                entry("TPLF", &["Tigray People's Liberation Front"]),
            ],
        }
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

impl GroupLexicon {
    /// Longest alias occurring as a whole word (case-insensitive); ties go
    /// to the earliest position in the text, then to lexicon order.
    pub fn extract(&self, notes: &str) -> Option<&str> {
        let text = notes.to_ascii_lowercase();
        let bytes = text.as_bytes();
        let mut best: Option<(usize, usize, &str)> = None;
        for g in &self.groups {
            for alias in &g.aliases {
                let a = alias.to_ascii_lowercase();
                if a.is_empty() {
                    continue;
                }
                let mut from = 0;
                while let Some(off) = text[from..].find(&a) {
                    let start = from + off;
                    let end = start + a.len();
                    let left_ok = start == 0 || !is_word_byte(bytes[start - 1]);
                    let right_ok = end == bytes.len() || !is_word_byte(bytes[end]);
                    if left_ok && right_ok {
                        let better = match best {
                            None => true,
                            Some((len, pos, _)) => a.len() > len || (a.len() == len && start < pos),
                        };
                        if better {
                            best = Some((a.len(), start, g.label.as_str()));
                        }
                        break;
                    }
                    from = start + 1;
                }
            }
        }
        best.map(|(_, _, label)| label)
    }
}

/// Convenience wrapper over [`GroupLexicon::extract`].
pub fn extract_group<'a>(notes: &str, lexicon: &'a GroupLexicon) -> Option<&'a str> {
    lexicon.extract(notes)
}

/// One violent event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub point: Point,
    pub year: i32,
    pub month: u32,
    pub event_type: String,
    pub group: Option<String>,
    pub fatalities: u64,
    /// Source line in the input file (1-based, header is line 1).
    pub line: u64,
    pub notes: String,
}

impl EventRecord {
    pub fn season(&self) -> Season {
        encode_season(self.month).expect("validated month")
    }
}

/// Column names and validation rules for the event table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub longitude: String,
    pub latitude: String,
    pub year: String,
    pub month: String,
    pub event_date: String,
    pub event_type: String,
    pub fatalities: String,
    pub notes: String,
    /// Accepted event types; `None` accepts any label.
    pub event_types: Option<Vec<String>>,
    pub year_range: Option<(i32, i32)>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            longitude: "longitude".into(),
            latitude: "latitude".into(),
            year: "year".into(),
            month: "month".into(),
            event_date: "event_date".into(),
            event_type: "event_type".into(),
            fatalities: "fatalities".into(),
            notes: "notes".into(),
            event_types: None,
            year_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub records: Vec<EventRecord>,
    pub errors: Vec<RowError>,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    ["%Y-%m-%d", "%d %B %Y", "%d-%b-%Y", "%d/%m/%Y"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s.trim(), f).ok())
}

/// Parses an event CSV. Malformed rows are reported with their line numbers
/// rather than dropped silently; a missing required column is an error.
pub fn parse_events<R: Read>(reader: R, schema: &SchemaConfig, lexicon: &GroupLexicon) -> Result<ParseReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let required = |name: &str| column(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let lon_c = required(&schema.longitude)?;
    let lat_c = required(&schema.latitude)?;
    let type_c = required(&schema.event_type)?;
    let fat_c = required(&schema.fatalities)?;
    let year_c = column(&schema.year);
    let month_c = column(&schema.month);
    let date_c = column(&schema.event_date);
    if month_c.is_none() && date_c.is_none() {
        return Err(Error::MissingColumn(format!("{} or {}", schema.month, schema.event_date)));
    }
    if year_c.is_none() && date_c.is_none() {
        return Err(Error::MissingColumn(format!("{} or {}", schema.year, schema.event_date)));
    }
    let notes_c = column(&schema.notes);
    let vocabulary: Option<BTreeSet<&str>> = schema
        .event_types
        .as_ref()
        .map(|v| v.iter().map(String::as_str).collect());

    let mut report = ParseReport::default();
    for (k, row) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let field = |c: usize| row.get(c).map(str::trim).unwrap_or("");
        let parsed = (|| -> std::result::Result<EventRecord, String> {
            let lon: f64 = field(lon_c).parse().map_err(|_| format!("unparseable longitude {:?}", field(lon_c)))?;
            let lat: f64 = field(lat_c).parse().map_err(|_| format!("unparseable latitude {:?}", field(lat_c)))?;
            let point = Point::geographic(lon, lat).map_err(|e| e.to_string())?;
            let date = date_c.map(|c| field(c)).filter(|s| !s.is_empty()).map(|s| {
                parse_date(s).ok_or_else(|| format!("unparseable event date {s:?}"))
            });
            let date = date.transpose()?;
            let year = match year_c.map(|c| field(c)).filter(|s| !s.is_empty()) {
                Some(s) => s.parse::<i32>().map_err(|_| format!("unparseable year {s:?}"))?,
                None => date.map(|d| d.year()).ok_or("missing year")?,
            };
            let month = match month_c.map(|c| field(c)).filter(|s| !s.is_empty()) {
                Some(s) => s.parse::<u32>().map_err(|_| format!("unparseable month {s:?}"))?,
                None => date.map(|d| d.month()).ok_or("missing month")?,
            };
            encode_season(month).map_err(|e| e.to_string())?;
            if let Some((lo, hi)) = schema.year_range {
                if year < lo || year > hi {
                    return Err(format!("year {year} outside {lo}..={hi}"));
                }
            }
            let event_type = field(type_c).to_string();
            if event_type.is_empty() {
                return Err("empty event type".into());
            }
            if let Some(v) = &vocabulary {
                if !v.contains(event_type.as_str()) {
                    return Err(format!("event type {event_type:?} not in the configured vocabulary"));
                }
            }
            let fat = field(fat_c);
            let fatalities: i64 = fat.parse().map_err(|_| format!("unparseable fatalities {fat:?}"))?;
            if fatalities < 0 {
                return Err(format!("negative fatalities {fatalities}"));
            }
            let notes = notes_c.map(|c| field(c).to_string()).unwrap_or_default();
            Ok(EventRecord {
                point,
                year,
                month,
                group: lexicon.extract(&notes).map(String::from),
                event_type,
                fatalities: fatalities as u64,
                line,
                notes,
            })
        })();
        match parsed {
            Ok(r) => report.records.push(r),
            Err(message) => report.errors.push(RowError { line, message }),
        }
    }
    Ok(report)
}

/// Writes events in the input schema (`event_date` is not emitted).
pub fn write_events<W: Write>(records: &[EventRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["longitude", "latitude", "year", "month", "event_type", "fatalities", "notes"])?;
    for r in records {
        w.write_record([
            r.point.lon.to_string(),
            r.point.lat.to_string(),
            r.year.to_string(),
            r.month.to_string(),
            r.event_type.clone(),
            r.fatalities.to_string(),
            r.notes.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnresolvedPolicy {
    #[default]
    Drop,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    /// Reference event type; defaults to the alphabetically first level.
    pub event_type_reference: Option<String>,
    /// Reference group; defaults to the alphabetically first level.
    pub group_reference: Option<String>,
    pub include_groups: bool,
    pub unresolved: UnresolvedPolicy,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            event_type_reference: None,
            group_reference: None,
            include_groups: true,
            unresolved: UnresolvedPolicy::Drop,
        }
    }
}

/// A dummy-coded categorical covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
    pub reference: usize,
    pub codes: Vec<usize>,
}

impl Factor {
    fn new(name: &str, values: &[String], reference: Option<&str>, fixed_levels: Option<&[&str]>) -> Result<Self> {
        let mut levels: Vec<String> = match fixed_levels {
            Some(l) => l.iter().map(|s| s.to_string()).collect(),
            None => values.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
        };
        if let Some(r) = reference {
            if !levels.iter().any(|l| l == r) {
                if fixed_levels.is_some() {
                    return Err(Error::invalid(format!("{name}: unknown reference level {r:?}")));
                }
                levels.push(r.to_string());
                levels.sort();
            }
        }
        let reference = match reference {
            Some(r) => levels.iter().position(|l| l == r).expect("reference present"),
            None => 0,
        };
        let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let codes = values
            .iter()
            .map(|v| {
                index
                    .get(v.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("{name}: unknown level {v:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.to_string(),
            levels,
            reference,
            codes,
        })
    }

    /// Level labels in row order.
    pub fn decode(&self) -> Vec<&str> {
        self.codes.iter().map(|&c| self.levels[c].as_str()).collect()
    }

    /// Design-column names for the non-reference levels.
    pub fn column_names(&self) -> Vec<String> {
        self.levels
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.reference)
            .map(|(_, l)| format!("{}[{l}]", self.name))
            .collect()
    }
}

/// Model-ready data: fixed-effect design, response, offsets and locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    /// `n × p` design with an intercept in column 0.
    pub fixed: CscMatrix,
    pub fixed_names: Vec<String>,
    pub y: Vec<u64>,
    /// Log population of the containing region in the event year.
    pub offset: Vec<f64>,
    pub points: Vec<Point>,
    pub years: Vec<i32>,
    pub regions: Vec<String>,
    pub factors: Vec<Factor>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_fixed(&self) -> usize {
        self.fixed.ncols()
    }

    /// Sorted distinct years.
    pub fn distinct_years(&self) -> Vec<i32> {
        self.years.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Builds the dummy-coded design from factors.
    pub fn design_from_factors(n: usize, factors: &[Factor]) -> (CscMatrix, Vec<String>) {
        let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, 0, 1.0)).collect();
        let mut names = vec!["intercept".to_string()];
        for f in factors {
            let base = names.len();
            let mut col_of = vec![None; f.levels.len()];
            let mut next = base;
            for (l, slot) in col_of.iter_mut().enumerate() {
                if l != f.reference {
                    *slot = Some(next);
                    next += 1;
                }
            }
            for (i, &c) in f.codes.iter().enumerate() {
                if let Some(j) = col_of[c] {
                    entries.push((i, j, 1.0));
                }
            }
            names.extend(f.column_names());
        }
        (CscMatrix::from_triplets(n, names.len(), &entries), names)
    }
}

/// Records excluded while building a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub dropped: Vec<RowError>,
}

/// Resolves regions and offsets and dummy-codes event type, season and
/// (optionally) group. Season uses Autumn as its reference level.
pub fn build_dataset(
    records: &[EventRecord],
    regions: &RegionSet,
    config: &EncodingConfig,
) -> Result<(EncodedDataset, DropReport)> {
    let mut report = DropReport::default();
    let mut kept: Vec<(&EventRecord, String, f64)> = Vec::with_capacity(records.len());
    let mut missing: BTreeSet<(String, i32)> = BTreeSet::new();
    for r in records {
        match regions.find(&r.point) {
            None => match config.unresolved {
                UnresolvedPolicy::Drop => report.dropped.push(RowError {
                    line: r.line,
                    message: format!("point ({}, {}) lies in no region", r.point.lon, r.point.lat),
                }),
                UnresolvedPolicy::Error => {
                    return Err(Error::RegionNotFound {
                        lon: r.point.lon,
                        lat: r.point.lat,
                    })
                }
            },
            Some(k) => {
                let region = &regions.regions()[k];
                match region.population.get(&r.year) {
                    Some(&pop) => kept.push((r, region.name.clone(), pop.ln())),
                    None => {
                        missing.insert((region.name.clone(), r.year));
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPopulations(missing.into_iter().collect()));
    }
    if kept.is_empty() {
        return Err(Error::invalid("no events left after region resolution"));
    }
    let n = kept.len();
    let types: Vec<String> = kept.iter().map(|(r, _, _)| r.event_type.clone()).collect();
    let seasons: Vec<String> = kept.iter().map(|(r, _, _)| r.season().label().to_string()).collect();
    let mut factors = vec![Factor::new("event_type", &types, config.event_type_reference.as_deref(), None)?];
    let season_levels: Vec<&str> = Season::ALL.iter().map(Season::label).collect();
    factors.push(Factor::new("season", &seasons, Some("Autumn"), Some(&season_levels))?);
    if config.include_groups {
        let groups: Vec<String> = kept
            .iter()
            .map(|(r, _, _)| r.group.clone().unwrap_or_else(|| NO_GROUP.to_string()))
            .collect();
        factors.push(Factor::new("group", &groups, config.group_reference.as_deref(), None)?);
    }
    let (fixed, fixed_names) = EncodedDataset::design_from_factors(n, &factors);
    Ok((
        EncodedDataset {
            fixed,
            fixed_names,
            y: kept.iter().map(|(r, _, _)| r.fatalities).collect(),
            offset: kept.iter().map(|(_, _, o)| *o).collect(),
            points: kept.iter().map(|(r, _, _)| r.point).collect(),
            years: kept.iter().map(|(r, _, _)| r.year).collect(),
            regions: kept.into_iter().map(|(_, name, _)| name).collect(),
            factors,
        },
        report,
    ))
}
