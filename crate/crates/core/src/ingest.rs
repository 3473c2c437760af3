//! Loaders for accident-record CSVs, mobility-report CSVs, and the windowing
//! of records around a change point.
//!
//! All loaders are pure functions of file contents; invalid rows are rejected
//! into a line-numbered report instead of being dropped silently.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate, NaiveDateTime, NaiveTime};

use crate::error::{Error, Result};

/// Timezone convention of a source dataset. The source files carry naive
/// timestamps; the tag records how they are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZoneTag {
    #[default]
    Utc,
    Local,
}

/// One accident record: when, where, plus pass-through demographic fields.
#[derive(Debug, Clone, PartialEq)]
pub struct AccidentRecord {
    pub timestamp: NaiveDateTime,
    pub zone: ZoneTag,
    pub latitude: f64,
    pub longitude: f64,
    pub attributes: BTreeMap<String, String>,
}

impl AccidentRecord {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date()
    }
}

/// Maps logical field names to source column names. The three cities'
/// portals all use different headers, so the mapping lives in a config file
/// rather than in code.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub timestamp: String,
    pub latitude: String,
    pub longitude: String,
    /// logical attribute name -> source column name
    pub attributes: BTreeMap<String, String>,
    pub zone: ZoneTag,
}

impl ColumnSchema {
    /// Schema whose source columns are already named `timestamp`,
    /// `latitude`, `longitude`.
    pub fn identity() -> Self {
        Self {
            timestamp: "timestamp".to_string(),
            latitude: "latitude".to_string(),
            longitude: "longitude".to_string(),
            attributes: BTreeMap::new(),
            zone: ZoneTag::Utc,
        }
    }

    /// Parses a schema config file: `key=value` lines, `#` comments.
    ///
    /// Recognized keys: `timestamp`, `latitude`, `longitude` (mandatory),
    /// `timezone` (`utc`|`local`), and `attr.<name>` for pass-through
    /// attribute columns.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_config(&text)
    }

    pub fn from_str_config(text: &str) -> Result<Self> {
        let mut timestamp = None;
        let mut latitude = None;
        let mut longitude = None;
        let mut attributes = BTreeMap::new();
        let mut zone = ZoneTag::Utc;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("schema line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim().to_string());
            match key {
                "timestamp" => timestamp = Some(value),
                "latitude" => latitude = Some(value),
                "longitude" => longitude = Some(value),
                "timezone" => {
                    zone = match value.as_str() {
                        "utc" => ZoneTag::Utc,
                        "local" => ZoneTag::Local,
                        other => {
                            return Err(Error::Schema(format!(
                                "unknown timezone tag {other:?} (expected utc or local)"
                            )))
                        }
                    }
                }
                k if k.starts_with("attr.") => {
                    attributes.insert(k["attr.".len()..].to_string(), value);
                }
                other => {
                    return Err(Error::Schema(format!("unknown schema key {other:?}")));
                }
            }
        }

        Ok(Self {
            timestamp: timestamp.ok_or_else(|| Error::Schema("missing key: timestamp".into()))?,
            latitude: latitude.ok_or_else(|| Error::Schema("missing key: latitude".into()))?,
            longitude: longitude.ok_or_else(|| Error::Schema("missing key: longitude".into()))?,
            attributes,
            zone,
        })
    }
}

/// A rejected input row and why it was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowRejection {
    /// 1-based line number in the source file.
    pub line: u64,
    pub reason: String,
}

/// Accepted ISO-8601 timestamp layouts. Date-only values are assigned 00:00.
fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt);
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_time(NaiveTime::MIN));
    }
    None
}

/// Loads accident records from a CSV file (UTF-8, header row, RFC-4180
/// quoting). Returns all valid records in file order plus a report of
/// rejected rows. A missing mandatory column is a schema error; a bad value
/// is a per-row rejection.
pub fn load_accidents(
    path: impl AsRef<Path>,
    schema: &ColumnSchema,
) -> Result<(Vec<AccidentRecord>, Vec<RowRejection>)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Csv {
                path: path.to_path_buf(),
                source: e,
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let ts_idx = col(&schema.timestamp)
        .ok_or_else(|| Error::Schema(format!("missing mandatory column {:?}", schema.timestamp)))?;
    let lat_idx = col(&schema.latitude)
        .ok_or_else(|| Error::Schema(format!("missing mandatory column {:?}", schema.latitude)))?;
    let lon_idx = col(&schema.longitude)
        .ok_or_else(|| Error::Schema(format!("missing mandatory column {:?}", schema.longitude)))?;
    let attr_idx: Vec<(String, usize)> = schema
        .attributes
        .iter()
        .map(|(logical, column)| {
            col(column)
                .map(|i| (logical.clone(), i))
                .ok_or_else(|| Error::Schema(format!("missing attribute column {column:?}")))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut rejections = Vec::new();

    for row in reader.records() {
        let row = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let mut reject = |reason: String| rejections.push(RowRejection { line, reason });

        let Some(ts_raw) = row.get(ts_idx) else {
            reject(format!("missing field {:?}", schema.timestamp));
            continue;
        };
        let Some(lat_raw) = row.get(lat_idx) else {
            reject(format!("missing field {:?}", schema.latitude));
            continue;
        };
        let Some(lon_raw) = row.get(lon_idx) else {
            reject(format!("missing field {:?}", schema.longitude));
            continue;
        };

        let Some(timestamp) = parse_timestamp(ts_raw.trim()) else {
            reject(format!("unparseable timestamp {:?}", ts_raw));
            continue;
        };
        let Ok(latitude) = lat_raw.trim().parse::<f64>() else {
            reject(format!("unparseable latitude {:?}", lat_raw));
            continue;
        };
        let Ok(longitude) = lon_raw.trim().parse::<f64>() else {
            reject(format!("unparseable longitude {:?}", lon_raw));
            continue;
        };
        if !(-90.0..=90.0).contains(&latitude) {
            reject("latitude out of range".to_string());
            continue;
        }
        if !(-180.0..=180.0).contains(&longitude) {
            reject("longitude out of range".to_string());
            continue;
        }

        let attributes = attr_idx
            .iter()
            .filter_map(|(logical, i)| {
                row.get(*i)
                    .map(|v| (logical.clone(), v.trim().to_string()))
            })
            .collect();

        records.push(AccidentRecord {
            timestamp,
            zone: schema.zone,
            latitude,
            longitude,
            attributes,
        });
    }

    Ok((records, rejections))
}

/// Daily combined mobility percent-change series, gap-free by construction:
/// entry `i` is the value for `start_date + i` days.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilitySeries {
    start_date: NaiveDate,
    values: Vec<f64>,
    source_categories: Vec<String>,
}

impl MobilitySeries {
    /// At least two days are required; shorter series cannot host a change
    /// point.
    pub fn new(
        start_date: NaiveDate,
        values: Vec<f64>,
        source_categories: Vec<String>,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Argument(format!(
                "mobility series needs at least 2 days, got {}",
                values.len()
            )));
        }
        Ok(Self {
            start_date,
            values,
            source_categories,
        })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source_categories(&self) -> &[String] {
        &self.source_categories
    }

    /// Calendar date of entry `index`.
    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start_date
            .checked_add_days(Days::new(index as u64))
            .expect("date arithmetic overflow")
    }
}

/// What to do about missing days when loading a mobility series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillPolicy {
    /// Fail fast on the first gap. The default, so silent data repair never
    /// contaminates change-point detection.
    #[default]
    Fail,
    /// Fill interior gaps by linear interpolation between the nearest
    /// observed days. Gaps at the series boundary still fail.
    LinearInterpolate,
}

/// Loads a mobility CSV in the Google Community Mobility layout: a `date`
/// column plus one signed percent-change column per category. The per-day
/// combined value is the unweighted arithmetic mean of the requested
/// category columns. A day on which any requested category is blank counts
/// as missing and is handled per `fill_policy`.
pub fn load_mobility(
    path: impl AsRef<Path>,
    categories: &[String],
    fill_policy: FillPolicy,
) -> Result<MobilitySeries> {
    let path = path.as_ref();
    if categories.is_empty() {
        return Err(Error::Argument("no mobility categories requested".into()));
    }

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Csv {
                path: path.to_path_buf(),
                source: e,
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .clone();
    let date_idx = headers
        .iter()
        .position(|h| h == "date")
        .ok_or_else(|| Error::Schema("missing mandatory column \"date\"".into()))?;
    let cat_idx: Vec<usize> = categories
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::Schema(format!("missing category column {c:?}")))
        })
        .collect::<Result<_>>()?;

    // date -> combined value (None when any requested category is blank)
    let mut by_date: BTreeMap<NaiveDate, Option<f64>> = BTreeMap::new();

    for row in reader.records() {
        let row = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let date_raw = row
            .get(date_idx)
            .ok_or_else(|| Error::Schema(format!("line {line}: missing date field")))?;
        let date = NaiveDate::parse_from_str(date_raw.trim(), "%Y-%m-%d")
            .map_err(|_| Error::Schema(format!("line {line}: unparseable date {date_raw:?}")))?;

        let mut sum = 0.0;
        let mut complete = true;
        for &i in &cat_idx {
            let raw = row.get(i).unwrap_or("").trim();
            if raw.is_empty() {
                complete = false;
                break;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Schema(format!("line {line}: unparseable value {raw:?}")))?;
            sum += v;
        }
        let combined = complete.then(|| sum / cat_idx.len() as f64);

        if by_date.insert(date, combined).is_some() {
            return Err(Error::Schema(format!("line {line}: duplicate date {date}")));
        }
    }

    let (&start_date, _) = by_date
        .first_key_value()
        .ok_or_else(|| Error::Argument("mobility file has no data rows".into()))?;
    let (&end_date, _) = by_date.last_key_value().expect("nonempty");
    let n_days = (end_date - start_date).num_days() as usize + 1;

    // Materialize one slot per calendar day, then fill gaps per policy.
    let mut slots: Vec<Option<f64>> = vec![None; n_days];
    for (date, value) in &by_date {
        let i = (*date - start_date).num_days() as usize;
        slots[i] = *value;
    }

    let mut values = Vec::with_capacity(n_days);
    for i in 0..n_days {
        match slots[i] {
            Some(v) => values.push(v),
            None => {
                let date = start_date + Days::new(i as u64);
                match fill_policy {
                    FillPolicy::Fail => return Err(Error::MissingDay { date }),
                    FillPolicy::LinearInterpolate => {
                        let left = (0..i).rev().find(|&j| slots[j].is_some());
                        let right = (i + 1..n_days).find(|&j| slots[j].is_some());
                        let (Some(l), Some(r)) = (left, right) else {
                            // Boundary gaps have no neighbor to interpolate from.
                            return Err(Error::MissingDay { date });
                        };
                        let (vl, vr) = (slots[l].unwrap(), slots[r].unwrap());
                        let frac = (i - l) as f64 / (r - l) as f64;
                        values.push(vl + (vr - vl) * frac);
                    }
                }
            }
        }
    }

    MobilitySeries::new(start_date, values, categories.to_vec())
}

/// A study window of `days_before` days strictly before `change_date` and
/// `days_after` days from `change_date` on. The two windows are disjoint,
/// contiguous, and adjacent to the change date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyWindow {
    pub change_date: NaiveDate,
    pub days_before: u32,
    pub days_after: u32,
}

impl StudyWindow {
    pub fn new(change_date: NaiveDate, days_before: u32, days_after: u32) -> Result<Self> {
        if days_before == 0 || days_after == 0 {
            return Err(Error::Argument(
                "study window day counts must be positive".into(),
            ));
        }
        Ok(Self {
            change_date,
            days_before,
            days_after,
        })
    }

    /// First day of the before-window (inclusive).
    pub fn before_start(&self) -> NaiveDate {
        self.change_date - Days::new(self.days_before as u64)
    }

    /// One past the last day of the after-window (exclusive).
    pub fn after_end(&self) -> NaiveDate {
        self.change_date + Days::new(self.days_after as u64)
    }
}

/// Partitions records into (before, after) around the window's change date.
/// Windowing is date-granular: before = dates in
/// `[change_date - days_before, change_date)`, after = dates in
/// `[change_date, change_date + days_after)`. Input order is preserved;
/// records outside both windows are dropped.
pub fn window_records<'a>(
    records: &'a [AccidentRecord],
    window: &StudyWindow,
) -> (Vec<&'a AccidentRecord>, Vec<&'a AccidentRecord>) {
    let before_start = window.before_start();
    let after_end = window.after_end();
    let mut before = Vec::new();
    let mut after = Vec::new();
    for record in records {
        let d = record.date();
        if d >= before_start && d < window.change_date {
            before.push(record);
        } else if d >= window.change_date && d < after_end {
            after.push(record);
        }
    }
    (before, after)
}
