//! Farm/outbreak file ingestion, observed-status classification, distance
//! queries, and pseudo-distance grid construction.
//!
//! Times are day offsets normalized so that the earliest natural cull lands
//! at t = 0. Farms never culled carry an infinite cull time; all comparisons
//! treat the sentinel as +inf.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for "event never happened"; safe under min/comparison.
pub const NEVER: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlockType {
    Broiler,
    Duck,
    Turkey,
    Layer,
}

impl FromStr for FlockType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "broiler" => Ok(FlockType::Broiler),
            "duck" => Ok(FlockType::Duck),
            "turkey" => Ok(FlockType::Turkey),
            "layer" => Ok(FlockType::Layer),
            other => Err(format!("unknown flock type {other:?}")),
        }
    }
}

impl fmt::Display for FlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FlockType::Broiler => "broiler",
            FlockType::Duck => "duck",
            FlockType::Turkey => "turkey",
            FlockType::Layer => "layer",
        };
        f.write_str(s)
    }
}

/// One farm as observed: location, culling outcome, flock composition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarmRecord {
    pub id: u64,
    /// Planar easting, km.
    pub x: f64,
    /// Planar northing, km.
    pub y: f64,
    /// Day offset of culling relative to the time origin; `NEVER` if not culled.
    pub cull_time: f64,
    pub preemptive: bool,
    pub flock_type: Option<FlockType>,
    pub flock_size: Option<u64>,
}

/// The calendar anchor mapped to t = 0 during normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeOrigin {
    Calendar(NaiveDate),
    Offset(f64),
}

/// An ingested outbreak: farms in file order plus the time origin.
#[derive(Debug, Clone)]
pub struct Dataset {
    farms: Vec<FarmRecord>,
    time_origin: TimeOrigin,
    index_by_id: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(farms: Vec<FarmRecord>, time_origin: TimeOrigin) -> Result<Self> {
        let mut index_by_id = HashMap::with_capacity(farms.len());
        for (idx, farm) in farms.iter().enumerate() {
            if index_by_id.insert(farm.id, idx).is_some() {
                return Err(Error::Data(format!("duplicate farm id {}", farm.id)));
            }
            if farm.preemptive && !farm.cull_time.is_finite() {
                return Err(Error::Data(format!(
                    "farm {} flagged preemptive but has no cull time",
                    farm.id
                )));
            }
        }
        if farms.is_empty() {
            return Err(Error::Data("dataset contains no farms".into()));
        }
        Ok(Dataset {
            farms,
            time_origin,
            index_by_id,
        })
    }

    pub fn farms(&self) -> &[FarmRecord] {
        &self.farms
    }

    pub fn len(&self) -> usize {
        self.farms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.farms.is_empty()
    }

    pub fn time_origin(&self) -> TimeOrigin {
        self.time_origin
    }

    /// Position of a farm id within `farms`.
    pub fn find(&self, id: u64) -> Option<usize> {
        self.index_by_id.get(&id).copied()
    }

    pub fn distance_index(&self) -> DistanceIndex {
        DistanceIndex::new(self.farms.iter().map(|f| (f.x, f.y)))
    }

    /// Largest pairwise distance over all farms.
    pub fn max_pairwise_distance(&self) -> f64 {
        let idx = self.distance_index();
        let n = self.farms.len();
        let mut best = 0.0f64;
        for j in 0..n {
            for k in (j + 1)..n {
                best = best.max(idx.get(j, k));
            }
        }
        best
    }
}

/// Farm indices split by what culling records alone reveal.
///
/// Pre-emptively culled farms may or may not have been infected; the split of
/// that set into infected and uninfected is latent and not represented here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedClassification {
    /// Never culled.
    pub never_culled: Vec<usize>,
    /// Culled on infection grounds.
    pub naturally_culled: Vec<usize>,
    /// Culled pre-emptively (infection status unknown).
    pub preemptively_culled: Vec<usize>,
}

/// Split farms by culling outcome. The three sets partition `0..dataset.len()`.
pub fn classify(dataset: &Dataset) -> ObservedClassification {
    let mut never_culled = Vec::new();
    let mut naturally_culled = Vec::new();
    let mut preemptively_culled = Vec::new();
    for (idx, farm) in dataset.farms().iter().enumerate() {
        if !farm.cull_time.is_finite() {
            never_culled.push(idx);
        } else if farm.preemptive {
            preemptively_culled.push(idx);
        } else {
            naturally_culled.push(idx);
        }
    }
    ObservedClassification {
        never_culled,
        naturally_culled,
        preemptively_culled,
    }
}

/// Euclidean distance queries over farm coordinates, computed on demand.
#[derive(Debug, Clone)]
pub struct DistanceIndex {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl DistanceIndex {
    pub fn new(coords: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (xs, ys) = coords.into_iter().unzip();
        DistanceIndex { xs, ys }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Distance in km between farms `j` and `k`; errors on unknown indices.
    pub fn distance(&self, j: usize, k: usize) -> Result<f64> {
        if j >= self.len() || k >= self.len() {
            return Err(Error::Data(format!(
                "distance query ({j}, {k}) outside 0..{}",
                self.len()
            )));
        }
        Ok(self.get(j, k))
    }

    /// Unchecked fast path; panics on out-of-range indices.
    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        let dx = self.xs[j] - self.xs[k];
        let dy = self.ys[j] - self.ys[k];
        (dx * dx + dy * dy).sqrt()
    }
}

/// How to build the pseudo-distance grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// `count` equally spaced knots over `[0, max]`.
    EqualSpacing { count: usize, max: f64 },
    /// Explicit knot list; must be strictly increasing from 0.
    Explicit(Vec<f64>),
}

/// Materialize a pseudo-distance grid: strictly increasing, starting at 0.
pub fn build_pseudo_grid(spec: &GridSpec) -> Result<Vec<f64>> {
    let knots = match spec {
        GridSpec::EqualSpacing { count, max } => {
            if *count == 0 {
                return Err(Error::Config("grid count must be positive".into()));
            }
            if *count == 1 {
                if *max != 0.0 {
                    return Err(Error::Config(
                        "single-knot equal spacing requires max = 0".into(),
                    ));
                }
                vec![0.0]
            } else {
                if !(*max > 0.0) {
                    return Err(Error::Config(format!(
                        "grid max must be positive, got {max}"
                    )));
                }
                let step = max / (*count as f64 - 1.0);
                (0..*count).map(|i| i as f64 * step).collect()
            }
        }
        GridSpec::Explicit(list) => {
            if list.is_empty() {
                return Err(Error::Config("explicit grid has no knots".into()));
            }
            if list[0] != 0.0 {
                return Err(Error::Config(format!(
                    "grid must start at 0, got {}",
                    list[0]
                )));
            }
            for w in list.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::Config(format!(
                        "grid knots must be strictly increasing, got {} after {}",
                        w[1], w[0]
                    )));
                }
            }
            list.clone()
        }
    };
    Ok(knots)
}

/// Date interpretation for the cull-date column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateMode {
    /// ISO-8601 calendar dates (`2003-05-05`).
    Iso,
    /// Plain numeric day offsets.
    DayOffset,
}

/// Column names expected in the farm-file header.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnNames {
    pub id: String,
    pub x: String,
    pub y: String,
    pub cull_date: String,
    pub preemptive: String,
    pub flock_type: String,
    pub flock_size: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        ColumnNames {
            id: "id".into(),
            x: "x".into(),
            y: "y".into(),
            cull_date: "cull_date".into(),
            preemptive: "preemptive".into(),
            flock_type: "flock_type".into(),
            flock_size: "flock_size".into(),
        }
    }
}

/// Farm-file parsing options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseOptions {
    pub delimiter: char,
    pub date_mode: DateMode,
    pub columns: ColumnNames,
    /// Drop farms with fewer birds than this before classification.
    pub min_flock_size: Option<u64>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            delimiter: ',',
            date_mode: DateMode::Iso,
            columns: ColumnNames::default(),
            min_flock_size: None,
        }
    }
}

struct RawFarm {
    id: u64,
    x: f64,
    y: f64,
    /// Days from an arbitrary epoch, before normalization.
    raw_cull: Option<f64>,
    preemptive: bool,
    flock_type: Option<FlockType>,
    flock_size: Option<u64>,
}

/// Parse a delimited farm file and normalize cull dates to day offsets.
///
/// The offset anchor is the earliest natural cull; if no farm was culled
/// naturally, the earliest cull of any kind; if nothing was culled, raw
/// offsets pass through unchanged.
pub fn parse_farm_file(path: impl AsRef<Path>, options: &ParseOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_farm_text(&text, &path.display().to_string(), options)
}

pub fn parse_farm_text(text: &str, path: &str, options: &ParseOptions) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let cols = HeaderMap::parse(header, path, options)?;

    let mut raws: Vec<RawFarm> = Vec::new();
    let mut seen = HashMap::new();
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(options.delimiter).map(str::trim).collect();
        let raw = parse_row(&fields, &cols, options, path, line_no)?;
        if let Some(prev) = seen.insert(raw.id, line_no) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate farm id {} (first seen on line {prev})", raw.id),
            ));
        }
        raws.push(raw);
    }
    if raws.is_empty() {
        return Err(Error::parse(path, 1, "no farm rows"));
    }
    if let Some(min) = options.min_flock_size {
        raws.retain(|r| r.flock_size.map_or(true, |s| s >= min));
        if raws.is_empty() {
            return Err(Error::Data(format!(
                "minimum-flock filter ({min} birds) removed every farm"
            )));
        }
    }

    // Anchor t = 0 at the earliest natural cull, falling back as documented.
    let natural_min = raws
        .iter()
        .filter(|r| !r.preemptive)
        .filter_map(|r| r.raw_cull)
        .fold(f64::INFINITY, f64::min);
    let any_min = raws
        .iter()
        .filter_map(|r| r.raw_cull)
        .fold(f64::INFINITY, f64::min);
    let anchor = if natural_min.is_finite() {
        Some(natural_min)
    } else if any_min.is_finite() {
        Some(any_min)
    } else {
        None
    };

    let time_origin = match (options.date_mode, anchor) {
        (DateMode::Iso, Some(days)) => TimeOrigin::Calendar(date_from_epoch_days(days, path)?),
        (DateMode::Iso, None) | (DateMode::DayOffset, None) => TimeOrigin::Offset(0.0),
        (DateMode::DayOffset, Some(days)) => TimeOrigin::Offset(days),
    };
    let anchor = anchor.unwrap_or(0.0);

    let farms = raws
        .into_iter()
        .map(|r| FarmRecord {
            id: r.id,
            x: r.x,
            y: r.y,
            cull_time: r.raw_cull.map_or(NEVER, |t| t - anchor),
            preemptive: r.preemptive,
            flock_type: r.flock_type,
            flock_size: r.flock_size,
        })
        .collect();
    Dataset::new(farms, time_origin)
}

struct HeaderMap {
    id: usize,
    x: usize,
    y: usize,
    cull_date: usize,
    preemptive: usize,
    flock_type: Option<usize>,
    flock_size: Option<usize>,
}

impl HeaderMap {
    fn parse(header: &str, path: &str, options: &ParseOptions) -> Result<Self> {
        let names: Vec<&str> = header.split(options.delimiter).map(str::trim).collect();
        let find = |name: &str| names.iter().position(|h| *h == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| {
                Error::parse(path, 1, format!("header lacks required column {name:?}"))
            })
        };
        let c = &options.columns;
        Ok(HeaderMap {
            id: require(&c.id)?,
            x: require(&c.x)?,
            y: require(&c.y)?,
            cull_date: require(&c.cull_date)?,
            preemptive: require(&c.preemptive)?,
            flock_type: find(&c.flock_type),
            flock_size: find(&c.flock_size),
        })
    }
}

fn parse_row(
    fields: &[&str],
    cols: &HeaderMap,
    options: &ParseOptions,
    path: &str,
    line_no: usize,
) -> Result<RawFarm> {
    let field = |idx: usize| -> &str { fields.get(idx).copied().unwrap_or("") };
    let bad = |msg: String| Error::parse(path, line_no, msg);

    let id: u64 = field(cols.id)
        .parse()
        .map_err(|_| bad(format!("invalid id {:?}", field(cols.id))))?;
    let x: f64 = field(cols.x)
        .parse()
        .map_err(|_| bad(format!("invalid x {:?}", field(cols.x))))?;
    let y: f64 = field(cols.y)
        .parse()
        .map_err(|_| bad(format!("invalid y {:?}", field(cols.y))))?;

    let date_field = field(cols.cull_date);
    let raw_cull = if date_field.is_empty() {
        None
    } else {
        let days = match options.date_mode {
            DateMode::Iso => NaiveDate::parse_from_str(date_field, "%Y-%m-%d")
                .map_err(|e| bad(format!("invalid cull date {date_field:?}: {e}")))?
                .signed_duration_since(NaiveDate::from_ymd_opt(2000, 1, 1).unwrap())
                .num_days() as f64,
            DateMode::DayOffset => date_field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("invalid cull day offset {date_field:?}")))?,
        };
        Some(days)
    };

    let preemptive = match field(cols.preemptive).to_ascii_lowercase().as_str() {
        "" | "no" | "false" | "0" => false,
        "yes" | "true" | "1" => true,
        other => return Err(bad(format!("invalid preemptive flag {other:?}"))),
    };
    if preemptive && raw_cull.is_none() {
        return Err(bad("preemptive flag set without a cull date".into()));
    }

    let flock_type = match cols.flock_type.map(field).filter(|s| !s.is_empty()) {
        Some(s) => Some(s.parse::<FlockType>().map_err(bad)?),
        None => None,
    };
    let flock_size = match cols.flock_size.map(field).filter(|s| !s.is_empty()) {
        Some(s) => Some(
            s.parse::<u64>()
                .map_err(|_| bad(format!("invalid flock size {s:?}")))?,
        ),
        None => None,
    };

    Ok(RawFarm {
        id,
        x,
        y,
        raw_cull,
        preemptive,
        flock_type,
        flock_size,
    })
}

fn date_from_epoch_days(days: f64, path: &str) -> Result<NaiveDate> {
    let whole = days as i64;
    NaiveDate::from_ymd_opt(2000, 1, 1)
        .unwrap()
        .checked_add_signed(chrono::Duration::days(whole))
        .ok_or_else(|| Error::parse(path, 1, format!("cull date {days} days out of range")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, options: &ParseOptions) -> Result<Dataset> {
        parse_farm_text(text, "test.csv", options)
    }

    #[test]
    fn iso_dates_normalize_to_earliest_natural_cull() {
        let text = "id,x,y,cull_date,preemptive\n\
                    0,1.0,2.0,2003-03-01,no\n\
                    1,5.25,52.13,2003-05-05,no\n\
                    4,5.50,51.40,,\n";
        let ds = parse(text, &ParseOptions::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.farms()[0].cull_time, 0.0);
        assert_eq!(ds.farms()[1].cull_time, 65.0);
        assert_eq!(ds.farms()[1].x, 5.25);
        assert!(!ds.farms()[1].preemptive);
        assert_eq!(ds.farms()[2].cull_time, NEVER);
        assert!(!ds.farms()[2].preemptive);
        assert_eq!(
            ds.time_origin(),
            TimeOrigin::Calendar(NaiveDate::from_ymd_opt(2003, 3, 1).unwrap())
        );
    }

    #[test]
    fn preemptive_cull_does_not_anchor_the_origin() {
        let text = "id,x,y,cull_date,preemptive\n\
                    0,0,0,2003-02-20,yes\n\
                    1,1,0,2003-03-01,no\n";
        let ds = parse(text, &ParseOptions::default()).unwrap();
        assert_eq!(ds.farms()[0].cull_time, -9.0);
        assert_eq!(ds.farms()[1].cull_time, 0.0);
    }

    #[test]
    fn day_offset_mode() {
        let text = "id,x,y,cull_date,preemptive\n\
                    0,0,0,12.5,no\n\
                    1,1,0,10.25,no\n\
                    2,2,0,,\n";
        let mut options = ParseOptions::default();
        options.date_mode = DateMode::DayOffset;
        let ds = parse(text, &options).unwrap();
        assert_eq!(ds.farms()[0].cull_time, 2.25);
        assert_eq!(ds.farms()[1].cull_time, 0.0);
        assert_eq!(ds.time_origin(), TimeOrigin::Offset(10.25));
    }

    #[test]
    fn duplicate_id_rejected_with_row_number() {
        let text = "id,x,y,cull_date,preemptive\n\
                    7,0,0,,\n\
                    7,1,0,,\n";
        let err = parse(text, &ParseOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate farm id 7"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_date_rejected_with_row_number() {
        let text = "id,x,y,cull_date,preemptive\n\
                    0,0,0,2003-13-40,no\n";
        let err = parse(text, &ParseOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn preemptive_without_date_rejected() {
        let text = "id,x,y,cull_date,preemptive\n\
                    0,0,0,,yes\n";
        let err = parse(text, &ParseOptions::default()).unwrap_err();
        assert!(err.to_string().contains("preemptive flag set without"));
    }

    #[test]
    fn empty_and_header_only_files_rejected() {
        assert!(parse("", &ParseOptions::default()).is_err());
        assert!(parse("id,x,y,cull_date,preemptive\n", &ParseOptions::default()).is_err());
    }

    #[test]
    fn missing_required_column_rejected() {
        let text = "id,x,y,preemptive\n0,0,0,no\n";
        let err = parse(text, &ParseOptions::default()).unwrap_err();
        assert!(err.to_string().contains("cull_date"));
    }

    #[test]
    fn flock_fields_parse_and_filter() {
        let text = "id,x,y,cull_date,preemptive,flock_type,flock_size\n\
                    0,0,0,1,no,broiler,30000\n\
                    1,1,0,,,duck,120\n\
                    2,2,0,,,layer,\n";
        let mut options = ParseOptions::default();
        options.date_mode = DateMode::DayOffset;
        let ds = parse(text, &options).unwrap();
        assert_eq!(ds.farms()[0].flock_type, Some(FlockType::Broiler));
        assert_eq!(ds.farms()[0].flock_size, Some(30000));
        assert_eq!(ds.farms()[2].flock_size, None);

        options.min_flock_size = Some(500);
        let ds = parse(text, &options).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.find(1).is_none());
    }

    #[test]
    fn classify_partitions_by_cull_outcome() {
        let text = "id,x,y,cull_date,preemptive\n\
                    0,0,0,,\n\
                    1,1,0,0,no\n\
                    2,2,0,3,no\n\
                    3,3,0,2,yes\n";
        let mut options = ParseOptions::default();
        options.date_mode = DateMode::DayOffset;
        let ds = parse(text, &options).unwrap();
        let cls = classify(&ds);
        assert_eq!(cls.never_culled, vec![0]);
        assert_eq!(cls.naturally_culled, vec![1, 2]);
        assert_eq!(cls.preemptively_culled, vec![3]);

        let no_preemptive = "id,x,y,cull_date,preemptive\n0,0,0,0,no\n";
        let ds = parse(no_preemptive, &options).unwrap();
        assert!(classify(&ds).preemptively_culled.is_empty());
    }

    #[test]
    fn time_origin_lands_on_a_natural_cull() {
        let text = "id,x,y,cull_date,preemptive\n\
                    0,0,0,2003-04-10,no\n\
                    1,1,0,2003-04-02,yes\n\
                    2,2,0,2003-04-07,no\n";
        let ds = parse(text, &ParseOptions::default()).unwrap();
        let cls = classify(&ds);
        let min_natural = cls
            .naturally_culled
            .iter()
            .map(|&j| ds.farms()[j].cull_time)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min_natural, 0.0);
    }

    #[test]
    fn distance_basics() {
        let idx = DistanceIndex::new(vec![(0.0, 0.0), (3.0, 4.0)]);
        assert_eq!(idx.distance(0, 1).unwrap(), 5.0);
        assert_eq!(idx.distance(1, 1).unwrap(), 0.0);
        assert!(idx.distance(0, 2).is_err());
    }

    #[test]
    fn equal_spacing_grid() {
        let grid = build_pseudo_grid(&GridSpec::EqualSpacing {
            count: 256,
            max: 25.0,
        })
        .unwrap();
        assert_eq!(grid.len(), 256);
        assert_eq!(grid[0], 0.0);
        assert!((grid[255] - 25.0).abs() < 1e-12);
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn explicit_grid_validation() {
        assert!(build_pseudo_grid(&GridSpec::Explicit(vec![0.0, 1.0, 1.0])).is_err());
        assert!(build_pseudo_grid(&GridSpec::Explicit(vec![0.5, 1.0])).is_err());
        assert!(build_pseudo_grid(&GridSpec::Explicit(vec![])).is_err());
        let single = build_pseudo_grid(&GridSpec::Explicit(vec![0.0])).unwrap();
        assert_eq!(single, vec![0.0]);
    }

    #[test]
    fn blank_lines_are_skipped() {
        let text = "id,x,y,cull_date,preemptive\n\n5,0,0,,\n";
        let ds = parse(text, &ParseOptions::default()).unwrap();
        assert_eq!(ds.find(5), Some(0));
    }
}
