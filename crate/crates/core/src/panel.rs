//! Country × year temperature panels, country metadata and adjacency lists.
//!
//! Two CSV layouts are accepted for panels:
//!
//! ```text
//! long:  country,year,temperature        wide:  country,1901,1902,...
//!        Albania,1901,11.02                     Albania,11.02,11.35,...
//! ```
//!
//! The layout is detected from the header. Missing cells are a hard error;
//! nothing is imputed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geographical zone of a country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    Europe,
    Asia,
    Eurasia,
    Africa,
    #[serde(rename = "North America")]
    NorthAmerica,
    #[serde(rename = "Central America")]
    CentralAmerica,
    #[serde(rename = "South America")]
    SouthAmerica,
    Oceania,
}

impl Zone {
    pub const ALL: [Zone; 8] = [
        Zone::Europe,
        Zone::Asia,
        Zone::Eurasia,
        Zone::Africa,
        Zone::NorthAmerica,
        Zone::CentralAmerica,
        Zone::SouthAmerica,
        Zone::Oceania,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Zone::Europe => "Europe",
            Zone::Asia => "Asia",
            Zone::Eurasia => "Eurasia",
            Zone::Africa => "Africa",
            Zone::NorthAmerica => "North America",
            Zone::CentralAmerica => "Central America",
            Zone::SouthAmerica => "South America",
            Zone::Oceania => "Oceania",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Zone::ALL
            .into_iter()
            .find(|z| z.name().replace(' ', "").to_lowercase() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown zone {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryMeta {
    pub id: String,
    pub name: String,
    pub zone: Option<Zone>,
    /// Land area in km².
    pub area: Option<f64>,
}

impl CountryMeta {
    pub fn new(id: impl Into<String>) -> Self {
        let id = id.into();
        CountryMeta {
            name: id.clone(),
            id,
            zone: None,
            area: None,
        }
    }
}

/// Complete N × T panel of annual mean temperatures (°C).
///
/// Rows are countries, columns consecutive calendar years. The country order
/// is shared by every matrix derived from the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperaturePanel {
    countries: Vec<CountryMeta>,
    years: Vec<i32>,
    // row-major, countries × years
    values: Vec<f64>,
}

impl TemperaturePanel {
    /// Builds a panel from row-major values, checking every invariant.
    pub fn new(countries: Vec<CountryMeta>, years: Vec<i32>, values: Vec<f64>) -> Result<Self> {
        if countries.is_empty() || years.is_empty() {
            return Err(Error::InvalidArgument("panel must have at least one country and one year".into()));
        }
        if values.len() != countries.len() * years.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", countries.len() * years.len()),
                found: format!("{} values", values.len()),
            });
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidArgument("years must be consecutive and increasing".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &countries {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate country id {:?}", c.id)));
            }
            if c.area.is_some_and(|a| a.is_nan() || a < 0.0) {
                return Err(Error::InvalidArgument(format!("negative area for {:?}", c.id)));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let t = years.len();
            return Err(Error::NonFinite(format!(
                "temperature for {} in {}",
                countries[pos / t].id,
                years[pos % t]
            )));
        }
        Ok(TemperaturePanel {
            countries,
            years,
            values,
        })
    }

    pub fn from_rows(ids: &[&str], first_year: i32, rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) || rows.len() != ids.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows of equal length", ids.len()),
                found: format!("{} rows", rows.len()),
            });
        }
        let countries = ids.iter().map(|id| CountryMeta::new(*id)).collect();
        let years = (first_year..first_year + t as i32).collect();
        Self::new(countries, years, rows.concat())
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn countries(&self) -> &[CountryMeta] {
        &self.countries
    }

    pub fn ids(&self) -> Vec<String> {
        self.countries.iter().map(|c| c.id.clone()).collect()
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn first_year(&self) -> i32 {
        self.years[0]
    }

    pub fn last_year(&self) -> i32 {
        *self.years.last().expect("panel has years")
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.id == id)
    }

    /// Temperature series of country `i`.
    pub fn series(&self, i: usize) -> &[f64] {
        let t = self.years.len();
        &self.values[i * t..(i + 1) * t]
    }

    pub fn value(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.years.len() + t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// N × T copy of the panel.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_countries(), self.n_years(), &self.values)
    }

    /// Number of cells, N·T.
    pub fn n_observations(&self) -> usize {
        self.values.len()
    }

    /// Restricts the panel to the year columns `from..to` (indices).
    pub fn slice_years(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.n_years() {
            return Err(Error::InvalidArgument(format!("empty or out-of-range year slice {from}..{to}")));
        }
        let values = (0..self.n_countries())
            .flat_map(|i| self.series(i)[from..to].iter().copied())
            .collect();
        Self::new(self.countries.clone(), self.years[from..to].to_vec(), values)
    }

    /// Reorders countries by the given permutation of row indices.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut check: Vec<usize> = order.to_vec();
        check.sort_unstable();
        if check != (0..self.n_countries()).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("not a permutation of the panel rows".into()));
        }
        let countries = order.iter().map(|&i| self.countries[i].clone()).collect();
        let values = order.iter().flat_map(|&i| self.series(i).iter().copied()).collect();
        Self::new(countries, self.years.clone(), values)
    }

    /// Merges zone/name/area metadata into the panel's countries.
    ///
    /// Metadata for ids outside the panel is rejected.
    pub fn attach_meta(&mut self, metas: &[CountryMeta]) -> Result<()> {
        for m in metas {
            let i = self
                .index_of(&m.id)
                .ok_or_else(|| Error::UnknownCountry(m.id.clone()))?;
            if m.area.is_some_and(|a| a.is_nan() || a < 0.0) {
                return Err(Error::InvalidArgument(format!("negative area for {:?}", m.id)));
            }
            self.countries[i] = m.clone();
        }
        Ok(())
    }

    /// Writes the panel in long format.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["country", "year", "temperature"])
            .map_err(|e| Error::csv(path, e))?;
        for (i, c) in self.countries.iter().enumerate() {
            for (t, y) in self.years.iter().enumerate() {
                w.write_record([c.id.clone(), y.to_string(), self.value(i, t).to_string()])
                    .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Layout of a panel CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelFormat {
    #[default]
    Auto,
    Long,
    Wide,
}

const COUNTRY_KEYS: [&str; 4] = ["country", "entity", "name", "id"];
const YEAR_KEYS: [&str; 1] = ["year"];
const VALUE_KEYS: [&str; 5] = ["temperature", "value", "temp", "mean", "avg"];

fn find_column(header: &[String], keys: &[&str]) -> Option<usize> {
    header
        .iter()
        .position(|h| keys.iter().any(|k| h.trim().eq_ignore_ascii_case(k)))
}

fn detect(header: &[String]) -> Option<PanelFormat> {
    if find_column(header, &YEAR_KEYS).is_some() && find_column(header, &VALUE_KEYS).is_some() {
        return Some(PanelFormat::Long);
    }
    if header.len() >= 2 && header[1..].iter().all(|h| h.trim().parse::<i32>().is_ok()) {
        return Some(PanelFormat::Wide);
    }
    None
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("non-numeric {what} {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("non-finite {what} {field:?}"),
        });
    }
    Ok(v)
}

/// Loads and validates a temperature panel. Countries are sorted by id.
pub fn load_panel(path: impl AsRef<Path>, format: PanelFormat) -> Result<TemperaturePanel> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let format = match format {
        PanelFormat::Auto => detect(&header).ok_or_else(|| Error::UnknownFormat {
            path: path.to_path_buf(),
            header: header.clone(),
        })?,
        f => f,
    };

    let mut cells: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    let mut insert = |country: &str, year: i32, v: f64| -> Result<()> {
        let row = cells.entry(country.to_string()).or_default();
        if row.insert(year, v).is_some() {
            return Err(Error::DuplicateObservation {
                country: country.to_string(),
                year,
            });
        }
        Ok(())
    };

    match format {
        PanelFormat::Long => {
            let unknown = || Error::UnknownFormat {
                path: path.to_path_buf(),
                header: header.clone(),
            };
            let ci = find_column(&header, &COUNTRY_KEYS).unwrap_or(0);
            let yi = find_column(&header, &YEAR_KEYS).ok_or_else(unknown)?;
            let vi = find_column(&header, &VALUE_KEYS).ok_or_else(unknown)?;
            for rec in reader.records() {
                let rec = rec.map_err(|e| Error::csv(path, e))?;
                let line = rec.position().map_or(0, |p| p.line());
                let field = |k: usize| rec.get(k).unwrap_or("");
                let year: i32 = field(yi).parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-integer year {:?}", field(yi)),
                })?;
                let v = parse_f64(path, line, field(vi), "temperature")?;
                insert(field(ci), year, v)?;
            }
        }
        PanelFormat::Wide => {
            let years: Vec<i32> = header[1..]
                .iter()
                .map(|h| h.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::UnknownFormat {
                    path: path.to_path_buf(),
                    header: header.clone(),
                })?;
            for rec in reader.records() {
                let rec = rec.map_err(|e| Error::csv(path, e))?;
                let line = rec.position().map_or(0, |p| p.line());
                let country = rec.get(0).unwrap_or("").to_string();
                for (k, &year) in years.iter().enumerate() {
                    match rec.get(k + 1) {
                        None | Some("") => continue,
                        Some(f) => insert(&country, year, parse_f64(path, line, f, "temperature")?)?,
                    }
                }
            }
        }
        PanelFormat::Auto => unreachable!(),
    }
    assemble(cells)
}

fn assemble(cells: BTreeMap<String, BTreeMap<i32, f64>>) -> Result<TemperaturePanel> {
    let first = cells.values().filter_map(|r| r.keys().next()).min().copied();
    let last = cells.values().filter_map(|r| r.keys().next_back()).max().copied();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::InvalidArgument("panel file contains no observations".into()));
    };
    let years: Vec<i32> = (first..=last).collect();
    let mut gaps = Vec::new();
    let mut values = Vec::with_capacity(cells.len() * years.len());
    for (country, row) in &cells {
        for y in &years {
            match row.get(y) {
                Some(v) => values.push(*v),
                None => {
                    gaps.push((country.clone(), *y));
                    values.push(f64::NAN);
                }
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::MissingObservations(gaps));
    }
    let countries = cells.keys().map(CountryMeta::new).collect();
    TemperaturePanel::new(countries, years, values)
}

/// Reads `country,name,zone,area` metadata rows; `name`, `zone` and `area`
/// may be empty.
pub fn load_country_meta(path: impl AsRef<Path>) -> Result<Vec<CountryMeta>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |k: &str| find_column(&header, &[k]);
    let ci = col("country").or(col("id")).unwrap_or(0);
    let (ni, zi, ai) = (col("name"), col("zone"), col("area"));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: Option<usize>| k.and_then(|k| rec.get(k)).filter(|s| !s.is_empty());
        let id = rec.get(ci).unwrap_or("").to_string();
        let zone = get(zi)
            .map(|z| {
                z.parse::<Zone>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
            })
            .transpose()?;
        let area = get(ai).map(|a| parse_f64(path, line, a, "area")).transpose()?;
        out.push(CountryMeta {
            name: get(ni).unwrap_or(&id).to_string(),
            id,
            zone,
            area,
        });
    }
    Ok(out)
}

/// Undirected, irreflexive contiguity relation over panel countries.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdjacencyList {
    neighbors: BTreeMap<String, BTreeSet<String>>,
}

impl AdjacencyList {
    /// Builds the symmetric closure of `edges` over `ids`.
    pub fn from_edges<'a, I>(ids: &[String], edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut neighbors: BTreeMap<String, BTreeSet<String>> =
            ids.iter().map(|id| (id.clone(), BTreeSet::new())).collect();
        for (a, b) in edges {
            for id in [a, b] {
                if !neighbors.contains_key(id) {
                    return Err(Error::UnknownCountry(id.to_string()));
                }
            }
            if a == b {
                return Err(Error::SelfEdge(a.to_string()));
            }
            neighbors.get_mut(a).unwrap().insert(b.to_string());
            neighbors.get_mut(b).unwrap().insert(a.to_string());
        }
        Ok(AdjacencyList { neighbors })
    }

    pub fn neighbors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.neighbors.get(id)
    }

    pub fn degree(&self, id: &str) -> usize {
        self.neighbors.get(id).map_or(0, BTreeSet::len)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.neighbors.keys().map(String::as_str)
    }
}

/// Loads a `country_a,country_b` edge list restricted to the panel's
/// countries. Countries never mentioned get empty neighbor sets.
pub fn load_adjacency(path: impl AsRef<Path>, panel: &TemperaturePanel) -> Result<AdjacencyList> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut edges = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        match (rec.get(0), rec.get(1)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                edges.push((a.to_string(), b.to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "expected two country ids".into(),
                })
            }
        }
    }
    AdjacencyList::from_edges(
        &panel.ids(),
        edges.iter().map(|(a, b)| (a.as_str(), b.as_str())),
    )
}

/// Splits the panel into a training span ending at `last_train_year` and a
/// test span with the remaining years.
pub fn split_panel(
    panel: &TemperaturePanel,
    last_train_year: i32,
) -> Result<(TemperaturePanel, TemperaturePanel)> {
    if last_train_year < panel.first_year() || last_train_year >= panel.last_year() {
        return Err(Error::InvalidArgument(format!(
            "split year {last_train_year} must lie in [{}, {})",
            panel.first_year(),
            panel.last_year()
        )));
    }
    let cut = (last_train_year - panel.first_year() + 1) as usize;
    Ok((
        panel.slice_years(0, cut)?,
        panel.slice_years(cut, panel.n_years())?,
    ))
}

/// Position lookup for a list of ids.
pub(crate) fn index_map(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}
