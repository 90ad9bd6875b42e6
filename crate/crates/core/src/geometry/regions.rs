use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Point, Polygon};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Region {
    pub name: String,
    pub polygon: Polygon,
    pub population: BTreeMap<i32, f64>,
}

/// Administrative regions with per-year populations. Lookup order is input order.
#[derive(Debug, Clone, Default)]
pub struct RegionSet {
    regions: Vec<Region>,
}

#[derive(Deserialize)]
struct PopulationRow {
    region: String,
    year: i32,
    population: f64,
}

impl RegionSet {
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        for r in &regions {
            if let Some((year, pop)) = r.population.iter().find(|(_, &p)| !(p > 0.0) || !p.is_finite()) {
                return Err(Error::invalid(format!(
                    "population for {} in {year} must be positive, got {pop}",
                    r.name
                )));
            }
        }
        Ok(Self { regions })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.name == name)
    }

    /// Index of the first region containing `p`; shared borders go to the
    /// region listed first.
    pub fn find(&self, p: &Point) -> Option<usize> {
        self.regions.iter().position(|r| r.polygon.contains(p))
    }

    /// Containing region and its population for `year`. `Ok(None)` when the
    /// point lies in no region.
    pub fn locate(&self, p: &Point, year: i32) -> Result<Option<(&str, f64)>> {
        let Some(i) = self.find(p) else {
            return Ok(None);
        };
        let r = &self.regions[i];
        let pop = r.population.get(&year).copied().ok_or_else(|| Error::MissingPopulation {
            region: r.name.clone(),
            year,
        })?;
        Ok(Some((r.name.as_str(), pop)))
    }

    /// Parses a GeoJSON FeatureCollection of Polygon/MultiPolygon features
    /// carrying a `name` property.
    pub fn from_geojson(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)?;
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::invalid("GeoJSON lacks a features array"))?;
        let mut regions = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            let name = f
                .pointer("/properties/name")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::invalid(format!("feature {i} has no name property")))?
                .to_string();
            let geom = f
                .get("geometry")
                .ok_or_else(|| Error::invalid(format!("feature {name:?} has no geometry")))?;
            let kind = geom.get("type").and_then(Value::as_str).unwrap_or_default();
            let coords = geom
                .get("coordinates")
                .ok_or_else(|| Error::invalid(format!("feature {name:?} has no coordinates")))?;
            let rings = match kind {
                "Polygon" => parse_rings(coords)?,
                "MultiPolygon" => coords
                    .as_array()
                    .ok_or_else(|| Error::invalid("malformed MultiPolygon"))?
                    .iter()
                    .map(parse_rings)
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect(),
                other => {
                    return Err(Error::invalid(format!(
                        "feature {name:?} has unsupported geometry {other:?}"
                    )))
                }
            };
            regions.push(Region {
                name,
                polygon: Polygon::with_rings(rings)?,
                population: BTreeMap::new(),
            });
        }
        Self::new(regions)
    }

    /// Reads `region,year,population` rows and attaches them to the regions.
    pub fn attach_population<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut rdr = csv::Reader::from_reader(reader);
        for (line, row) in rdr.deserialize::<PopulationRow>().enumerate() {
            let row = row?;
            if !(row.population > 0.0) || !row.population.is_finite() {
                return Err(Error::invalid(format!(
                    "population line {}: {} in {} must be positive",
                    line + 2,
                    row.region,
                    row.year
                )));
            }
            let i = self
                .index_of(&row.region)
                .ok_or_else(|| Error::invalid(format!("population for unknown region {:?}", row.region)))?;
            self.regions[i].population.insert(row.year, row.population);
        }
        Ok(())
    }

    /// FeatureCollection with each region's name plus the extra properties.
    pub fn to_geojson(&self, mut properties: impl FnMut(usize) -> serde_json::Map<String, Value>) -> Value {
        let features: Vec<Value> = self
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut props = serde_json::Map::new();
                props.insert("name".into(), Value::String(r.name.clone()));
                props.extend(properties(i));
                let rings: Vec<Vec<[f64; 2]>> = r
                    .polygon
                    .rings()
                    .iter()
                    .map(|ring| {
                        ring.iter()
                            .chain(ring.first())
                            .map(|p| [p.lon, p.lat])
                            .collect()
                    })
                    .collect();
                json!({
                    "type": "Feature",
                    "properties": props,
                    "geometry": { "type": "Polygon", "coordinates": rings },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn population_csv(&self) -> String {
        let mut out = String::from("region,year,population\n");
        for r in &self.regions {
            for (year, pop) in &r.population {
                out.push_str(&format!("{},{year},{pop}\n", r.name));
            }
        }
        out
    }
}

fn parse_rings(coords: &Value) -> Result<Vec<Vec<Point>>> {
    let rings = coords.as_array().ok_or_else(|| Error::invalid("malformed polygon rings"))?;
    rings
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(|| Error::invalid("malformed polygon ring"))?
                .iter()
                .map(|pos| {
                    let xy = pos.as_array().filter(|a| a.len() >= 2);
                    match xy.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                        Some((Some(lon), Some(lat))) => Ok(Point::new(lon, lat)),
                        _ => Err(Error::invalid("malformed coordinate pair")),
                    }
                })
                .collect()
        })
        .collect()
}
