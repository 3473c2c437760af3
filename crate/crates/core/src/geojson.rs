//! Minimal GeoJSON support: extracting polygon rings from a document and
//! even-odd point-in-polygon tests. Only what the hotspot export and the
//! road-network clipper need; nothing resembling a full GeoJSON model.

use serde_json::Value;

use crate::error::{Error, Result};

/// Polygons as rings of `(lon, lat)` positions; ring 0 is the exterior.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPolygons {
    pub polygons: Vec<Vec<Vec<(f64, f64)>>>,
}

impl RegionPolygons {
    /// Collects every Polygon/MultiPolygon in the document, which may be a
    /// bare geometry, a Feature, or a FeatureCollection.
    pub fn from_geojson(doc: &Value) -> Result<Self> {
        let mut polygons = Vec::new();
        collect_polygons(doc, &mut polygons)?;
        if polygons.is_empty() {
            return Err(Error::Geometry(
                "geojson document contains no polygons".into(),
            ));
        }
        for rings in &polygons {
            validate_rings(rings)?;
        }
        Ok(Self { polygons })
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| Error::Geometry(format!("invalid geojson: {e}")))?;
        Self::from_geojson(&doc)
    }

    /// Even-odd containment: a point is inside if it is inside any polygon,
    /// where each polygon's rings (exterior and holes) toggle membership.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        self.polygons
            .iter()
            .any(|rings| point_in_rings_even_odd(rings, lon, lat))
    }
}

fn collect_polygons(value: &Value, out: &mut Vec<Vec<Vec<(f64, f64)>>>) -> Result<()> {
    let Some(kind) = value.get("type").and_then(Value::as_str) else {
        return Err(Error::Geometry("geojson object missing \"type\"".into()));
    };
    match kind {
        "FeatureCollection" => {
            for feature in value
                .get("features")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
            {
                collect_polygons(feature, out)?;
            }
            Ok(())
        }
        "Feature" => match value.get("geometry") {
            Some(Value::Null) | None => Ok(()),
            Some(geometry) => collect_polygons(geometry, out),
        },
        "GeometryCollection" => {
            for geometry in value
                .get("geometries")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
            {
                collect_polygons(geometry, out)?;
            }
            Ok(())
        }
        "Polygon" => {
            out.push(parse_rings(value.get("coordinates"))?);
            Ok(())
        }
        "MultiPolygon" => {
            let polys = value
                .get("coordinates")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Geometry("MultiPolygon missing coordinates".into()))?;
            for poly in polys {
                out.push(parse_rings(Some(poly))?);
            }
            Ok(())
        }
        // Other geometry kinds are simply not polygons; skip them.
        _ => Ok(()),
    }
}

fn parse_rings(coordinates: Option<&Value>) -> Result<Vec<Vec<(f64, f64)>>> {
    let rings = coordinates
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry("Polygon missing coordinates".into()))?;
    rings
        .iter()
        .map(|ring| {
            let positions = ring
                .as_array()
                .ok_or_else(|| Error::Geometry("polygon ring is not an array".into()))?;
            positions
                .iter()
                .map(|pos| {
                    let pos = pos
                        .as_array()
                        .ok_or_else(|| Error::Geometry("position is not an array".into()))?;
                    if pos.len() < 2 {
                        return Err(Error::Geometry("position has fewer than 2 numbers".into()));
                    }
                    let lon = pos[0]
                        .as_f64()
                        .ok_or_else(|| Error::Geometry("non-numeric longitude".into()))?;
                    let lat = pos[1]
                        .as_f64()
                        .ok_or_else(|| Error::Geometry("non-numeric latitude".into()))?;
                    Ok((lon, lat))
                })
                .collect()
        })
        .collect()
}

fn validate_rings(rings: &[Vec<(f64, f64)>]) -> Result<()> {
    if rings.is_empty() {
        return Err(Error::Geometry("polygon has no rings".into()));
    }
    for ring in rings {
        if ring.len() < 4 {
            return Err(Error::Geometry(format!(
                "polygon ring has {} positions, need at least 4",
                ring.len()
            )));
        }
        if ring.first() != ring.last() {
            return Err(Error::Geometry("polygon ring is not closed".into()));
        }
        if ring
            .iter()
            .any(|(lon, lat)| !lon.is_finite() || !lat.is_finite())
        {
            return Err(Error::Geometry("polygon ring has non-finite coordinates".into()));
        }
    }
    Ok(())
}

/// Standard even-odd ray cast over every ring of one polygon. Holes flip
/// membership back off naturally.
fn point_in_rings_even_odd(rings: &[Vec<(f64, f64)>], lon: f64, lat: f64) -> bool {
    let mut inside = false;
    for ring in rings {
        // Last position repeats the first, so consecutive pairs cover the
        // boundary exactly once.
        for pair in ring.windows(2) {
            let (x1, y1) = pair[0];
            let (x2, y2) = pair[1];
            if (y1 > lat) != (y2 > lat) {
                let x_cross = (x2 - x1) * (lat - y1) / (y2 - y1) + x1;
                if lon < x_cross {
                    inside = !inside;
                }
            }
        }
    }
    inside
}
