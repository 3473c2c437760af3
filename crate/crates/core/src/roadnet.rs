//! Road-network composition statistics from OSM XML extracts: which road
//! types make up a region, by segment count and by geodesic length.
//!
//! Only the `highway` key is consulted; link types (`motorway_link`, ...)
//! stay distinct. Binary OSM formats are out of scope, pre-convert instead.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::BufReader;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::geo::haversine_m;
use crate::geojson::RegionPolygons;

/// A typed road way with resolved vertex coordinates, `(lat, lon)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub way_id: i64,
    pub highway_type: String,
    pub geometry: Vec<(f64, f64)>,
}

/// A way that could not be turned into a [`RoadSegment`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WayRejection {
    pub way_id: i64,
    pub reason: String,
}

/// Parses an OSM XML extract, returning every way carrying a non-empty
/// `highway` tag with its node references resolved to coordinates. Ways
/// referencing missing nodes (or with fewer than 2 resolvable vertices) are
/// rejected into the report. Malformed XML fails with a byte offset.
pub fn parse_osm(path: impl AsRef<Path>) -> Result<(Vec<RoadSegment>, Vec<WayRejection>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader::from_reader(BufReader::new(file));
    reader.config_mut().trim_text(true);

    let mut buf = Vec::new();
    let mut nodes: HashMap<i64, (f64, f64)> = HashMap::new();
    // (way_id, highway_type, node refs), resolved after the full pass so
    // node ordering in the file does not matter.
    let mut pending_ways: Vec<(i64, Option<String>, Vec<i64>)> = Vec::new();
    let mut current_way: Option<(i64, Option<String>, Vec<i64>)> = None;

    macro_rules! malformed {
        ($reader:expr, $msg:expr) => {
            Error::OsmParse {
                offset: $reader.error_position(),
                message: $msg.to_string(),
            }
        };
    }

    loop {
        match reader.read_event_into(&mut buf) {
            Err(e) => {
                return Err(Error::OsmParse {
                    offset: reader.error_position(),
                    message: e.to_string(),
                })
            }
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                match e.name().as_ref() {
                    b"node" => {
                        let mut id = None;
                        let mut lat = None;
                        let mut lon = None;
                        for attr in e.attributes() {
                            let attr =
                                attr.map_err(|err| malformed!(reader, err))?;
                            let value = std::str::from_utf8(&attr.value)
                                .map_err(|err| malformed!(reader, err))?;
                            match attr.key.as_ref() {
                                b"id" => {
                                    id = Some(value.parse::<i64>().map_err(|_| {
                                        malformed!(reader, format!("bad node id {value:?}"))
                                    })?)
                                }
                                b"lat" => {
                                    lat = Some(value.parse::<f64>().map_err(|_| {
                                        malformed!(reader, format!("bad node lat {value:?}"))
                                    })?)
                                }
                                b"lon" => {
                                    lon = Some(value.parse::<f64>().map_err(|_| {
                                        malformed!(reader, format!("bad node lon {value:?}"))
                                    })?)
                                }
                                _ => {}
                            }
                        }
                        let (Some(id), Some(lat), Some(lon)) = (id, lat, lon) else {
                            return Err(malformed!(reader, "node missing id/lat/lon"));
                        };
                        nodes.insert(id, (lat, lon));
                    }
                    b"way" => {
                        let mut id = None;
                        for attr in e.attributes() {
                            let attr = attr.map_err(|err| malformed!(reader, err))?;
                            if attr.key.as_ref() == b"id" {
                                let value = std::str::from_utf8(&attr.value)
                                    .map_err(|err| malformed!(reader, err))?;
                                id = Some(value.parse::<i64>().map_err(|_| {
                                    malformed!(reader, format!("bad way id {value:?}"))
                                })?);
                            }
                        }
                        let Some(id) = id else {
                            return Err(malformed!(reader, "way missing id"));
                        };
                        current_way = Some((id, None, Vec::new()));
                    }
                    b"nd" => {
                        if let Some((_, _, refs)) = current_way.as_mut() {
                            for attr in e.attributes() {
                                let attr = attr.map_err(|err| malformed!(reader, err))?;
                                if attr.key.as_ref() == b"ref" {
                                    let value = std::str::from_utf8(&attr.value)
                                        .map_err(|err| malformed!(reader, err))?;
                                    refs.push(value.parse::<i64>().map_err(|_| {
                                        malformed!(reader, format!("bad nd ref {value:?}"))
                                    })?);
                                }
                            }
                        }
                    }
                    b"tag" => {
                        if let Some((_, highway, _)) = current_way.as_mut() {
                            let mut key = None;
                            let mut value = None;
                            for attr in e.attributes() {
                                let attr = attr.map_err(|err| malformed!(reader, err))?;
                                let v = std::str::from_utf8(&attr.value)
                                    .map_err(|err| malformed!(reader, err))?
                                    .to_string();
                                match attr.key.as_ref() {
                                    b"k" => key = Some(v),
                                    b"v" => value = Some(v),
                                    _ => {}
                                }
                            }
                            if key.as_deref() == Some("highway") {
                                *highway = value;
                            }
                        }
                    }
                    _ => {}
                }
            }
            Ok(Event::End(e)) => {
                if e.name().as_ref() == b"way" {
                    if let Some(way) = current_way.take() {
                        pending_ways.push(way);
                    }
                }
            }
            Ok(_) => {}
        }
        buf.clear();
    }

    let mut segments = Vec::new();
    let mut rejections = Vec::new();
    for (way_id, highway, refs) in pending_ways {
        let Some(highway_type) = highway.filter(|h| !h.is_empty()) else {
            continue; // not a road
        };
        let mut geometry = Vec::with_capacity(refs.len());
        let mut missing = None;
        for r in &refs {
            match nodes.get(r) {
                Some(&coord) => geometry.push(coord),
                None => {
                    missing = Some(*r);
                    break;
                }
            }
        }
        if let Some(node_id) = missing {
            rejections.push(WayRejection {
                way_id,
                reason: format!("missing node {node_id}"),
            });
            continue;
        }
        if geometry.len() < 2 {
            rejections.push(WayRejection {
                way_id,
                reason: format!("only {} vertices", geometry.len()),
            });
            continue;
        }
        segments.push(RoadSegment {
            way_id,
            highway_type,
            geometry,
        });
    }

    Ok((segments, rejections))
}

/// Geodesic length of a segment: haversine distances summed over
/// consecutive vertex pairs.
pub fn segment_length_m(segment: &RoadSegment) -> f64 {
    segment
        .geometry
        .windows(2)
        .map(|pair| haversine_m(pair[0].0, pair[0].1, pair[1].0, pair[1].1))
        .sum()
}

/// Keeps each segment's maximal runs of consecutive vertices that fall
/// inside the region (even-odd rule). No boundary intersection points are
/// synthesized, so the clip error is bounded by one inter-vertex spacing;
/// runs shorter than 2 vertices are dropped.
pub fn clip_to_region(
    segments: &[RoadSegment],
    region: &RegionPolygons,
) -> Vec<RoadSegment> {
    let mut clipped = Vec::new();
    for segment in segments {
        let mut run: Vec<(f64, f64)> = Vec::new();
        let flush = |run: &mut Vec<(f64, f64)>, out: &mut Vec<RoadSegment>| {
            if run.len() >= 2 {
                out.push(RoadSegment {
                    way_id: segment.way_id,
                    highway_type: segment.highway_type.clone(),
                    geometry: std::mem::take(run),
                });
            } else {
                run.clear();
            }
        };
        for &(lat, lon) in &segment.geometry {
            if region.contains(lon, lat) {
                run.push((lat, lon));
            } else {
                flush(&mut run, &mut clipped);
            }
        }
        flush(&mut run, &mut clipped);
    }
    clipped
}

/// Per-type composition row.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeRow {
    pub highway_type: String,
    pub segment_count: usize,
    /// Share of segments, percent.
    pub count_percent: f64,
    /// Share of total network length, percent.
    pub normalized_percent: f64,
    pub total_length_m: f64,
}

/// Composition table, rows sorted by total length descending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadTypeStats {
    pub rows: Vec<TypeRow>,
    pub total_count: usize,
    pub total_length_m: f64,
}

/// Groups segments by highway type. `count_percent` is the segment-count
/// share; `normalized_percent` is the length share (falling back to count
/// share for a degenerate all-zero-length network so both columns always
/// close to 100 on non-empty input).
pub fn type_stats(segments: &[RoadSegment]) -> RoadTypeStats {
    if segments.is_empty() {
        return RoadTypeStats::default();
    }
    let mut by_type: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for segment in segments {
        let entry = by_type.entry(&segment.highway_type).or_default();
        entry.0 += 1;
        entry.1 += segment_length_m(segment);
    }
    let total_count: usize = segments.len();
    let total_length_m: f64 = by_type.values().map(|(_, l)| l).sum();

    let mut rows: Vec<TypeRow> = by_type
        .into_iter()
        .map(|(highway_type, (count, length))| TypeRow {
            highway_type: highway_type.to_string(),
            segment_count: count,
            count_percent: 100.0 * count as f64 / total_count as f64,
            normalized_percent: if total_length_m > 0.0 {
                100.0 * length / total_length_m
            } else {
                100.0 * count as f64 / total_count as f64
            },
            total_length_m: length,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.total_length_m
            .partial_cmp(&a.total_length_m)
            .unwrap()
            .then_with(|| a.highway_type.cmp(&b.highway_type))
    });

    RoadTypeStats {
        rows,
        total_count,
        total_length_m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::EARTH_RADIUS_M;
    use approx::assert_relative_eq;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_file(contents: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    const OSM_HEADER: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;

    #[test]
    fn parse_single_residential_way() {
        let f = write_file(&format!(
            "{OSM_HEADER}\n<osm>\n\
             <node id=\"1\" lat=\"40.75\" lon=\"-73.98\"/>\n\
             <node id=\"2\" lat=\"40.751\" lon=\"-73.98\"/>\n\
             <node id=\"3\" lat=\"40.752\" lon=\"-73.981\"/>\n\
             <way id=\"100\">\n\
               <nd ref=\"1\"/><nd ref=\"2\"/><nd ref=\"3\"/>\n\
               <tag k=\"highway\" v=\"residential\"/>\n\
               <tag k=\"name\" v=\"Test Street\"/>\n\
             </way>\n</osm>\n"
        ));
        let (segments, rejections) = parse_osm(f.path()).unwrap();
        assert!(rejections.is_empty());
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].way_id, 100);
        assert_eq!(segments[0].highway_type, "residential");
        assert_eq!(segments[0].geometry.len(), 3);
        assert_eq!(segments[0].geometry[0], (40.75, -73.98));
    }

    #[test]
    fn way_without_highway_tag_is_excluded() {
        let f = write_file(&format!(
            "{OSM_HEADER}\n<osm>\n\
             <node id=\"1\" lat=\"40.75\" lon=\"-73.98\"/>\n\
             <node id=\"2\" lat=\"40.751\" lon=\"-73.98\"/>\n\
             <way id=\"100\">\n\
               <nd ref=\"1\"/><nd ref=\"2\"/>\n\
               <tag k=\"building\" v=\"yes\"/>\n\
             </way>\n</osm>\n"
        ));
        let (segments, rejections) = parse_osm(f.path()).unwrap();
        assert!(segments.is_empty());
        assert!(rejections.is_empty());
    }

    #[test]
    fn way_with_missing_node_is_rejected() {
        let f = write_file(&format!(
            "{OSM_HEADER}\n<osm>\n\
             <node id=\"1\" lat=\"40.75\" lon=\"-73.98\"/>\n\
             <node id=\"2\" lat=\"40.751\" lon=\"-73.98\"/>\n\
             <way id=\"100\">\n\
               <nd ref=\"1\"/><nd ref=\"2\"/>\n\
               <tag k=\"highway\" v=\"primary\"/>\n\
             </way>\n\
             <way id=\"101\">\n\
               <nd ref=\"1\"/><nd ref=\"999\"/>\n\
               <tag k=\"highway\" v=\"service\"/>\n\
             </way>\n</osm>\n"
        ));
        let (segments, rejections) = parse_osm(f.path()).unwrap();
        assert_eq!(segments.len(), 1);
        assert_eq!(rejections.len(), 1);
        assert_eq!(rejections[0].way_id, 101);
        assert!(rejections[0].reason.contains("missing node 999"));
    }

    #[test]
    fn malformed_xml_reports_byte_offset() {
        let f = write_file(&format!(
            "{OSM_HEADER}\n<osm>\n<node id=\"1\" lat=\"40.75\" lon=\"-73.98\"/>\n</wrong>\n"
        ));
        let err = parse_osm(f.path()).unwrap_err();
        match err {
            Error::OsmParse { offset, .. } => assert!(offset > 0),
            other => panic!("expected OsmParse, got {other}"),
        }
    }

    /// Latitude delta whose meridian arc is `meters` long; haversine along a
    /// meridian reduces to R * dlat, so lengths are exact by construction.
    fn dlat_for_meters(meters: f64) -> f64 {
        (meters / EARTH_RADIUS_M).to_degrees()
    }

    fn meridian_segment(way_id: i64, highway_type: &str, meters: f64, n_legs: usize) -> RoadSegment {
        let leg = dlat_for_meters(meters) / n_legs as f64;
        RoadSegment {
            way_id,
            highway_type: highway_type.to_string(),
            geometry: (0..=n_legs).map(|i| (40.0 + leg * i as f64, -73.9)).collect(),
        }
    }

    #[test]
    fn segment_length_meridian_hundredth_degree() {
        let seg = RoadSegment {
            way_id: 1,
            highway_type: "residential".into(),
            geometry: vec![(40.75, -73.98), (40.76, -73.98)],
        };
        assert_relative_eq!(segment_length_m(&seg), 1111.9949, max_relative = 1e-4);
    }

    #[test]
    fn repeated_vertex_contributes_zero() {
        let seg = RoadSegment {
            way_id: 1,
            highway_type: "residential".into(),
            geometry: vec![(40.75, -73.98), (40.75, -73.98), (40.76, -73.98)],
        };
        let direct = RoadSegment {
            geometry: vec![(40.75, -73.98), (40.76, -73.98)],
            ..seg.clone()
        };
        assert_eq!(segment_length_m(&seg), segment_length_m(&direct));
    }

    #[test]
    fn collinear_vertices_match_endpoint_distance() {
        let seg = meridian_segment(1, "primary", 3000.0, 3);
        let endpoints = RoadSegment {
            way_id: 1,
            highway_type: "primary".into(),
            geometry: vec![
                *seg.geometry.first().unwrap(),
                *seg.geometry.last().unwrap(),
            ],
        };
        assert_relative_eq!(
            segment_length_m(&seg),
            segment_length_m(&endpoints),
            max_relative = 1e-4
        );
    }

    #[test]
    fn type_stats_hand_example() {
        // 2 residential of 100 m + 1 primary of 300 m.
        let segments = vec![
            meridian_segment(1, "residential", 100.0, 1),
            meridian_segment(2, "residential", 100.0, 1),
            meridian_segment(3, "primary", 300.0, 1),
        ];
        let stats = type_stats(&segments);
        assert_eq!(stats.rows.len(), 2);
        // Sorted by total length: primary (300) first.
        assert_eq!(stats.rows[0].highway_type, "primary");
        assert_relative_eq!(stats.rows[0].count_percent, 100.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(stats.rows[0].normalized_percent, 60.0, epsilon = 1e-6);
        assert_relative_eq!(stats.rows[0].total_length_m, 300.0, max_relative = 1e-9);
        assert_eq!(stats.rows[1].highway_type, "residential");
        assert_eq!(stats.rows[1].segment_count, 2);
        assert_relative_eq!(stats.rows[1].count_percent, 200.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(stats.rows[1].normalized_percent, 40.0, epsilon = 1e-6);
        assert_relative_eq!(stats.rows[1].total_length_m, 200.0, max_relative = 1e-9);
    }

    #[test]
    fn type_stats_single_type_is_hundred_percent() {
        let stats = type_stats(&[meridian_segment(1, "service", 50.0, 1)]);
        assert_eq!(stats.rows.len(), 1);
        assert_eq!(stats.rows[0].count_percent, 100.0);
        assert_eq!(stats.rows[0].normalized_percent, 100.0);
    }

    #[test]
    fn type_stats_empty_input() {
        let stats = type_stats(&[]);
        assert!(stats.rows.is_empty());
        assert_eq!(stats.total_count, 0);
    }

    #[test]
    fn percentage_columns_close_to_hundred() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let types = ["residential", "primary", "secondary", "service", "motorway_link"];
        let segments: Vec<RoadSegment> = (0..60)
            .map(|i| {
                let ty = types[rng.random_range(0..types.len())];
                meridian_segment(i, ty, rng.random_range(20.0..2000.0), 2)
            })
            .collect();
        let stats = type_stats(&segments);
        let count_sum: f64 = stats.rows.iter().map(|r| r.count_percent).sum();
        let norm_sum: f64 = stats.rows.iter().map(|r| r.normalized_percent).sum();
        assert!((count_sum - 100.0).abs() <= 1e-9, "count sum {count_sum}");
        assert!((norm_sum - 100.0).abs() <= 1e-9, "normalized sum {norm_sum}");
    }

    #[test]
    fn splitting_a_segment_preserves_type_totals() {
        let whole = meridian_segment(1, "primary", 1000.0, 4);
        let split_at = 2;
        let part1 = RoadSegment {
            way_id: 1,
            highway_type: "primary".into(),
            geometry: whole.geometry[..=split_at].to_vec(),
        };
        let part2 = RoadSegment {
            way_id: 1,
            highway_type: "primary".into(),
            geometry: whole.geometry[split_at..].to_vec(),
        };
        let a = type_stats(&[whole]);
        let b = type_stats(&[part1, part2]);
        assert_relative_eq!(
            a.rows[0].total_length_m,
            b.rows[0].total_length_m,
            max_relative = 1e-6
        );
    }

    fn square_region(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> RegionPolygons {
        RegionPolygons::from_str(&format!(
            r#"{{"type":"Polygon","coordinates":[[[{min_lon},{min_lat}],[{max_lon},{min_lat}],[{max_lon},{max_lat}],[{min_lon},{max_lat}],[{min_lon},{min_lat}]]]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn clip_keeps_inside_drops_outside() {
        let inside = RoadSegment {
            way_id: 1,
            highway_type: "residential".into(),
            geometry: vec![(40.5, -73.5), (40.5, -73.4)],
        };
        let outside = RoadSegment {
            way_id: 2,
            highway_type: "residential".into(),
            geometry: vec![(41.5, -73.5), (41.5, -73.4)],
        };
        let region = square_region(-74.0, 40.0, -73.0, 41.0);
        let clipped = clip_to_region(&[inside.clone(), outside], &region);
        assert_eq!(clipped, vec![inside]);
    }

    #[test]
    fn clip_keeps_interior_run() {
        // 5 vertices, middle 3 inside: one 3-vertex run survives.
        let seg = RoadSegment {
            way_id: 1,
            highway_type: "primary".into(),
            geometry: vec![
                (41.5, -73.5), // out
                (40.6, -73.5), // in
                (40.5, -73.5), // in
                (40.4, -73.5), // in
                (39.5, -73.5), // out
            ],
        };
        let region = square_region(-74.0, 40.0, -73.0, 41.0);
        let clipped = clip_to_region(&[seg], &region);
        assert_eq!(clipped.len(), 1);
        assert_eq!(clipped[0].geometry.len(), 3);

        // Cross-check with a per-vertex point-in-polygon oracle.
        for &(lat, _) in &clipped[0].geometry {
            assert!((40.0..41.0).contains(&lat));
        }
    }

    #[test]
    fn clip_with_covering_region_returns_everything() {
        let segments = vec![
            meridian_segment(1, "residential", 500.0, 2),
            meridian_segment(2, "primary", 900.0, 3),
        ];
        let region = square_region(-80.0, 30.0, -60.0, 50.0);
        let clipped = clip_to_region(&segments, &region);
        assert_eq!(clipped, segments);
    }

    #[test]
    fn clip_single_inside_vertex_is_dropped() {
        let seg = RoadSegment {
            way_id: 1,
            highway_type: "service".into(),
            geometry: vec![(41.5, -73.5), (40.5, -73.5), (39.5, -73.5)],
        };
        let region = square_region(-74.0, 40.0, -73.0, 41.0);
        assert!(clip_to_region(&[seg], &region).is_empty());
    }

    #[test]
    fn parse_then_stats_is_deterministic() {
        let f = write_file(&format!(
            "{OSM_HEADER}\n<osm>\n\
             <node id=\"1\" lat=\"40.75\" lon=\"-73.98\"/>\n\
             <node id=\"2\" lat=\"40.751\" lon=\"-73.98\"/>\n\
             <node id=\"3\" lat=\"40.752\" lon=\"-73.98\"/>\n\
             <way id=\"100\"><nd ref=\"1\"/><nd ref=\"2\"/><tag k=\"highway\" v=\"residential\"/></way>\n\
             <way id=\"101\"><nd ref=\"2\"/><nd ref=\"3\"/><tag k=\"highway\" v=\"primary\"/></way>\n\
             </osm>\n"
        ));
        let (seg_a, _) = parse_osm(f.path()).unwrap();
        let (seg_b, _) = parse_osm(f.path()).unwrap();
        assert_eq!(seg_a, seg_b);
        assert_eq!(type_stats(&seg_a), type_stats(&seg_b));
    }
}
