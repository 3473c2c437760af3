//! Hotspot extraction from density surfaces and two-period shift metrics.
//!
//! A hotspot is a 4-connected component of cells whose density reaches the
//! empirical `q`-quantile of the surface's positive values. The quantile is
//! taken over positive cells only, so large empty fringes do not depress the
//! threshold.

use std::collections::BTreeSet;
use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::density::{DensityGrid, GridSpec, PlanarPoint};
use crate::error::{Error, Result};

/// One hotspot region.
#[derive(Debug, Clone, PartialEq)]
pub struct Hotspot {
    /// Member cells as (row, col), sorted row-major. 4-connected.
    pub cells: Vec<(usize, usize)>,
    /// Density-weighted centroid in the grid's planar frame.
    pub centroid: PlanarPoint,
    pub area_m2: f64,
    pub peak_density: f64,
    pub peak_cell: (usize, usize),
    /// Integrated density: `sum(value) * cell_area`.
    pub mass: f64,
}

/// All hotspots of one surface, sorted by mass descending (ties by peak
/// cell).
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotSet {
    pub spec: GridSpec,
    pub threshold_density: f64,
    pub quantile_q: f64,
    pub regions: Vec<Hotspot>,
}

impl HotspotSet {
    /// Union of all region cells.
    pub fn mask(&self) -> BTreeSet<(usize, usize)> {
        self.regions
            .iter()
            .flat_map(|r| r.cells.iter().copied())
            .collect()
    }

    /// Mass-weighted centroid over all regions, `None` when empty.
    pub fn global_centroid(&self) -> Option<PlanarPoint> {
        if self.regions.is_empty() {
            return None;
        }
        let total: f64 = self.regions.iter().map(|r| r.mass).sum();
        let x = self
            .regions
            .iter()
            .map(|r| r.mass * r.centroid.x)
            .sum::<f64>()
            / total;
        let y = self
            .regions
            .iter()
            .map(|r| r.mass * r.centroid.y)
            .sum::<f64>()
            / total;
        Some(PlanarPoint::new(x, y))
    }
}

/// Empirical `q`-quantile of the positive grid values: the `ceil(q * m)`-th
/// smallest of the `m` positive values.
fn positive_quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut positives: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    if positives.is_empty() {
        return None;
    }
    positives.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = positives.len();
    let k = ((q * m as f64).ceil() as usize).clamp(1, m);
    Some(positives[k - 1])
}

/// Extracts the hotspot regions of `grid` at quantile `quantile_q`. An
/// all-zero grid yields an empty set, not an error.
pub fn extract_hotspots(grid: &DensityGrid, quantile_q: f64) -> Result<HotspotSet> {
    if !(quantile_q > 0.0 && quantile_q < 1.0) {
        return Err(Error::Argument(format!(
            "quantile must lie in (0, 1), got {quantile_q}"
        )));
    }
    let spec = &grid.spec;
    let Some(threshold) = positive_quantile(&grid.values, quantile_q) else {
        return Ok(HotspotSet {
            spec: spec.clone(),
            threshold_density: f64::INFINITY,
            quantile_q,
            regions: Vec::new(),
        });
    };

    let mask: Vec<bool> = grid.values.iter().map(|&v| v >= threshold).collect();
    let mut visited = vec![false; mask.len()];
    let mut regions = Vec::new();

    for seed in 0..mask.len() {
        if !mask[seed] || visited[seed] {
            continue;
        }
        // Flood fill one 4-connected component.
        let mut cells = Vec::new();
        let mut stack = vec![seed];
        visited[seed] = true;
        while let Some(idx) = stack.pop() {
            let (row, col) = (idx / spec.nx, idx % spec.nx);
            cells.push((row, col));
            let mut push = |r: usize, c: usize| {
                let j = r * spec.nx + c;
                if mask[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if row > 0 {
                push(row - 1, col);
            }
            if row + 1 < spec.ny {
                push(row + 1, col);
            }
            if col > 0 {
                push(row, col - 1);
            }
            if col + 1 < spec.nx {
                push(row, col + 1);
            }
        }
        cells.sort_unstable();
        regions.push(summarize_region(grid, cells));
    }

    regions.sort_by(|a, b| {
        b.mass
            .partial_cmp(&a.mass)
            .unwrap()
            .then(a.peak_cell.cmp(&b.peak_cell))
    });

    Ok(HotspotSet {
        spec: spec.clone(),
        threshold_density: threshold,
        quantile_q,
        regions,
    })
}

fn summarize_region(grid: &DensityGrid, cells: Vec<(usize, usize)>) -> Hotspot {
    let spec = &grid.spec;
    let cell_area = spec.cell_area_m2();
    let mut sum_v = 0.0;
    let mut sum_vx = 0.0;
    let mut sum_vy = 0.0;
    let mut peak_density = f64::NEG_INFINITY;
    let mut peak_cell = cells[0];
    for &(row, col) in &cells {
        let v = grid.value(row, col);
        let center = spec.cell_center(row, col);
        sum_v += v;
        sum_vx += v * center.x;
        sum_vy += v * center.y;
        if v > peak_density {
            peak_density = v;
            peak_cell = (row, col);
        }
    }
    Hotspot {
        centroid: PlanarPoint::new(sum_vx / sum_v, sum_vy / sum_v),
        area_m2: cells.len() as f64 * cell_area,
        peak_density,
        peak_cell,
        mass: sum_v * cell_area,
        cells,
    }
}

/// A matched (before, after) region pair from greedy centroid matching.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMatch {
    pub before_index: usize,
    pub after_index: usize,
    pub displacement_m: f64,
}

/// How the hotspots moved between two periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    /// Jaccard overlap of the union masks, in [0, 1].
    pub jaccard: f64,
    /// Distance between mass-weighted global centroids; `None` when either
    /// set is empty.
    pub centroid_displacement_m: Option<f64>,
    pub n_before: usize,
    pub n_after: usize,
    /// Greedy closest-centroid pairing (approximate, not an optimal
    /// assignment).
    pub matches: Vec<RegionMatch>,
    pub unmatched_before: Vec<usize>,
    pub unmatched_after: Vec<usize>,
}

/// Compares two hotspot sets derived from identical grid geometry.
pub fn shift_metrics(before: &HotspotSet, after: &HotspotSet) -> Result<ShiftReport> {
    if before.spec != after.spec {
        return Err(Error::Geometry(
            "shift metrics require hotspot sets on identical grid geometry".into(),
        ));
    }

    let mask_before = before.mask();
    let mask_after = after.mask();

    let (jaccard, centroid_displacement_m) = if mask_before.is_empty() || mask_after.is_empty() {
        (0.0, None)
    } else {
        let intersection = mask_before.intersection(&mask_after).count();
        let union = mask_before.union(&mask_after).count();
        let displacement = before
            .global_centroid()
            .zip(after.global_centroid())
            .map(|(a, b)| a.distance(&b));
        (intersection as f64 / union as f64, displacement)
    };

    // Greedy matching: repeatedly take the globally closest unmatched pair.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, rb) in before.regions.iter().enumerate() {
        for (j, ra) in after.regions.iter().enumerate() {
            pairs.push((rb.centroid.distance(&ra.centroid), i, j));
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut used_before = vec![false; before.regions.len()];
    let mut used_after = vec![false; after.regions.len()];
    let mut matches = Vec::new();
    for (dist, i, j) in pairs {
        if used_before[i] || used_after[j] {
            continue;
        }
        used_before[i] = true;
        used_after[j] = true;
        matches.push(RegionMatch {
            before_index: i,
            after_index: j,
            displacement_m: dist,
        });
    }

    Ok(ShiftReport {
        jaccard,
        centroid_displacement_m,
        n_before: before.regions.len(),
        n_after: after.regions.len(),
        matches,
        unmatched_before: used_before
            .iter()
            .enumerate()
            .filter(|(_, used)| !**used)
            .map(|(i, _)| i)
            .collect(),
        unmatched_after: used_after
            .iter()
            .enumerate()
            .filter(|(_, used)| !**used)
            .map(|(i, _)| i)
            .collect(),
    })
}

/// Dissolves a region's cells into boundary rings on the lattice of cell
/// corners. Walks with the region interior on the left, so exterior rings
/// wind counterclockwise and holes clockwise, matching GeoJSON conventions.
/// Returns rings of lattice corners (col, row), each closed (first == last).
fn trace_boundary(cells: &[(usize, usize)]) -> Vec<Vec<(i64, i64)>> {
    let in_region: BTreeSet<(i64, i64)> = cells
        .iter()
        .map(|&(r, c)| (r as i64, c as i64))
        .collect();

    // Directed boundary edges keyed by start corner. Corner (x, y) sits at
    // planar (x * cell, y * cell).
    let mut outgoing: BTreeMap<(i64, i64), Vec<(i64, i64)>> = BTreeMap::new();
    let mut add = |from: (i64, i64), to: (i64, i64)| {
        outgoing.entry(from).or_default().push(to);
    };
    for &(r, c) in &in_region {
        if !in_region.contains(&(r - 1, c)) {
            add((c, r), (c + 1, r)); // south side, walk east
        }
        if !in_region.contains(&(r, c + 1)) {
            add((c + 1, r), (c + 1, r + 1)); // east side, walk north
        }
        if !in_region.contains(&(r + 1, c)) {
            add((c + 1, r + 1), (c, r + 1)); // north side, walk west
        }
        if !in_region.contains(&(r, c - 1)) {
            add((c, r + 1), (c, r)); // west side, walk south
        }
    }
    for ends in outgoing.values_mut() {
        ends.sort_unstable();
    }

    let mut rings = Vec::new();
    while let Some((&start, _)) = outgoing.iter().find(|(_, ends)| !ends.is_empty()) {
        let mut ring = vec![start];
        let mut current = start;
        let mut dir: Option<(i64, i64)> = None;
        loop {
            let ends = outgoing.get_mut(&current).expect("open boundary chain");
            let next = match (ends.len(), dir) {
                (0, _) => panic!("boundary chain dead-ends at {current:?}"),
                (1, _) | (_, None) => ends.remove(0),
                (_, Some(d)) => {
                    // Pinch corner (two diagonal member cells touching).
                    // Walking with the interior on the left, turning right
                    // hugs the out-cell being passed, which separates the
                    // two out-cells and keeps every ring simple.
                    let left = (-d.1, d.0);
                    let right = (d.1, -d.0);
                    let pick = [right, d, left]
                        .into_iter()
                        .find_map(|want| {
                            let target = (current.0 + want.0, current.1 + want.1);
                            ends.iter().position(|&e| e == target)
                        })
                        .expect("no admissible turn at pinch corner");
                    ends.remove(pick)
                }
            };
            dir = Some((next.0 - current.0, next.1 - current.1));
            ring.push(next);
            current = next;
            if current == start {
                break;
            }
        }
        rings.push(ring);
    }

    rings
}

/// Renders the hotspot set as a GeoJSON FeatureCollection: one Feature per
/// region with a MultiPolygon of its dissolved cell outline (WGS84, lon/lat
/// order) and `{mass, area_m2, peak_density, centroid}` properties. `echo`
/// lands in a foreign `metadata` member for provenance.
pub fn hotspots_to_geojson(set: &HotspotSet, echo: &BTreeMap<String, String>) -> Value {
    let spec = &set.spec;
    let corner_lonlat = |(x, y): (i64, i64)| -> Vec<f64> {
        let p = PlanarPoint::new(x as f64 * spec.cell_size_m, y as f64 * spec.cell_size_m);
        let (lat, lon) = spec.unproject(p);
        vec![lon, lat]
    };

    let features: Vec<Value> = set
        .regions
        .iter()
        .enumerate()
        .map(|(rank, region)| {
            let rings = trace_boundary(&region.cells);
            // Exterior rings (counterclockwise, positive shoelace area) each
            // start a polygon; holes attach to the polygon containing them.
            let mut exteriors: Vec<(Vec<Vec<f64>>, Vec<(i64, i64)>)> = Vec::new();
            let mut holes: Vec<(Vec<Vec<f64>>, (i64, i64))> = Vec::new();
            for ring in rings {
                let area2 = shoelace2(&ring);
                let coords: Vec<Vec<f64>> = ring.iter().map(|&c| corner_lonlat(c)).collect();
                if area2 > 0 {
                    exteriors.push((coords, ring));
                } else {
                    holes.push((coords, ring[0]));
                }
            }
            let mut polygons: Vec<Vec<Vec<Vec<f64>>>> =
                exteriors.iter().map(|(coords, _)| vec![coords.clone()]).collect();
            for (hole_coords, corner) in holes {
                let owner = exteriors
                    .iter()
                    .position(|(_, ring)| corner_inside_lattice_ring(ring, corner))
                    .unwrap_or(0);
                polygons[owner].push(hole_coords);
            }

            let (centroid_lat, centroid_lon) = spec.unproject(region.centroid);
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "MultiPolygon",
                    "coordinates": polygons,
                },
                "properties": {
                    "rank": rank,
                    "mass": region.mass,
                    "area_m2": region.area_m2,
                    "peak_density": region.peak_density,
                    "centroid": [centroid_lon, centroid_lat],
                }
            })
        })
        .collect();

    json!({
        "type": "FeatureCollection",
        "features": features,
        "metadata": {
            "threshold_density": if set.threshold_density.is_finite() {
                json!(set.threshold_density)
            } else {
                json!("none")
            },
            "quantile_q": set.quantile_q,
            "n_regions": set.regions.len(),
            "config": echo,
        }
    })
}

/// Twice the signed shoelace area of a closed lattice ring (integer-exact).
fn shoelace2(ring: &[(i64, i64)]) -> i64 {
    let mut acc = 0i64;
    for pair in ring.windows(2) {
        let (x1, y1) = pair[0];
        let (x2, y2) = pair[1];
        acc += x1 * y2 - x2 * y1;
    }
    acc
}

/// Even-odd test of a lattice corner against a lattice ring, offset by a
/// half-cell so the probe never sits on the boundary.
fn corner_inside_lattice_ring(ring: &[(i64, i64)], corner: (i64, i64)) -> bool {
    let (px, py) = (corner.0 as f64 + 0.25, corner.1 as f64 + 0.25);
    let mut inside = false;
    for pair in ring.windows(2) {
        let (x1, y1) = (pair[0].0 as f64, pair[0].1 as f64);
        let (x2, y2) = (pair[1].0 as f64, pair[1].1 as f64);
        if (y1 > py) != (y2 > py) {
            let x_cross = (x2 - x1) * (py - y1) / (y2 - y1) + x1;
            if px < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{kde, Kernel};
    use approx::assert_relative_eq;

    fn spec(width: f64, height: f64, cell: f64) -> GridSpec {
        GridSpec::new(40.75, -73.98, width, height, cell).unwrap()
    }

    fn grid_with_values(spec: GridSpec, values: Vec<f64>) -> DensityGrid {
        DensityGrid {
            spec,
            values,
            bandwidth_m: 100.0,
            n_points: 1,
            kernel: Kernel::Gaussian,
        }
    }

    #[test]
    fn single_gaussian_yields_one_region_containing_peak() {
        let s = spec(4000.0, 4000.0, 100.0);
        let g = kde(
            &[PlanarPoint::new(2000.0, 2000.0)],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let set = extract_hotspots(&g, 0.95).unwrap();
        assert_eq!(set.regions.len(), 1);
        // The peak cell (closest to the point) is in the region.
        assert!(set.regions[0].cells.contains(&(19, 19)) || set.regions[0].cells.contains(&(20, 20)));
        assert_eq!(set.regions[0].peak_density, g.values.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn two_separated_gaussians_yield_two_equal_regions() {
        let s = spec(8000.0, 4000.0, 100.0);
        let g = kde(
            &[
                PlanarPoint::new(2000.0, 2000.0),
                PlanarPoint::new(6000.0, 2000.0),
            ],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let set = extract_hotspots(&g, 0.95).unwrap();
        assert_eq!(set.regions.len(), 2);
        let (m1, m2) = (set.regions[0].mass, set.regions[1].mass);
        assert!(
            (m1 - m2).abs() / m1 < 0.02,
            "masses differ by more than 2%: {m1} vs {m2}"
        );
    }

    #[test]
    fn all_zero_grid_yields_empty_set() {
        let s = spec(1000.0, 1000.0, 100.0);
        let n = s.n_cells();
        let g = grid_with_values(s, vec![0.0; n]);
        let set = extract_hotspots(&g, 0.95).unwrap();
        assert!(set.regions.is_empty());
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        let s = spec(1000.0, 1000.0, 100.0);
        let n = s.n_cells();
        let g = grid_with_values(s, vec![1.0; n]);
        assert!(extract_hotspots(&g, 0.0).is_err());
        assert!(extract_hotspots(&g, 1.0).is_err());
    }

    #[test]
    fn mask_size_respects_quantile_bound() {
        let s = spec(1000.0, 1000.0, 100.0);
        let n = s.n_cells();
        let values: Vec<f64> = (0..n).map(|i| (i + 1) as f64).collect();
        let g = grid_with_values(s, values);
        let q = 0.9;
        let set = extract_hotspots(&g, q).unwrap();
        let mask_cells = set.mask().len();
        let ties = (1..=n).filter(|&v| v as f64 == set.threshold_density).count();
        assert!(mask_cells as f64 <= (1.0 - q) * n as f64 + ties as f64 + 1e-9);
    }

    #[test]
    fn raising_quantile_shrinks_mask() {
        let s = spec(2000.0, 2000.0, 100.0);
        let g = kde(
            &[
                PlanarPoint::new(600.0, 700.0),
                PlanarPoint::new(1300.0, 1200.0),
                PlanarPoint::new(900.0, 1500.0),
            ],
            &s,
            250.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let loose = extract_hotspots(&g, 0.80).unwrap().mask();
        let tight = extract_hotspots(&g, 0.95).unwrap().mask();
        assert!(tight.is_subset(&loose));
    }

    #[test]
    fn regions_pass_independent_connectivity_check() {
        let s = spec(4000.0, 4000.0, 100.0);
        let g = kde(
            &[
                PlanarPoint::new(1000.0, 1000.0),
                PlanarPoint::new(3000.0, 3000.0),
                PlanarPoint::new(1200.0, 1100.0),
            ],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let set = extract_hotspots(&g, 0.9).unwrap();
        assert!(!set.regions.is_empty());
        for region in &set.regions {
            // Flood fill within the region's own cells must reach them all.
            let cells: BTreeSet<(usize, usize)> = region.cells.iter().copied().collect();
            let mut seen = BTreeSet::new();
            let mut stack = vec![*region.cells.first().unwrap()];
            seen.insert(stack[0]);
            while let Some((r, c)) = stack.pop() {
                let neighbors = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for n in neighbors {
                    if cells.contains(&n) && seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
            assert_eq!(seen, cells, "region not 4-connected");
        }
    }

    #[test]
    fn identical_sets_have_jaccard_one_and_zero_displacement() {
        let s = spec(4000.0, 4000.0, 100.0);
        let g = kde(
            &[PlanarPoint::new(2000.0, 2000.0)],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let set = extract_hotspots(&g, 0.95).unwrap();
        let report = shift_metrics(&set, &set).unwrap();
        assert_eq!(report.jaccard, 1.0);
        assert_eq!(report.centroid_displacement_m, Some(0.0));
        assert_eq!(report.matches.len(), 1);
    }

    #[test]
    fn disjoint_masks_have_jaccard_zero() {
        let s = spec(8000.0, 4000.0, 100.0);
        let g1 = kde(
            &[PlanarPoint::new(1500.0, 2000.0)],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let g2 = kde(
            &[PlanarPoint::new(6500.0, 2000.0)],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let before = extract_hotspots(&g1, 0.95).unwrap();
        let after = extract_hotspots(&g2, 0.95).unwrap();
        let report = shift_metrics(&before, &after).unwrap();
        assert_eq!(report.jaccard, 0.0);
        let d = report.centroid_displacement_m.unwrap();
        assert_relative_eq!(d, 5000.0, epsilon = 100.0);
    }

    #[test]
    fn translated_surface_reports_translation() {
        // Translate a surface exactly 10 cells east by shifting the value
        // array; displacement must be 10 * cell_size within half a cell and
        // Jaccard must match set arithmetic on the shifted mask.
        let s = spec(8000.0, 4000.0, 250.0);
        let g1 = kde(
            &[
                PlanarPoint::new(2000.0, 2000.0),
                PlanarPoint::new(2400.0, 1800.0),
            ],
            &s,
            400.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let shift = 10usize;
        let mut shifted_values = vec![0.0; g1.values.len()];
        for row in 0..s.ny {
            for col in 0..s.nx - shift {
                shifted_values[row * s.nx + col + shift] = g1.values[row * s.nx + col];
            }
        }
        let g2 = DensityGrid {
            spec: s.clone(),
            values: shifted_values,
            ..g1.clone()
        };
        let before = extract_hotspots(&g1, 0.95).unwrap();
        let after = extract_hotspots(&g2, 0.95).unwrap();
        let report = shift_metrics(&before, &after).unwrap();

        let d = report.centroid_displacement_m.unwrap();
        assert!(
            (d - 2500.0).abs() <= s.cell_size_m / 2.0,
            "displacement {d} not within half a cell of 2500"
        );

        let mask_before = before.mask();
        let mask_after = after.mask();
        let translated: BTreeSet<(usize, usize)> = mask_before
            .iter()
            .map(|&(r, c)| (r, c + shift))
            .collect();
        // The after mask must be exactly the before mask translated east.
        assert_eq!(translated, mask_after);
        // Reported Jaccard equals set arithmetic between the original mask
        // and its translate.
        let inter = mask_before.intersection(&translated).count();
        let union = mask_before.union(&translated).count();
        let analytic = inter as f64 / union as f64;
        assert!(
            (report.jaccard - analytic).abs() <= 0.02,
            "jaccard {} vs analytic {analytic}",
            report.jaccard,
        );
    }

    #[test]
    fn empty_set_flags_null_displacement() {
        let s = spec(2000.0, 2000.0, 100.0);
        let n = s.n_cells();
        let g_empty = grid_with_values(s.clone(), vec![0.0; n]);
        let g_full = kde(
            &[PlanarPoint::new(1000.0, 1000.0)],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let empty = extract_hotspots(&g_empty, 0.95).unwrap();
        let full = extract_hotspots(&g_full, 0.95).unwrap();
        let report = shift_metrics(&empty, &full).unwrap();
        assert_eq!(report.jaccard, 0.0);
        assert_eq!(report.centroid_displacement_m, None);
    }

    #[test]
    fn mismatched_geometry_is_an_error() {
        let g1 = kde(
            &[PlanarPoint::new(500.0, 500.0)],
            &spec(1000.0, 1000.0, 100.0),
            200.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let g2 = kde(
            &[PlanarPoint::new(500.0, 500.0)],
            &spec(1000.0, 1000.0, 50.0),
            200.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let a = extract_hotspots(&g1, 0.95).unwrap();
        let b = extract_hotspots(&g2, 0.95).unwrap();
        assert!(matches!(shift_metrics(&a, &b), Err(Error::Geometry(_))));
    }

    #[test]
    fn boundary_of_rectangle_is_single_ring() {
        let cells: Vec<(usize, usize)> =
            (2..5).flat_map(|r| (3..7).map(move |c| (r, c))).collect();
        let rings = trace_boundary(&cells);
        assert_eq!(rings.len(), 1);
        // 3x4 block: perimeter has 14 edges, closed ring repeats the start.
        assert_eq!(rings[0].len(), 15);
        assert_eq!(rings[0].first(), rings[0].last());
        // Counterclockwise exterior; shoelace area equals the cell count.
        assert_eq!(shoelace2(&rings[0]), 2 * 12);
    }

    #[test]
    fn boundary_of_ring_region_has_hole() {
        // 3x3 block minus its center.
        let cells: Vec<(usize, usize)> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .filter(|&(r, c)| !(r == 1 && c == 1))
            .collect();
        let rings = trace_boundary(&cells);
        assert_eq!(rings.len(), 2);
        let total: i64 = rings.iter().map(|r| shoelace2(r)).sum();
        assert_eq!(total, 2 * 8); // 8 cells; hole counts negative
        assert!(rings.iter().any(|r| shoelace2(r) < 0), "no clockwise hole ring");
    }

    #[test]
    fn boundary_of_pinched_region_stays_consistent() {
        // Cells (1,1) and (2,2) touch only at the lattice corner (2,2) but
        // belong to one 4-connected region via the path over row 0 and
        // column 3, producing a pinch corner with two in- and two out-edges.
        let cells = vec![(0, 1), (0, 2), (0, 3), (1, 1), (1, 3), (2, 2), (2, 3)];
        let rings = trace_boundary(&cells);
        let total: i64 = rings.iter().map(|r| shoelace2(r)).sum();
        assert_eq!(total, 2 * cells.len() as i64);
        for ring in &rings {
            assert_eq!(ring.first(), ring.last());
            // Simple rings: no corner repeats except the closing one.
            let mut interior = ring.clone();
            interior.pop();
            let unique: BTreeSet<_> = interior.iter().collect();
            assert_eq!(unique.len(), interior.len(), "ring revisits a corner");
        }
    }

    #[test]
    fn geojson_export_shape() {
        let s = spec(4000.0, 4000.0, 100.0);
        let g = kde(
            &[PlanarPoint::new(2000.0, 2000.0)],
            &s,
            300.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let set = extract_hotspots(&g, 0.95).unwrap();
        let doc = hotspots_to_geojson(&set, &BTreeMap::new());
        assert_eq!(doc["type"], "FeatureCollection");
        let features = doc["features"].as_array().unwrap();
        assert_eq!(features.len(), 1);
        assert_eq!(features[0]["geometry"]["type"], "MultiPolygon");
        let props = &features[0]["properties"];
        assert!(props["mass"].as_f64().unwrap() > 0.0);
        assert!(props["area_m2"].as_f64().unwrap() > 0.0);

        // The exported polygons parse back as a region containing the peak.
        let region = crate::geojson::RegionPolygons::from_geojson(&doc).unwrap();
        let peak = s.cell_center(20, 20);
        let (lat, lon) = s.unproject(peak);
        assert!(region.contains(lon, lat));
    }
}
