//! Subcommand implementations. Each stage writes its artifacts into the
//! configured output directory with the resolved config echoed into every
//! file, and returns the process exit code (0 success, 2 no-change-point).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use hotspot_core::changepoint::{self, DetectorParams, Segmentation};
use hotspot_core::density::{
    grid_spec_covering, kde, select_bandwidth, DensityGrid, GridSpec, PlanarPoint,
};
use hotspot_core::esri;
use hotspot_core::geojson::RegionPolygons;
use hotspot_core::hotspot::{extract_hotspots, hotspots_to_geojson, shift_metrics, ShiftReport};
use hotspot_core::ingest::{
    load_accidents, load_mobility, window_records, AccidentRecord, ColumnSchema, MobilitySeries,
    StudyWindow,
};
use hotspot_core::roadnet::{clip_to_region, parse_osm, type_stats, RoadSegment};
use hotspot_core::shifttest::{permutation_test, IseResult};

use crate::config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_CHANGE_POINT: i32 = 2;

fn echo_comments(echo: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in echo {
        writeln!(out, "# {k}={v}").unwrap();
    }
    out
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .with_context(|| format!("failed to write {}", path.display()))
}

fn ensure_out_dir(config: &Config) -> Result<PathBuf> {
    let dir = config.out_dir();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn load_schema(config: &Config) -> Result<ColumnSchema> {
    match config.path("schema") {
        Some(path) => {
            if !path.exists() {
                bail!("schema file not found: {}", path.display());
            }
            Ok(ColumnSchema::from_file(&path)?)
        }
        None => Ok(ColumnSchema::identity()),
    }
}

fn load_accident_records(config: &Config) -> Result<Vec<AccidentRecord>> {
    let path = config.require_existing_path("accidents")?;
    let schema = load_schema(config)?;
    let (records, rejections) = load_accidents(&path, &schema)?;
    if !rejections.is_empty() {
        eprintln!(
            "note: {} of {} rows rejected while loading {}",
            rejections.len(),
            records.len() + rejections.len(),
            path.display()
        );
        for rejection in rejections.iter().take(5) {
            eprintln!("  line {}: {}", rejection.line, rejection.reason);
        }
    }
    Ok(records)
}

/// Grid from explicit config keys when all are present, otherwise derived
/// to cover the given coordinates with the configured margin.
fn resolve_grid(config: &Config, coords: &[(f64, f64)]) -> Result<GridSpec> {
    let cell_size = config.f64_or("cell_size_m", 250.0)?;
    let explicit = [
        config.f64("origin_lat")?,
        config.f64("origin_lon")?,
        config.f64("width_m")?,
        config.f64("height_m")?,
    ];
    if let [Some(origin_lat), Some(origin_lon), Some(width), Some(height)] = explicit {
        return Ok(GridSpec::new(origin_lat, origin_lon, width, height, cell_size)?);
    }
    if explicit.iter().any(Option::is_some) {
        bail!("grid keys origin_lat, origin_lon, width_m, height_m must be set together");
    }
    let margin = config.f64_or("margin_m", 1000.0)?;
    Ok(grid_spec_covering(coords, cell_size, margin)?)
}

fn project_records(records: &[&AccidentRecord], spec: &GridSpec) -> Result<Vec<PlanarPoint>> {
    records
        .iter()
        .map(|r| Ok(spec.project(r.latitude, r.longitude)?))
        .collect()
}

fn load_series(config: &Config) -> Result<MobilitySeries> {
    let path = config.require_existing_path("mobility")?;
    Ok(load_mobility(&path, &config.categories()?, config.fill_policy()?)?)
}

fn detect(config: &Config, series: &MobilitySeries) -> Result<(Segmentation, DetectorParams)> {
    let beta = match config.f64("beta")? {
        Some(beta) => beta,
        None => changepoint::default_beta(series),
    };
    let params = DetectorParams::new(beta)
        .with_cost(config.cost()?)
        .with_min_segment_len(config.usize_or("min_seg_len", 2)?);
    let seg = changepoint::detect_pruned(series, &params)?;
    Ok((seg, params))
}

fn changepoint_csv(
    series: &MobilitySeries,
    seg: &Segmentation,
    echo: &BTreeMap<String, String>,
) -> String {
    let mut out = echo_comments(echo);
    out.push_str("breakpoint_index,date,objective,beta\n");
    for &b in &seg.breakpoints {
        writeln!(
            out,
            "{b},{},{},{}",
            series.date_at(b),
            seg.objective,
            seg.beta
        )
        .unwrap();
    }
    out
}

fn changepoint_summary(series: &MobilitySeries, seg: &Segmentation) -> String {
    let mut out = String::new();
    writeln!(out, "Mobility change-point detection").unwrap();
    writeln!(
        out,
        "series: {} days starting {}",
        series.len(),
        series.start_date()
    )
    .unwrap();
    writeln!(out, "penalty beta: {}", seg.beta).unwrap();
    writeln!(out, "objective: {}", seg.objective).unwrap();
    if seg.breakpoints.is_empty() {
        writeln!(out, "no change point detected").unwrap();
    } else {
        writeln!(out, "breakpoints (K={}):", seg.change_count()).unwrap();
        for &b in &seg.breakpoints {
            writeln!(out, "  index {b} -> {}", series.date_at(b)).unwrap();
        }
    }
    out
}

pub fn run_changepoint(config: &Config) -> Result<i32> {
    let out_dir = ensure_out_dir(config)?;
    let series = load_series(config)?;
    let (seg, _) = detect(config, &series)?;

    write_text(
        &out_dir.join("changepoints.csv"),
        &changepoint_csv(&series, &seg, &config.echo()),
    )?;
    write_text(
        &out_dir.join("changepoint_summary.txt"),
        &changepoint_summary(&series, &seg),
    )?;

    if seg.breakpoints.is_empty() {
        eprintln!("no change point detected");
        return Ok(EXIT_NO_CHANGE_POINT);
    }
    println!(
        "change point: {} (index {}, K={})",
        changepoint::change_date(&series, &seg)?,
        seg.breakpoints[0],
        seg.change_count()
    );
    Ok(EXIT_OK)
}

fn date_filter(
    records: Vec<AccidentRecord>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Vec<AccidentRecord> {
    records
        .into_iter()
        .filter(|r| from.is_none_or(|d| r.date() >= d) && to.is_none_or(|d| r.date() < d))
        .collect()
}

fn write_grid(
    grid: &DensityGrid,
    out_dir: &Path,
    stem: &str,
    echo: &BTreeMap<String, String>,
) -> Result<()> {
    let prefixed: BTreeMap<String, String> = echo
        .iter()
        .map(|(k, v)| (format!("config.{k}"), v.clone()))
        .collect();
    esri::write_esri_ascii(grid, out_dir.join(format!("{stem}.asc")))?;
    esri::write_sidecar(grid, out_dir.join(format!("{stem}.meta")), &prefixed)?;
    Ok(())
}

pub fn run_kde(config: &Config) -> Result<i32> {
    let out_dir = ensure_out_dir(config)?;
    let records = date_filter(
        load_accident_records(config)?,
        config.date("from")?,
        config.date("to")?,
    );
    if records.is_empty() {
        bail!("no accident records to estimate a density from");
    }
    let coords: Vec<(f64, f64)> = records.iter().map(|r| (r.latitude, r.longitude)).collect();
    let spec = resolve_grid(config, &coords)?;
    let record_refs: Vec<&AccidentRecord> = records.iter().collect();
    let points = project_records(&record_refs, &spec)?;
    let bandwidth = select_bandwidth(&points, config.bandwidth_rule()?)?;
    let grid = kde(&points, &spec, bandwidth, config.kernel()?)?;
    write_grid(&grid, &out_dir, "grid", &config.echo())?;
    println!(
        "kde: {} points, bandwidth {bandwidth:.1} m, {}x{} cells, mass {:.4}",
        grid.n_points, spec.nx, spec.ny,
        grid.mass()
    );
    Ok(EXIT_OK)
}

/// Everything the two-period comparison needs in one place.
struct ComparisonInputs {
    window: StudyWindow,
    spec: GridSpec,
    bandwidth_m: f64,
    before: Vec<PlanarPoint>,
    after: Vec<PlanarPoint>,
}

fn prepare_comparison(config: &Config, change_date: NaiveDate) -> Result<ComparisonInputs> {
    let records = load_accident_records(config)?;
    let window = StudyWindow::new(
        change_date,
        config.u32_or("days_before", 30)?,
        config.u32_or("days_after", 30)?,
    )?;
    let (before_records, after_records) = window_records(&records, &window);
    if before_records.is_empty() {
        bail!(
            "the before window is empty: no accident records in [{}, {})",
            window.before_start(),
            window.change_date
        );
    }
    if after_records.is_empty() {
        bail!(
            "the after window is empty: no accident records in [{}, {})",
            window.change_date,
            window.after_end()
        );
    }

    let coords: Vec<(f64, f64)> = before_records
        .iter()
        .chain(after_records.iter())
        .map(|r| (r.latitude, r.longitude))
        .collect();
    let spec = resolve_grid(config, &coords)?;
    let before = project_records(&before_records, &spec)?;
    let after = project_records(&after_records, &spec)?;

    // One pooled bandwidth for both windows, so the ISE measures location
    // shift rather than bandwidth mismatch.
    let mut pooled = before.clone();
    pooled.extend_from_slice(&after);
    let bandwidth_m = select_bandwidth(&pooled, config.bandwidth_rule()?)?;

    Ok(ComparisonInputs {
        window,
        spec,
        bandwidth_m,
        before,
        after,
    })
}

fn ise_csv(result: &IseResult, echo: &BTreeMap<String, String>) -> String {
    let mut out = echo_comments(echo);
    out.push_str("ise,p_value,n_permutations,seed,n_before,n_after,bandwidth_m\n");
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        result.ise,
        result.p_value,
        result.n_permutations,
        result.seed,
        result.n_before,
        result.n_after,
        result.bandwidth_m
    )
    .unwrap();
    out
}

fn null_distribution_csv(result: &IseResult, echo: &BTreeMap<String, String>) -> String {
    let mut out = echo_comments(echo);
    out.push_str("replicate,ise\n");
    for (i, v) in result.null_ise.iter().enumerate() {
        writeln!(out, "{i},{v}").unwrap();
    }
    out
}

fn run_permutation(config: &Config, inputs: &ComparisonInputs) -> Result<IseResult> {
    Ok(permutation_test(
        &inputs.before,
        &inputs.after,
        &inputs.spec,
        inputs.bandwidth_m,
        config.usize_or("n_permutations", 199)?,
        config.u64_or("seed", 0)?,
    )?)
}

fn require_change_date(config: &Config) -> Result<NaiveDate> {
    config
        .date("change_date")?
        .ok_or_else(|| anyhow!("a change_date is required (set change_date or run `pipeline`)"))
}

pub fn run_test(config: &Config) -> Result<i32> {
    let out_dir = ensure_out_dir(config)?;
    let inputs = prepare_comparison(config, require_change_date(config)?)?;
    let result = run_permutation(config, &inputs)?;
    write_text(&out_dir.join("ise.csv"), &ise_csv(&result, &config.echo()))?;
    if config.bool_or("null_distribution", false)? {
        write_text(
            &out_dir.join("null_distribution.csv"),
            &null_distribution_csv(&result, &config.echo()),
        )?;
    }
    println!(
        "ise = {}, p = {} ({} permutations, seed {})",
        result.ise, result.p_value, result.n_permutations, result.seed
    );
    Ok(EXIT_OK)
}

pub fn run_hotspots(config: &Config) -> Result<i32> {
    let out_dir = ensure_out_dir(config)?;
    let asc = config.require_existing_path("grid")?;
    let sidecar = asc.with_extension("meta");
    if !sidecar.exists() {
        bail!("sidecar metadata not found: {}", sidecar.display());
    }
    let grid = esri::read_esri_ascii(&asc, &sidecar)?;
    let q = config.f64_or("quantile_q", 0.95)?;
    let set = extract_hotspots(&grid, q)?;
    let doc = hotspots_to_geojson(&set, &config.echo());
    write_text(
        &out_dir.join("hotspots.geojson"),
        &serde_json::to_string_pretty(&doc)?,
    )?;
    println!(
        "{} hotspot region(s) at quantile {q} (threshold {})",
        set.regions.len(),
        set.threshold_density
    );
    Ok(EXIT_OK)
}

fn shift_summary_csv(report: &ShiftReport, echo: &BTreeMap<String, String>) -> String {
    let mut out = echo_comments(echo);
    out.push_str("jaccard,centroid_displacement_m,n_before_regions,n_after_regions\n");
    let displacement = report
        .centroid_displacement_m
        .map(|d| d.to_string())
        .unwrap_or_default();
    writeln!(
        out,
        "{},{displacement},{},{}",
        report.jaccard, report.n_before, report.n_after
    )
    .unwrap();
    out
}

fn shift_pairs_csv(report: &ShiftReport, echo: &BTreeMap<String, String>) -> String {
    let mut out = echo_comments(echo);
    out.push_str("before_index,after_index,displacement_m\n");
    for pair in &report.matches {
        writeln!(
            out,
            "{},{},{}",
            pair.before_index, pair.after_index, pair.displacement_m
        )
        .unwrap();
    }
    out
}

fn shift_report_text(report: &ShiftReport) -> String {
    let mut out = String::new();
    writeln!(out, "Hotspot shift report").unwrap();
    writeln!(out, "====================").unwrap();
    writeln!(
        out,
        "regions: {} before, {} after",
        report.n_before, report.n_after
    )
    .unwrap();
    writeln!(out, "jaccard overlap: {}", report.jaccard).unwrap();
    match report.centroid_displacement_m {
        Some(d) => writeln!(out, "centroid displacement: {d:.1} m").unwrap(),
        None => writeln!(out, "centroid displacement: undefined (empty hotspot set)").unwrap(),
    }
    if !report.matches.is_empty() {
        writeln!(out, "matched regions (greedy, by centroid distance):").unwrap();
        for pair in &report.matches {
            writeln!(
                out,
                "  before #{} -> after #{}: {:.1} m",
                pair.before_index, pair.after_index, pair.displacement_m
            )
            .unwrap();
        }
    }
    if !report.unmatched_before.is_empty() {
        writeln!(out, "unmatched before regions: {:?}", report.unmatched_before).unwrap();
    }
    if !report.unmatched_after.is_empty() {
        writeln!(out, "unmatched after regions: {:?}", report.unmatched_after).unwrap();
    }
    out
}

fn default_color(highway: &str) -> &'static str {
    match highway {
        "motorway" | "motorway_link" => "#e892a2",
        "trunk" | "trunk_link" => "#f9b29c",
        "primary" | "primary_link" => "#fcd6a4",
        "secondary" | "secondary_link" => "#f7fabf",
        "tertiary" | "tertiary_link" => "#c8facc",
        "residential" => "#b0b0b0",
        "unclassified" => "#d0d0d0",
        "service" => "#dddddd",
        "footway" | "path" | "pedestrian" | "steps" => "#fa8072",
        "cycleway" => "#7d9ee0",
        _ => "#888888",
    }
}

fn load_color_table(config: &Config) -> Result<BTreeMap<String, String>> {
    let mut table = BTreeMap::new();
    if let Some(path) = config.path("colors") {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("failed to read color table {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!(
                    "color table {} line {}: expected type=color",
                    path.display(),
                    lineno + 1
                );
            };
            table.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(table)
}

fn roads_geojson(
    segments: &[RoadSegment],
    colors: &BTreeMap<String, String>,
    echo: &BTreeMap<String, String>,
) -> serde_json::Value {
    let features: Vec<serde_json::Value> = segments
        .iter()
        .map(|segment| {
            let color = colors
                .get(&segment.highway_type)
                .map(String::as_str)
                .unwrap_or_else(|| default_color(&segment.highway_type));
            serde_json::json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": segment
                        .geometry
                        .iter()
                        .map(|&(lat, lon)| vec![lon, lat])
                        .collect::<Vec<_>>(),
                },
                "properties": {
                    "way_id": segment.way_id,
                    "highway": segment.highway_type,
                    "color": color,
                }
            })
        })
        .collect();
    serde_json::json!({
        "type": "FeatureCollection",
        "features": features,
        "metadata": { "config": echo },
    })
}

fn road_stats_csv(segments: &[RoadSegment], echo: &BTreeMap<String, String>) -> String {
    let stats = type_stats(segments);
    let mut out = echo_comments(echo);
    out.push_str("highway_type,segment_count,count_percent,normalized_percent,total_length_m\n");
    for row in &stats.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.highway_type,
            row.segment_count,
            row.count_percent,
            row.normalized_percent,
            row.total_length_m
        )
        .unwrap();
    }
    out
}

fn run_roadnet_on_region(
    config: &Config,
    out_dir: &Path,
    region: &RegionPolygons,
) -> Result<usize> {
    let osm_path = config.require_existing_path("osm")?;
    let (segments, rejections) = parse_osm(&osm_path)?;
    if !rejections.is_empty() {
        eprintln!(
            "note: {} way(s) rejected while parsing {}",
            rejections.len(),
            osm_path.display()
        );
    }
    let clipped = clip_to_region(&segments, region);
    write_text(
        &out_dir.join("road_stats.csv"),
        &road_stats_csv(&clipped, &config.echo()),
    )?;
    let colors = load_color_table(config)?;
    write_text(
        &out_dir.join("roads.geojson"),
        &serde_json::to_string_pretty(&roads_geojson(&clipped, &colors, &config.echo()))?,
    )?;
    Ok(clipped.len())
}

pub fn run_roadnet(config: &Config) -> Result<i32> {
    let out_dir = ensure_out_dir(config)?;
    let region_path = config.require_existing_path("region")?;
    let region_text = std::fs::read_to_string(&region_path)
        .with_context(|| format!("failed to read region {}", region_path.display()))?;
    let region = RegionPolygons::from_str(&region_text)?;
    let kept = run_roadnet_on_region(config, &out_dir, &region)?;
    println!("road stats written for {kept} clipped segment(s)");
    Ok(EXIT_OK)
}

pub fn run_pipeline(config: &Config) -> Result<i32> {
    let out_dir = ensure_out_dir(config)?;

    // Stage 1: change point (skipped when an explicit change_date is given).
    let change_date = match config.date("change_date")? {
        Some(date) => {
            println!("using explicit change date {date}");
            date
        }
        None => {
            let series = load_series(config)?;
            let (seg, _) = detect(config, &series)?;
            write_text(
                &out_dir.join("changepoints.csv"),
                &changepoint_csv(&series, &seg, &config.echo()),
            )?;
            write_text(
                &out_dir.join("changepoint_summary.txt"),
                &changepoint_summary(&series, &seg),
            )?;
            if seg.breakpoints.is_empty() {
                eprintln!("no change point detected; pipeline cannot continue");
                return Ok(EXIT_NO_CHANGE_POINT);
            }
            let date = changepoint::change_date(&series, &seg)?;
            println!("detected change date {date}");
            date
        }
    };

    // Stage 2: windows, shared grid, shared bandwidth.
    let inputs = prepare_comparison(config, change_date)?;
    println!(
        "windows: [{}, {}) / [{}, {}), {} before / {} after records, bandwidth {:.1} m, grid {}x{}",
        inputs.window.before_start(),
        inputs.window.change_date,
        inputs.window.change_date,
        inputs.window.after_end(),
        inputs.before.len(),
        inputs.after.len(),
        inputs.bandwidth_m,
        inputs.spec.nx,
        inputs.spec.ny
    );

    // Stage 3: density surfaces.
    let kernel = config.kernel()?;
    let grid_before = kde(&inputs.before, &inputs.spec, inputs.bandwidth_m, kernel)?;
    let grid_after = kde(&inputs.after, &inputs.spec, inputs.bandwidth_m, kernel)?;
    write_grid(&grid_before, &out_dir, "before", &config.echo())?;
    write_grid(&grid_after, &out_dir, "after", &config.echo())?;

    // Stage 4: permutation test.
    let result = run_permutation(config, &inputs)?;
    write_text(&out_dir.join("ise.csv"), &ise_csv(&result, &config.echo()))?;
    if config.bool_or("null_distribution", false)? {
        write_text(
            &out_dir.join("null_distribution.csv"),
            &null_distribution_csv(&result, &config.echo()),
        )?;
    }
    println!("ise = {}, p = {}", result.ise, result.p_value);

    // Stage 5: hotspots and shift metrics.
    let q = config.f64_or("quantile_q", 0.95)?;
    let set_before = extract_hotspots(&grid_before, q)?;
    let set_after = extract_hotspots(&grid_after, q)?;
    let doc_after = hotspots_to_geojson(&set_after, &config.echo());
    write_text(
        &out_dir.join("hotspots_before.geojson"),
        &serde_json::to_string_pretty(&hotspots_to_geojson(&set_before, &config.echo()))?,
    )?;
    write_text(
        &out_dir.join("hotspots_after.geojson"),
        &serde_json::to_string_pretty(&doc_after)?,
    )?;

    let report = shift_metrics(&set_before, &set_after)?;
    write_text(
        &out_dir.join("shift_summary.csv"),
        &shift_summary_csv(&report, &config.echo()),
    )?;
    write_text(
        &out_dir.join("shift_pairs.csv"),
        &shift_pairs_csv(&report, &config.echo()),
    )?;
    write_text(&out_dir.join("shift_report.txt"), &shift_report_text(&report))?;
    println!(
        "hotspots: {} before, {} after, jaccard {}",
        report.n_before, report.n_after, report.jaccard
    );

    // Stage 6: road network composition of the after-period hotspots (or an
    // explicit region), when an OSM extract is configured.
    if config.get("osm").is_some() {
        let region = match config.path("region") {
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("failed to read region {}", path.display()))?;
                Some(RegionPolygons::from_str(&text)?)
            }
            None if !set_after.regions.is_empty() => {
                Some(RegionPolygons::from_geojson(&doc_after)?)
            }
            None => {
                eprintln!("no after-period hotspots; skipping road network stage");
                None
            }
        };
        if let Some(region) = region {
            let kept = run_roadnet_on_region(config, &out_dir, &region)?;
            println!("road stats written for {kept} clipped segment(s)");
        }
    }

    Ok(EXIT_OK)
}
