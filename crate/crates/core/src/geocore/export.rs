//! ESRI ASCII grid and GeoJSON point exports.

use serde_json::{json, Value};

use super::{GeoError, GeoPoint, GridSpec, PlanarPoint, Raster};
use crate::Scalar;

pub const NODATA_VALUE: f64 = -9999.0;

/// Formats `v` with six significant digits, `%g` style: fixed notation for
/// decimal exponents in [-5, 6), scientific otherwise, trailing zeros trimmed.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".to_string()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

/// Serializes the value layer as an ESRI ASCII grid, top row first.
pub fn write_ascii_grid<T: Scalar>(raster: &Raster<T>) -> String {
    let spec = raster.spec();
    let mut out = String::new();
    out.push_str(&format!("ncols {}\n", spec.n_cols));
    out.push_str(&format!("nrows {}\n", spec.n_rows));
    out.push_str(&format!("xllcorner {}\n", spec.origin.x_m.to_f64_lossy()));
    out.push_str(&format!("yllcorner {}\n", spec.origin.y_m.to_f64_lossy()));
    out.push_str(&format!("cellsize {}\n", spec.cell_size_m.to_f64_lossy()));
    out.push_str(&format!("NODATA_value {}\n", NODATA_VALUE));
    for row in (0..spec.n_rows).rev() {
        let line: Vec<String> = (0..spec.n_cols)
            .map(|col| match raster.values()[row * spec.n_cols + col] {
                Some(v) => format_sig6(v.to_f64_lossy()),
                None => format!("{}", NODATA_VALUE),
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses an ESRI ASCII grid written with a lower-left corner origin.
pub fn read_ascii_grid(text: &str) -> Result<Raster<f64>, GeoError> {
    let err = |m: String| GeoError::AsciiGrid(m);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut cell = None;
    let mut nodata = NODATA_VALUE;
    for _ in 0..6 {
        let line = lines.next().ok_or_else(|| err("truncated header".into()))?;
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().to_ascii_lowercase();
        let val = parts.next().ok_or_else(|| err(format!("header key {key} has no value")))?;
        let num: f64 = val.parse().map_err(|_| err(format!("bad header value {val:?}")))?;
        match key.as_str() {
            "ncols" => ncols = Some(num as usize),
            "nrows" => nrows = Some(num as usize),
            "xllcorner" => xll = Some(num),
            "yllcorner" => yll = Some(num),
            "cellsize" => cell = Some(num),
            "nodata_value" => nodata = num,
            other => return Err(err(format!("unsupported header key {other:?}"))),
        }
    }
    let (ncols, nrows, xll, yll, cell) = match (ncols, nrows, xll, yll, cell) {
        (Some(a), Some(b), Some(c), Some(d), Some(e)) => (a, b, c, d, e),
        _ => return Err(err("missing header key".into())),
    };
    let spec = GridSpec::new(PlanarPoint::new(xll, yll), cell, ncols, nrows)?;
    let mut values = vec![None; spec.n_cells()];
    let mut rows_seen = 0;
    for (top_row, line) in lines.enumerate() {
        if top_row >= nrows {
            return Err(err("more data rows than nrows".into()));
        }
        let row = nrows - 1 - top_row;
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != ncols {
            return Err(err(format!("data row {top_row} has {} values, expected {ncols}", cells.len())));
        }
        for (col, tok) in cells.iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| err(format!("bad cell value {tok:?}")))?;
            values[row * ncols + col] = if v == nodata { None } else { Some(v) };
        }
        rows_seen += 1;
    }
    if rows_seen != nrows {
        return Err(err(format!("expected {nrows} data rows, found {rows_seen}")));
    }
    Raster::new(spec, values, None)
}

/// One GeoJSON point feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoJsonPoint {
    pub position: GeoPoint,
    pub eca_msm: f64,
    pub variance: Option<f64>,
}

/// FeatureCollection of points with `{eca_msm, variance}` properties.
pub fn points_geojson(points: &[GeoJsonPoint]) -> Value {
    let features: Vec<Value> = points
        .iter()
        .map(|p| {
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [p.position.longitude_deg, p.position.latitude_deg],
                },
                "properties": {
                    "eca_msm": p.eca_msm,
                    "variance": p.variance,
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}
