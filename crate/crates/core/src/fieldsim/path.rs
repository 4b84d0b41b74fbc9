use super::SimError;
use crate::PlanarPoint;

/// Boustrophedon waypoints covering the rectangle `[min, max]` inset by
/// `margin_m`. Rows run parallel to the longer side, start at the lower-left
/// and alternate direction; each row contributes its two end points. Rows are
/// centred across the short side. An extent narrower than the spacing gets a
/// single row.
pub fn plan_serpentine(
    min: PlanarPoint,
    max: PlanarPoint,
    row_spacing_m: f64,
    margin_m: f64,
) -> Result<Vec<PlanarPoint>, SimError> {
    if !(row_spacing_m > 0.0) || !(margin_m >= 0.0) {
        return Err(SimError::Plan("row spacing must be positive and margin non-negative".into()));
    }
    let (x0, x1) = (min.x_m + margin_m, max.x_m - margin_m);
    let (y0, y1) = (min.y_m + margin_m, max.y_m - margin_m);
    if !(x1 > x0) || !(y1 >= y0) || !(y1 > y0 || x1 > x0) {
        return Err(SimError::Plan("margin leaves no room for a row".into()));
    }
    let along_x = (x1 - x0) >= (y1 - y0);
    let (a0, a1, c0, c1) = if along_x { (x0, x1, y0, y1) } else { (y0, y1, x0, x1) };
    let across = c1 - c0;
    let n_rows = (across / row_spacing_m).floor() as usize + 1;
    let start = c0 + (across - (n_rows - 1) as f64 * row_spacing_m) / 2.0;
    let mut out = Vec::with_capacity(2 * n_rows);
    for k in 0..n_rows {
        let c = start + k as f64 * row_spacing_m;
        let (from, to) = if k % 2 == 0 { (a0, a1) } else { (a1, a0) };
        for a in [from, to] {
            out.push(if along_x { PlanarPoint::new(a, c) } else { PlanarPoint::new(c, a) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_plan() {
        let wp = plan_serpentine(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(50.0, 30.0), 5.0, 1.0).unwrap();
        assert_eq!(wp.len(), 12);
        for (k, pair) in wp.chunks(2).enumerate() {
            assert_eq!(pair[0].y_m, pair[1].y_m);
            let eastward = pair[1].x_m > pair[0].x_m;
            assert_eq!(eastward, k % 2 == 0, "row {k}");
            assert_eq!((pair[0].x_m - pair[1].x_m).abs(), 48.0);
        }
        let max_step = 48.0 + 5.0;
        assert!(wp.windows(2).all(|w| w[0].distance(&w[1]) <= max_step));
    }

    #[test]
    fn narrow_extent_single_row() {
        let wp = plan_serpentine(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(20.0, 3.0), 5.0, 0.5).unwrap();
        assert_eq!(wp, vec![PlanarPoint::new(0.5, 1.5), PlanarPoint::new(19.5, 1.5)]);
    }

    #[test]
    fn tall_extent_runs_north() {
        let wp = plan_serpentine(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(10.0, 40.0), 4.0, 1.0).unwrap();
        assert!(wp.chunks(2).all(|p| p[0].x_m == p[1].x_m));
        assert_eq!(wp.len(), 2 * 3);
    }

    #[test]
    fn bad_inputs() {
        let (a, b) = (PlanarPoint::new(0.0, 0.0), PlanarPoint::new(10.0, 10.0));
        assert!(plan_serpentine(a, b, 0.0, 1.0).is_err());
        assert!(plan_serpentine(a, b, 1.0, 6.0).is_err());
    }
}
