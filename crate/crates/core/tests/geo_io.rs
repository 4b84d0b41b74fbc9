use ecamap::geocore::{project_to_plane, read_ascii_grid, unproject, write_ascii_grid};
use ecamap::ingest::{sync_streams, PoseSample};
use ecamap::{GeoPoint, GridSpec, PlanarPoint, Raster, SurveySource};
use proptest::prelude::*;

/// Great-circle distance on a 6,371 km sphere, written out independently.
fn haversine_oracle(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6_371_000.0 * a.sqrt().asin()
}

#[test]
fn projection_matches_great_circle_distance_at_field_scale() {
    let datum = GeoPoint::new(33.973472, -117.319528).unwrap();
    for (dn, de) in [(0.0, 100.0), (100.0, 0.0), (-250.0, 400.0), (700.0, -700.0), (1.0, 1.0)] {
        let lat = datum.latitude_deg + (dn / 6_371_000.0f64).to_degrees();
        let lon = datum.longitude_deg + (de / (6_371_000.0 * datum.latitude_deg.to_radians().cos())).to_degrees();
        let p = project_to_plane(&datum, &GeoPoint::new(lat, lon).unwrap()).unwrap();
        let planar = p.x_m.hypot(p.y_m);
        let oracle = haversine_oracle(datum.latitude_deg, datum.longitude_deg, lat, lon);
        assert!((planar - oracle).abs() <= 1e-3 * oracle, "{dn},{de}: {planar} vs {oracle}");
    }
}

proptest! {
    #[test]
    fn projection_round_trips(dx in -2000.0f64..2000.0, dy in -2000.0f64..2000.0, lat0 in -60.0f64..60.0) {
        let datum = GeoPoint::new(lat0, 10.0).unwrap();
        let g = unproject(&datum, &PlanarPoint::new(dx, dy)).unwrap();
        let back = project_to_plane(&datum, &g).unwrap();
        prop_assert!((back.x_m - dx).abs() < 1e-6 && (back.y_m - dy).abs() < 1e-6);
    }

    #[test]
    fn ascii_grid_export_is_a_fixed_point(
        n_cols in 1usize..8,
        n_rows in 1usize..8,
        cell in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0]),
        x0 in -500.0f64..500.0,
        y0 in -500.0f64..500.0,
        seed_values in prop::collection::vec(prop::option::weighted(0.85, -1e7f64..1e7), 64),
    ) {
        let spec = GridSpec::new(PlanarPoint::new(x0, y0), cell, n_cols, n_rows).unwrap();
        let values = seed_values[..n_cols * n_rows].to_vec();
        let raster = Raster::new(spec, values, None).unwrap();
        let first = write_ascii_grid(&raster);
        let reread = read_ascii_grid(&first).unwrap();
        prop_assert_eq!(reread.n_present(), raster.n_present());
        prop_assert_eq!(write_ascii_grid(&reread), first);
    }

    #[test]
    fn sync_keeps_or_drops_every_sample(
        gaps in prop::collection::vec(0.1f64..3.0, 1..40),
        eca_times in prop::collection::vec(-5.0f64..80.0, 0..60),
        max_gap in 0.05f64..2.0,
    ) {
        let mut t = 0.0;
        let poses: Vec<PoseSample> = gaps
            .iter()
            .enumerate()
            .map(|(i, g)| {
                t += g;
                let position = GeoPoint::new(33.97 + i as f64 * 1e-5, -117.32).unwrap();
                PoseSample { timestamp: t, position, heading_rad: None }
            })
            .collect();
        let mut times = eca_times.clone();
        times.sort_by(f64::total_cmp);
        let eca: Vec<(f64, f64)> = times.iter().map(|&t| (t, 20.0)).collect();
        match sync_streams(&eca, &poses, max_gap, SurveySource::Robot) {
            Ok((survey, dropped)) => prop_assert_eq!(survey.len() + dropped, eca.len()),
            // everything dropped leaves an empty survey, which is rejected
            Err(_) => prop_assert!(eca.iter().all(|&(t, _)| poses.iter().all(|p| (p.timestamp - t).abs() > max_gap))),
        }
    }
}
