use ecamap::fieldsim::{generate_field, SimScenario, Simulation, SurveyMode};
use ecamap::stats::{mean, sample_sd};
use ecamap::{GridSpec, PlanarPoint, VariogramModel};

#[test]
fn robot_readings_carry_the_injected_bias() {
    let sim = Simulation::new(SimScenario { seed: 11, ..SimScenario::default() }).unwrap();
    let hand = sim.survey(SurveyMode::Handheld).unwrap();
    let robot = sim.survey(SurveyMode::Robot).unwrap();
    assert!(robot.survey.len() >= 500, "{} robot samples", robot.survey.len());
    assert!(robot.bias_msm > 0.0);
    let expected = hand.survey.mean_eca().unwrap() + robot.bias_msm;
    let got = robot.survey.mean_eca().unwrap();
    assert!((got - expected).abs() <= 0.02 * expected, "robot mean {got}, expected {expected}");
}

#[test]
fn short_range_field_reaches_its_sill() {
    let grid = GridSpec::new(PlanarPoint::new(0.0, 0.0), 1.0, 64, 64).unwrap();
    let model = VariogramModel::new(0.0, 5.0, 2.0).unwrap();
    let truth = generate_field(grid, model, 20.0, 7).unwrap();
    let var = sample_sd(&truth.values).unwrap().powi(2);
    assert!((var / 5.0 - 1.0).abs() <= 0.15, "sample variance {var}");
    let m = mean(&truth.values).unwrap();
    assert!((m - 20.0).abs() < 0.5, "mean {m}");
}
