//! Every example under examples/ runs to completion.

#[allow(dead_code)]
mod blowup_monitor {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/blowup_monitor.rs"
    ));
}

#[test]
fn blowup_monitor_runs() {
    blowup_monitor::run_example().expect("blowup_monitor example should run");
}

#[allow(dead_code)]
mod branching_mechanism {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/branching_mechanism.rs"
    ));
}

#[test]
fn branching_mechanism_runs() {
    branching_mechanism::run_example().expect("branching_mechanism example should run");
}

#[allow(dead_code)]
mod cli_scenarios {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/cli_scenarios.rs"
    ));
}

#[test]
fn cli_scenarios_runs() {
    cli_scenarios::run_example().expect("cli_scenarios example should run");
}

#[allow(dead_code)]
mod comparison_stability {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/comparison_stability.rs"
    ));
}

#[test]
fn comparison_stability_runs() {
    comparison_stability::run_example().expect("comparison_stability example should run");
}

#[allow(dead_code)]
mod coshsinh {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/coshsinh.rs"));
}

#[test]
fn coshsinh_runs() {
    coshsinh::run_example().expect("coshsinh example should run");
}

#[allow(dead_code)]
mod csv_round_trip {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/csv_round_trip.rs"
    ));
}

#[test]
fn csv_round_trip_runs() {
    csv_round_trip::run_example().expect("csv_round_trip example should run");
}

#[allow(dead_code)]
mod epsilon_stepper {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/epsilon_stepper.rs"
    ));
}

#[test]
fn epsilon_stepper_runs() {
    epsilon_stepper::run_example().expect("epsilon_stepper example should run");
}

#[allow(dead_code)]
mod feynman_kac_modes {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/feynman_kac_modes.rs"
    ));
}

#[test]
fn feynman_kac_modes_runs() {
    feynman_kac_modes::run_example().expect("feynman_kac_modes example should run");
}

#[allow(dead_code)]
mod global_1d {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/global_1d.rs"
    ));
}

#[test]
fn global_1d_runs() {
    global_1d::run_example().expect("global_1d example should run");
}

#[allow(dead_code)]
mod gronwall {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/gronwall.rs"));
}

#[test]
fn gronwall_runs() {
    gronwall::run_example().expect("gronwall example should run");
}

#[allow(dead_code)]
mod growth_bounds {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/growth_bounds.rs"
    ));
}

#[test]
fn growth_bounds_runs() {
    growth_bounds::run_example().expect("growth_bounds example should run");
}

#[allow(dead_code)]
mod local_horizon {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/local_horizon.rs"
    ));
}

#[test]
fn local_horizon_runs() {
    local_horizon::run_example().expect("local_horizon example should run");
}

#[allow(dead_code)]
mod markov_paths {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/markov_paths.rs"
    ));
}

#[test]
fn markov_paths_runs() {
    markov_paths::run_example().expect("markov_paths example should run");
}

#[allow(dead_code)]
mod riccati_picard {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/riccati_picard.rs"
    ));
}

#[test]
fn riccati_picard_runs() {
    riccati_picard::run_example().expect("riccati_picard example should run");
}

#[allow(dead_code)]
mod sigma_propagator {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/sigma_propagator.rs"
    ));
}

#[test]
fn sigma_propagator_runs() {
    sigma_propagator::run_example().expect("sigma_propagator example should run");
}

#[allow(dead_code)]
mod time_grid_density {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/time_grid_density.rs"
    ));
}

#[test]
fn time_grid_density_runs() {
    time_grid_density::run_example().expect("time_grid_density example should run");
}
