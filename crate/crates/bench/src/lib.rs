//! Fixtures shared by the benchmarks.

use ecosched_core::experiment::{ExperimentSetup, Protocol};
use ecosched_core::{
    ClusterSpec, ConfigId, Engine, Intensity, Phase, ScenarioConfig, SimulationConfig,
};

/// Testbed engine after `seconds` of background-only activity.
pub fn warmed_engine(seconds: f64) -> Engine {
    let mut engine = Engine::new(&ClusterSpec::testbed(), SimulationConfig::default())
        .expect("testbed is valid");
    engine
        .run_phase(Phase::Warmup, seconds)
        .expect("warm-up runs");
    engine
}

/// C2 at moderate intensity with every phase shortened to `phase_s`.
pub fn short_setup(phase_s: f64) -> ExperimentSetup {
    let mut setup =
        ExperimentSetup::new(ScenarioConfig::standard(ConfigId::C2, Intensity::Moderate));
    setup.protocol = Protocol {
        warmup_s: phase_s,
        phase_s,
        cooldown_s: 0.0,
        window_s: phase_s,
        ..Protocol::default()
    };
    setup
}
