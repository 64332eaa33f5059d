//! Fixed evaluation scenarios.
//!
//! A scenario may pin the lever angles directly or give only the start-goal
//! gap (solved as a pair centred on zero), and may pin the lever base or give
//! only the initial end-effector-to-handle distance (solved by scanning the
//! lever base distance straight ahead of the arm).

use std::path::Path;

use serde::{Deserialize, Serialize};

use lever_core::env::{world_from_scenario, EnvConfig, Scenario};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub lever_start: Option<f64>,
    pub goal: Option<f64>,
    /// |start - goal|, used when the angles are not given.
    pub gap: Option<f64>,
    pub lever_base: Option<[f64; 3]>,
    /// Target end-effector-to-handle distance at the start, used when the
    /// lever base is not given.
    pub initial_ee_distance: Option<f64>,
    #[serde(default)]
    pub grasp_start: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub scenario: Vec<ScenarioSpec>,
}

fn ee_handle_distance(config: &EnvConfig, scenario: &Scenario) -> Option<f64> {
    let world = world_from_scenario(config, scenario).ok()?;
    let [ex, ez] = world.ee_plane(config);
    let [hx, hz] = world.handle_plane(config);
    Some((ex - hx).hypot(ez - hz))
}

impl ScenarioSpec {
    pub fn resolve(&self, config: &EnvConfig) -> Result<Scenario, CliError> {
        let (lever_start, goal) = match (self.lever_start, self.goal, self.gap) {
            (Some(s), Some(g), _) => (s, g),
            (None, None, Some(gap)) => {
                let [lo, hi] = config.goal_range;
                if !(gap >= 0.0) || gap > hi - lo {
                    return Err(CliError::Usage(format!("gap {gap} does not fit the goal range [{lo}, {hi}]")));
                }
                let mid = 0.5 * (lo + hi);
                (mid + gap / 2.0, mid - gap / 2.0)
            }
            _ => {
                return Err(CliError::Usage(
                    "a scenario needs both lever_start and goal, or gap alone".into(),
                ))
            }
        };
        let lever_base = match (self.lever_base, self.initial_ee_distance) {
            (Some(b), _) => b,
            (None, target) => {
                let [dlo, dhi] = config.lever_base_range;
                let candidate = |d: f64| Scenario { lever_start, goal, lever_base: [d, 0.0, 0.0], grasp_start: self.grasp_start };
                match target {
                    None => [0.5 * (dlo + dhi), 0.0, 0.0],
                    Some(target) => {
                        const STEPS: usize = 2000;
                        let best = (0..=STEPS)
                            .map(|i| dlo + (dhi - dlo) * i as f64 / STEPS as f64)
                            .filter_map(|d| ee_handle_distance(config, &candidate(d)).map(|dist| (d, (dist - target).abs())))
                            .min_by(|a, b| a.1.total_cmp(&b.1))
                            .ok_or_else(|| CliError::Usage("no valid lever placement".into()))?;
                        [best.0, 0.0, 0.0]
                    }
                }
            }
        };
        let scenario = Scenario { lever_start, goal, lever_base, grasp_start: self.grasp_start };
        world_from_scenario(config, &scenario).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(scenario)
    }
}

pub fn load_scenarios(path: &Path, config: &EnvConfig) -> Result<Vec<Scenario>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read scenarios {}: {e}", path.display())))?;
    let file: ScenarioFile =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if file.scenario.is_empty() {
        return Err(CliError::Usage(format!("{}: no [[scenario]] entries", path.display())));
    }
    file.scenario.iter().map(|s| s.resolve(config)).collect()
}
