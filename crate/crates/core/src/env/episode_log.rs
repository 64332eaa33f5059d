use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Action, EnvError, Observation};

/// One line of an episode log: the observation the action was taken in,
/// and the lever state that resulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub achieved_goal: f64,
    pub desired_goal: f64,
    pub is_success: bool,
}

pub fn write_episode_log<W: Write>(mut out: W, steps: &[StepRecord]) -> Result<(), EnvError> {
    for s in steps {
        serde_json::to_writer(&mut out, s).map_err(|e| EnvError::Log(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_episode_log<R: BufRead>(input: R) -> Result<Vec<StepRecord>, EnvError> {
    let mut steps = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StepRecord =
            serde_json::from_str(&line).map_err(|e| EnvError::Log(format!("line {}: {e}", n + 1)))?;
        steps.push(record);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let rec = StepRecord {
            t: 3,
            observation: std::array::from_fn(|i| i as f64 * 0.1 + 1e-17),
            action: [0.1, -0.2, 0.3, -1.0],
            reward: -1.0,
            achieved_goal: 0.123456789012345,
            desired_goal: -0.4,
            is_success: false,
        };
        let mut buf = Vec::new();
        write_episode_log(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        let back = read_episode_log(&buf[..]).unwrap();
        assert_eq!(back, vec![rec.clone(), rec]);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let err = read_episode_log(&b"{\"t\":0}\n"[..]).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
