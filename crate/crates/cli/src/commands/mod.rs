pub mod cluster;
pub mod evaluate;
pub mod forecast;
pub mod spectra;
pub mod synth;

use serde::{Deserialize, Serialize};

use koopman_core::data::{LoadPanel, NormScope, NormStats};
use koopman_core::{Error, Result};

/// Normalization statistics keyed by station id, as written next to results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub scope: NormScope,
    pub station_ids: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl StatsRecord {
    pub fn new(panel: &LoadPanel, stats: &NormStats, scope: NormScope) -> Self {
        Self {
            scope,
            station_ids: panel.station_ids().to_vec(),
            min: stats.min.clone(),
            max: stats.max.clone(),
        }
    }

    pub fn stats(&self) -> Result<NormStats> {
        let d = self.station_ids.len();
        if self.min.len() != d || self.max.len() != d {
            return Err(Error::Format(format!(
                "statistics list {} stations but {} minima and {} maxima",
                d,
                self.min.len(),
                self.max.len()
            )));
        }
        Ok(NormStats {
            min: self.min.clone(),
            max: self.max.clone(),
        })
    }
}

/// Compares two station lists position by position and names every id that
/// is out of place, missing or unexpected.
pub fn station_mismatch(expected: &[String], found: &[String]) -> Option<Vec<String>> {
    if expected == found {
        return None;
    }
    let mut bad: Vec<String> = Vec::new();
    let mut note = |id: &String| {
        if !bad.contains(id) {
            bad.push(id.clone());
        }
    };
    for (a, b) in expected.iter().zip(found) {
        if a != b {
            note(a);
            note(b);
        }
    }
    for id in expected.iter().skip(found.len()).chain(found.iter().skip(expected.len())) {
        note(id);
    }
    Some(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mismatch_lists_swapped_and_missing_ids() {
        assert_eq!(station_mismatch(&ids(&["a", "b"]), &ids(&["a", "b"])), None);
        assert_eq!(
            station_mismatch(&ids(&["a", "b", "c"]), &ids(&["a", "c", "b"])),
            Some(ids(&["b", "c"]))
        );
        assert_eq!(station_mismatch(&ids(&["a", "b"]), &ids(&["a"])), Some(ids(&["b"])));
    }
}
