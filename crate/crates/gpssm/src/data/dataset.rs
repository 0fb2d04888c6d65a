//! Observed time series with optional controls, plus normalisation.

use crate::data::csv::read_csv;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    /// T x E observations.
    pub observations: Mat<f64>,
    /// T x Dc controls; the control on row `t` acts on the step `t -> t+1`.
    pub controls: Option<Mat<f64>>,
    pub observation_names: Vec<String>,
    pub control_names: Vec<String>,
}

/// Per-column location and scale, for mapping in and out of model space.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ColumnStats {
    /// Population mean and standard deviation per column.
    pub fn fit(m: &Mat<f64>, names: &[String]) -> Result<ColumnStats> {
        let t = m.rows();
        if t == 0 {
            return Err(Error::SchemaMismatch { message: "cannot normalise an empty table".into() });
        }
        let n = t as f64;
        let mut means = Vec::with_capacity(m.cols());
        let mut sds = Vec::with_capacity(m.cols());
        for j in 0..m.cols() {
            let mean: f64 = (0..t).map(|i| m.at(i, j)).sum::<f64>() / n;
            let var: f64 = (0..t).map(|i| (m.at(i, j) - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd < 1e-12 {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
                return Err(Error::DegenerateColumn { name });
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok(ColumnStats { means, sds })
    }

    pub fn apply(&self, m: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(m.rows(), m.cols(), 0.0, |i, j| (m.at(i, j) - self.means[j]) / self.sds[j])
    }

    pub fn invert(&self, m: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(m.rows(), m.cols(), 0.0, |i, j| m.at(i, j) * self.sds[j] + self.means[j])
    }
}

impl TimeSeriesDataset {
    pub fn t_len(&self) -> usize {
        self.observations.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.cols()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.as_ref().map_or(0, |c| c.cols())
    }

    /// Load selected columns from a CSV table.
    pub fn from_csv_columns(
        path: &Path,
        observation_columns: &[String],
        control_columns: &[String],
    ) -> Result<TimeSeriesDataset> {
        let (header, rows) = read_csv(path)?;
        if observation_columns.is_empty() {
            return Err(Error::Config("no observation columns selected".into()));
        }
        let index_of = |name: &String| -> Result<usize> {
            header.iter().position(|h| h == name).ok_or_else(|| Error::SchemaMismatch {
                message: format!("column {name:?} not in header {header:?}"),
            })
        };
        let obs_idx: Vec<usize> = observation_columns.iter().map(index_of).collect::<Result<_>>()?;
        let ctl_idx: Vec<usize> = control_columns.iter().map(index_of).collect::<Result<_>>()?;
        let t = rows.len();
        let mut observations = Mat::zeros(t, obs_idx.len());
        for (i, row) in rows.iter().enumerate() {
            for (j, &c) in obs_idx.iter().enumerate() {
                observations.set(i, j, row[c]);
            }
        }
        let controls = if ctl_idx.is_empty() {
            None
        } else {
            let mut m = Mat::zeros(t, ctl_idx.len());
            for (i, row) in rows.iter().enumerate() {
                for (j, &c) in ctl_idx.iter().enumerate() {
                    m.set(i, j, row[c]);
                }
            }
            Some(m)
        };
        Ok(TimeSeriesDataset {
            observations,
            controls,
            observation_names: observation_columns.to_vec(),
            control_names: control_columns.to_vec(),
        })
    }

    /// Standardise every column; returns the stats needed to map back.
    pub fn normalise(&self) -> Result<(TimeSeriesDataset, ColumnStats, Option<ColumnStats>)> {
        let obs_stats = ColumnStats::fit(&self.observations, &self.observation_names)?;
        let observations = obs_stats.apply(&self.observations);
        let (controls, control_stats) = match &self.controls {
            None => (None, None),
            Some(c) => {
                let stats = ColumnStats::fit(c, &self.control_names)?;
                (Some(stats.apply(c)), Some(stats))
            }
        };
        Ok((
            TimeSeriesDataset {
                observations,
                controls,
                observation_names: self.observation_names.clone(),
                control_names: self.control_names.clone(),
            },
            obs_stats,
            control_stats,
        ))
    }

    /// Split into `[0, t)` and `[t, T)`.
    pub fn split(&self, t: usize) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
        if t == 0 || t > self.t_len() {
            return Err(Error::Config(format!(
                "split point {} outside 1..={}",
                t,
                self.t_len()
            )));
        }
        let take = |rows: std::ops::Range<usize>| -> TimeSeriesDataset {
            let observations = Mat::from_fn(rows.len(), self.obs_dim(), 0.0, |i, j| {
                self.observations.at(rows.start + i, j)
            });
            let controls = self.controls.as_ref().map(|c| {
                Mat::from_fn(rows.len(), c.cols(), 0.0, |i, j| c.at(rows.start + i, j))
            });
            TimeSeriesDataset {
                observations,
                controls,
                observation_names: self.observation_names.clone(),
                control_names: self.control_names.clone(),
            }
        };
        Ok((take(0..t), take(t..self.t_len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> TimeSeriesDataset {
        TimeSeriesDataset {
            observations: Mat::from_vec(4, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]),
            controls: Some(Mat::from_vec(4, 1, vec![0.5, -0.5, 0.5, -0.5])),
            observation_names: vec!["y0".into(), "y1".into()],
            control_names: vec!["u0".into()],
        }
    }

    #[test]
    fn normalisation_uses_population_moments() {
        let (normed, stats, ctl_stats) = toy().normalise().unwrap();
        // mean 2.5, population sd of {1,2,3,4} = sqrt(1.25)
        assert_abs_diff_eq!(stats.means[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.sds[0], 1.25f64.sqrt(), epsilon = 1e-12);
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| normed.observations.at(i, j)).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
        assert!(ctl_stats.is_some());
    }

    #[test]
    fn normalisation_round_trips() {
        let data = toy();
        let (normed, stats, _) = data.normalise().unwrap();
        let back = stats.invert(&normed.observations);
        assert!(back.max_abs_diff(&data.observations) < 1e-12);
    }

    #[test]
    fn constant_column_is_rejected_by_name() {
        let data = TimeSeriesDataset {
            observations: Mat::from_vec(3, 2, vec![1.0, 7.0, 2.0, 7.0, 3.0, 7.0]),
            controls: None,
            observation_names: vec!["good".into(), "stuck".into()],
            control_names: vec![],
        };
        match data.normalise() {
            Err(Error::DegenerateColumn { name }) => assert_eq!(name, "stuck"),
            other => panic!("expected degenerate column, got {other:?}"),
        }
    }

    #[test]
    fn split_preserves_rows_and_controls() {
        let data = toy();
        let (train, test) = data.split(3).unwrap();
        assert_eq!(train.t_len(), 3);
        assert_eq!(test.t_len(), 1);
        assert_eq!(test.observations.at(0, 1), 40.0);
        assert_eq!(train.controls.as_ref().unwrap().rows(), 3);
        assert!(data.split(0).is_err());
        assert!(data.split(5).is_err());
    }

    #[test]
    fn csv_loading_selects_named_columns() {
        let dir = std::env::temp_dir().join("gpssm-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("table.csv");
        std::fs::write(&path, "t,u,y\n0,0.5,1.0\n1,-0.5,2.0\n").unwrap();
        let data =
            TimeSeriesDataset::from_csv_columns(&path, &["y".into()], &["u".into()]).unwrap();
        assert_eq!(data.obs_dim(), 1);
        assert_eq!(data.control_dim(), 1);
        assert_eq!(data.observations.at(1, 0), 2.0);
        assert_eq!(data.controls.as_ref().unwrap().at(0, 0), 0.5);
        let missing =
            TimeSeriesDataset::from_csv_columns(&path, &["nope".into()], &[]).unwrap_err();
        assert!(matches!(missing, Error::SchemaMismatch { .. }));
    }
}
