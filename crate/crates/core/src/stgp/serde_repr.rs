//! JSON representations for matrices and filter states.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::StgpState;

pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().cloned().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(ncols_if_empty, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, 0).map_err(serde::de::Error::custom)
    }
}

/// On-disk filter state: `sigma_root` is the row-major lower triangle.
#[derive(Serialize, Deserialize)]
pub struct StateRepr {
    pub mu: Vec<Vec<f64>>,
    pub sigma_root: Vec<f64>,
    pub now: f64,
    pub count: u64,
}

impl From<StgpState> for StateRepr {
    fn from(s: StgpState) -> Self {
        let n = s.sigma_root.nrows();
        let mut tri = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                tri.push(s.sigma_root[(i, j)]);
            }
        }
        StateRepr {
            mu: matrix_rows::to_rows(&s.mu),
            sigma_root: tri,
            now: s.now,
            count: s.count,
        }
    }
}

impl TryFrom<StateRepr> for StgpState {
    type Error = String;

    fn try_from(r: StateRepr) -> Result<Self, String> {
        let n = r.mu.len();
        if r.sigma_root.len() != n * (n + 1) / 2 {
            return Err(format!(
                "sigma_root has {} entries, expected {} for state dimension {n}",
                r.sigma_root.len(),
                n * (n + 1) / 2
            ));
        }
        let mu = matrix_rows::from_rows(&r.mu, 0)?;
        let mut root = DMatrix::<f64>::zeros(n, n);
        let mut it = r.sigma_root.iter();
        for i in 0..n {
            for j in 0..=i {
                root[(i, j)] = *it.next().unwrap();
            }
        }
        Ok(StgpState { mu, sigma_root: root, now: r.now, count: r.count })
    }
}
